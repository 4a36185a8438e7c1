//! `FMFS` fit checkpoints and the loss-trace CSV.
//!
//! Checkpoint layout after the magic and version, all little-endian:
//!
//! ```text
//! u32 stage (0 initialized, 1 inverted, 2 tuned)
//! u32 L, u32 D, f64[] w, f64[] w_init
//! f64[] p_s, f64[] p_e
//! f64[] offsets (all L levels, frozen rows zero)
//! u32 has_albedo_snapshot, [f64[] albedo]
//! u32 n_images, then per image:
//!   f64 x3 rotation, f64 x3 translation, f64 focal, f64 x2 principal,
//!   u32 width, u32 height,
//!   f64 ambient_raw, u32 n_lights, per light f64 x3 direction,
//!   f64 x3 intensity_raw; f64 log_shininess,
//!   u32 has_expression, [f64[] expression]
//! two traces (inversion, tuning): u64 count, then per record u64 iter
//!   and 10 f64 (nine components in CSV column order, then the total)
//! ```
//!
//! `f64[]` is a u64 length followed by the values.

use std::fmt::Write as _;
use std::path::Path;

use super::{FitState, ImageParams, LossRecord, Stage};
use crate::error::{Error, Result};
use crate::io::binary::{Reader, Writer};
use crate::reflectance::{LatentW, TuneOffsets};
use crate::render::{Camera, Light, Lighting};
use crate::shape::ShapeCoeffs;

const MAGIC: &[u8; 4] = b"FMFS";
const VERSION: u32 = 1;

fn stage_code(s: Stage) -> u32 {
    match s {
        Stage::Initialized => 0,
        Stage::Inverted => 1,
        Stage::Tuned => 2,
    }
}

fn write_trace(w: &mut Writer, trace: &[LossRecord]) {
    w.u64(trace.len() as u64);
    for r in trace {
        w.u64(r.iter as u64);
        for c in r.components() {
            w.f64(c);
        }
        w.f64(r.total);
    }
}

pub fn save_state(state: &FitState, path: &Path) -> Result<()> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(stage_code(state.stage));
    w.u32(state.w.levels as u32);
    w.u32(state.w.dim as u32);
    w.f64s(&state.w.data);
    w.f64s(&state.w_init.data);
    w.f64s(&state.coeffs.p_s);
    w.f64s(&state.coeffs.p_e);
    w.f64s(&state.offsets.data);
    match &state.albedo_init {
        Some(a) => {
            w.u32(1);
            w.f64s(a);
        }
        None => w.u32(0),
    }
    w.u32(state.per_image.len() as u32);
    for p in &state.per_image {
        let c = &p.camera;
        c.rotation.iter().chain(&c.translation).for_each(|v| w.f64(*v));
        w.f64(c.focal);
        c.principal.iter().for_each(|v| w.f64(*v));
        w.u32(c.width as u32);
        w.u32(c.height as u32);
        let l = &p.lighting;
        w.f64(l.ambient_raw);
        w.u32(l.lights.len() as u32);
        for light in &l.lights {
            light.direction.iter().chain(&light.intensity_raw).for_each(|v| w.f64(*v));
        }
        w.f64(l.log_shininess);
        match &p.expression {
            Some(e) => {
                w.u32(1);
                w.f64s(e);
            }
            None => w.u32(0),
        }
    }
    write_trace(&mut w, &state.inversion_trace);
    write_trace(&mut w, &state.tuning_trace);
    w.finish(path)
}

fn read3(r: &mut Reader) -> Result<[f64; 3]> {
    Ok([r.f64()?, r.f64()?, r.f64()?])
}

fn read_trace(r: &mut Reader) -> Result<Vec<LossRecord>> {
    let n = r.u64()? as usize;
    if n > 1 << 24 {
        return Err(r.fail(format!("trace of {n} records")));
    }
    (0..n)
        .map(|_| {
            let iter = r.u64()? as usize;
            let mut v = [0.0; 10];
            for x in v.iter_mut() {
                *x = r.f64()?;
            }
            Ok(LossRecord {
                iter,
                landmark: v[0],
                photometric: v[1],
                identity: v[2],
                perceptual: v[3],
                w_reg: v[4],
                shape_reg: v[5],
                expr_reg: v[6],
                flip: v[7],
                chroma: v[8],
                total: v[9],
            })
        })
        .collect()
}

pub fn load_state(path: &Path) -> Result<FitState> {
    let (mut r, version) = Reader::open(path, "fit state", MAGIC)?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let stage = match r.u32()? {
        0 => Stage::Initialized,
        1 => Stage::Inverted,
        2 => Stage::Tuned,
        s => return Err(r.fail(format!("unknown stage {s}"))),
    };
    let levels = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let n_w = levels * dim;
    let w = r.f64s_exact(n_w, "latent")?;
    let w_init = r.f64s_exact(n_w, "initial latent")?;
    let p_s = r.f64s()?;
    let p_e = r.f64s()?;
    let offsets = r.f64s_exact(n_w, "offsets")?;
    let albedo_init = match r.u32()? {
        0 => None,
        1 => Some(r.f64s()?),
        f => return Err(r.fail(format!("bad snapshot flag {f}"))),
    };
    let n_images = r.u32()? as usize;
    if n_images == 0 || n_images > 1 << 16 {
        return Err(r.fail(format!("{n_images} images")));
    }
    let mut per_image = Vec::with_capacity(n_images);
    for _ in 0..n_images {
        let rotation = read3(&mut r)?;
        let translation = read3(&mut r)?;
        let focal = r.f64()?;
        let principal = [r.f64()?, r.f64()?];
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let camera = Camera {
            rotation,
            translation,
            focal,
            principal,
            width,
            height,
        };
        camera.validate().map_err(|e| r.fail(e.to_string()))?;
        let ambient_raw = r.f64()?;
        let n_lights = r.u32()? as usize;
        if n_lights == 0 || n_lights > 1024 {
            return Err(r.fail(format!("{n_lights} lights")));
        }
        let mut lights = Vec::with_capacity(n_lights);
        for _ in 0..n_lights {
            lights.push(Light {
                direction: read3(&mut r)?,
                intensity_raw: read3(&mut r)?,
            });
        }
        let log_shininess = r.f64()?;
        let expression = match r.u32()? {
            0 => None,
            1 => Some(r.f64s_exact(p_e.len(), "expression")?),
            f => return Err(r.fail(format!("bad expression flag {f}"))),
        };
        per_image.push(ImageParams {
            camera,
            lighting: Lighting {
                ambient_raw,
                lights,
                log_shininess,
            },
            expression,
        });
    }
    if per_image.iter().any(|p| p.expression.is_some() != per_image[0].expression.is_some()) {
        return Err(r.fail("mixed shared and per-image expressions"));
    }
    let inversion_trace = read_trace(&mut r)?;
    let tuning_trace = read_trace(&mut r)?;
    r.finish()?;

    let mut tune = TuneOffsets::zeros(levels, dim);
    for l in 0..levels {
        let row = &offsets[l * dim..(l + 1) * dim];
        if row.iter().any(|&v| v != 0.0) {
            tune.set_row(l, row).map_err(|e| Error::format("fit state", path, e.to_string()))?;
        }
    }
    Ok(FitState {
        w: LatentW { levels, dim, data: w },
        w_init: LatentW {
            levels,
            dim,
            data: w_init,
        },
        coeffs: ShapeCoeffs { p_s, p_e },
        per_image,
        offsets: tune,
        albedo_init,
        stage,
        inversion_trace,
        tuning_trace,
    })
}

/// One row per record: stage, iteration, the nine loss terms, total.
pub fn write_loss_csv(state: &FitState, path: &Path) -> Result<()> {
    let mut s = String::from("stage,iter");
    for c in LossRecord::COLUMNS {
        s.push(',');
        s.push_str(c);
    }
    s.push_str(",total\n");
    for (stage, trace) in [("inversion", &state.inversion_trace), ("tuning", &state.tuning_trace)] {
        for r in trace {
            write!(s, "{stage},{}", r.iter).unwrap();
            for c in r.components() {
                write!(s, ",{c:e}").unwrap();
            }
            writeln!(s, ",{:e}", r.total).unwrap();
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
