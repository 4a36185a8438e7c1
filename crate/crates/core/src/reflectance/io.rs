//! `FMGN` generator container and PNG reflectance maps.
//!
//! Generator layout after the magic and version: u32 R, L, D; then per level
//! u32 r, mean (7 r^2 f64), variance (D f64), basis (7 r^2 * D f64,
//! row-major).
//!
//! Maps are three 16-bit PNGs (`albedo.png`, `specular.png`,
//! `normals.png` holding `(n + 1) / 2`) and a `maps.txt` sidecar.

use std::path::Path;
use std::rc::Rc;

use super::{PyramidGenerator, PyramidLevel, ReflectanceMaps, CHANNELS};
use crate::error::{Error, Result};
use crate::io::binary::{Reader, Writer};
use crate::io::{load_png16, save_png16};

const MAGIC: &[u8; 4] = b"FMGN";
const VERSION: u32 = 1;

pub fn save_generator(gen: &PyramidGenerator, path: &Path) -> Result<()> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(gen.resolution as u32);
    w.u32(gen.levels.len() as u32);
    w.u32(gen.dim as u32);
    for l in &gen.levels {
        w.u32(l.resolution as u32);
        w.f64s(&l.mean);
        w.f64s(&l.variance);
        w.f64s(&l.basis);
    }
    w.finish(path)
}

pub fn load_generator(path: &Path) -> Result<PyramidGenerator> {
    let (mut r, version) = Reader::open(path, "generator", MAGIC)?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let res = r.u32()? as usize;
    let n_levels = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let expected = PyramidGenerator::level_resolutions(res, n_levels)
        .map_err(|e| Error::format("generator", path, e.to_string()))?;
    let mut levels = Vec::with_capacity(n_levels);
    for &want in &expected {
        let lr = r.u32()? as usize;
        if lr != want {
            return Err(r.fail(format!("level resolution {lr}, expected {want}")));
        }
        let size = CHANNELS * lr * lr;
        let mean = r.f64s_exact(size, "level mean")?;
        let variance = r.f64s_exact(dim, "level variance")?;
        let basis = r.f64s_exact(size * dim, "level basis")?;
        levels.push(PyramidLevel {
            resolution: lr,
            mean: Rc::new(mean),
            basis: Rc::new(basis),
            variance,
        });
    }
    r.finish()?;
    Ok(PyramidGenerator {
        resolution: res,
        dim,
        levels,
        warnings: Vec::new(),
    })
}

pub fn save_maps_png(maps: &ReflectanceMaps, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let r = maps.resolution;
    save_png16(&dir.join("albedo.png"), 3, r, r, &maps.albedo)?;
    save_png16(&dir.join("specular.png"), 1, r, r, &maps.specular)?;
    let enc: Vec<f64> = maps.normals.iter().map(|n| 0.5 * (n + 1.0)).collect();
    save_png16(&dir.join("normals.png"), 3, r, r, &enc)?;
    let sidecar = dir.join("maps.txt");
    std::fs::write(
        &sidecar,
        format!("colorspace = linear\nresolution = {r}\nnormals = tangent, (n + 1) / 2\n"),
    )
    .map_err(|e| Error::io(&sidecar, e))
}

fn load_plane(path: &Path, channels: usize, res: Option<usize>) -> Result<(usize, Vec<f64>)> {
    let (c, w, h, data) = load_png16(path)?;
    if c != channels || w != h || res.is_some_and(|r| r != w) {
        return Err(Error::format("reflectance maps", path, format!("{c} channels at {w}x{h}")));
    }
    Ok((w, data))
}

/// Loads maps written by [`save_maps_png`]. Decoded normals are
/// renormalized, since quantization leaves them slightly off unit length.
pub fn load_maps_png(dir: &Path) -> Result<ReflectanceMaps> {
    let (r, albedo) = load_plane(&dir.join("albedo.png"), 3, None)?;
    let (_, specular) = load_plane(&dir.join("specular.png"), 1, Some(r))?;
    let npath = dir.join("normals.png");
    let (_, enc) = load_plane(&npath, 3, Some(r))?;
    let n = r * r;
    let mut normals = vec![0.0; 3 * n];
    for i in 0..n {
        let v = [0, 1, 2].map(|c| 2.0 * enc[c * n + i] - 1.0);
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if len < 1e-6 || v[2] <= 0.0 {
            return Err(Error::format("reflectance maps", &npath, format!("texel {i} is not a front-facing normal")));
        }
        for c in 0..3 {
            normals[c * n + i] = v[c] / len;
        }
    }
    ReflectanceMaps::new(r, albedo, specular, normals)
}
