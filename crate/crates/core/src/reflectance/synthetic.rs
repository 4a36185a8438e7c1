//! Seeded procedural faces in the unwrap of [`crate::shape::synthetic`].
//!
//! Each face is a skin tone with low-frequency variation, freckles, lips,
//! brows, eyes and hair, a specular map with a brighter T-zone, and a
//! detail normal map. Corpus-wide statistics are calibrated afterwards:
//! diffuse albedo to a mean of 0.24 and std of 0.12, encoded normals to a
//! mean of 0.61.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ReflectanceMaps, SkinToneTarget};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::io::srgb_to_linear;

pub const ALBEDO_MEAN: f64 = 0.24;
pub const ALBEDO_STD: f64 = 0.12;
pub const NORMAL_MEAN: f64 = 0.61;
pub const NORMAL_STD: f64 = 0.24;

/// Monk skin-tone scale swatches, sRGB, lightest first.
pub const MONK_SRGB: [[u8; 3]; 10] = [
    [0xf6, 0xed, 0xe4],
    [0xf3, 0xe7, 0xdb],
    [0xf7, 0xea, 0xd0],
    [0xea, 0xda, 0xba],
    [0xd7, 0xbd, 0x96],
    [0xa0, 0x7e, 0x56],
    [0x82, 0x5c, 0x43],
    [0x60, 0x41, 0x34],
    [0x3a, 0x31, 0x2a],
    [0x29, 0x24, 0x20],
];

/// Linear RGB of Monk bin `label` (1-based).
pub fn monk_linear(label: u8) -> Result<[f64; 3]> {
    if !(1..=10).contains(&label) {
        return Err(Error::contract("monk_linear", format!("label {label} outside 1..=10")));
    }
    Ok(MONK_SRGB[label as usize - 1].map(|c| srgb_to_linear(c as f64 / 255.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorpusConfig {
    pub resolution: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            resolution: 128,
            n_samples: 96,
            seed: 11,
        }
    }
}

/// Unit direction whose [`crate::shape::synthetic::sphere_uv`] is `(u, v)`.
pub fn texel_direction(u: f64, v: f64) -> Vec3 {
    let (du, dv) = (u - 0.5, 0.5 - v);
    let r = (du * du + dv * dv).sqrt();
    if r < 1e-12 {
        return [0.0, 0.0, 1.0];
    }
    let theta = 2.0 * (2.0 * r).min(1.0).asin();
    let s = theta.sin();
    [s * du / r, s * dv / r, theta.cos()]
}

/// Smooth value noise in [-1, 1] on an `res x res` grid at `freq` cells.
fn value_noise(rng: &mut ChaCha8Rng, res: usize, freq: usize) -> Vec<f64> {
    let g = freq + 1;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fade = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(res * res);
    for y in 0..res {
        let fy = (y as f64 + 0.5) / res as f64 * freq as f64;
        let (iy, ty) = ((fy as usize).min(freq - 1), fade(fy - (fy as usize).min(freq - 1) as f64));
        for x in 0..res {
            let fx = (x as f64 + 0.5) / res as f64 * freq as f64;
            let (ix, tx) = ((fx as usize).min(freq - 1), fade(fx - (fx as usize).min(freq - 1) as f64));
            let at = |a: usize, b: usize| grid[(iy + a) * g + ix + b];
            let top = at(0, 0) + tx * (at(0, 1) - at(0, 0));
            let bottom = at(1, 0) + tx * (at(1, 1) - at(1, 0));
            out.push(top + ty * (bottom - top));
        }
    }
    out
}

fn octaves(rng: &mut ChaCha8Rng, res: usize, base: usize, n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; res * res];
    let mut amp = 1.0;
    for o in 0..n {
        let layer = value_noise(rng, res, base << o);
        acc.iter_mut().zip(&layer).for_each(|(a, l)| *a += amp * l);
        amp *= 0.5;
    }
    acc
}

/// 1 inside the ellipse, 0 outside, with a soft rim.
fn ellipse(d: Vec3, centre: (f64, f64), radii: (f64, f64)) -> f64 {
    if d[2] <= 0.0 {
        return 0.0;
    }
    let rho = (((d[0] - centre.0) / radii.0).powi(2) + ((d[1] - centre.1) / radii.1).powi(2)).sqrt();
    1.0 - ((rho - 0.75) / 0.25).clamp(0.0, 1.0)
}

fn mirror(d: Vec3) -> Vec3 {
    [d[0].abs(), d[1], d[2]]
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + t * (b[c] - a[c]))
}

struct RawFace {
    albedo: Vec<f64>,
    specular: Vec<f64>,
    /// Tangent-plane detail noise, `2 x R x R`.
    detail: Vec<f64>,
}

fn raw_face(rng: &mut ChaCha8Rng, res: usize, tone: [f64; 3]) -> RawFace {
    let n = res * res;
    let tone = tone.map(|c| c * (1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal)));
    // Features keep their brightness order relative to the skin at any tone.
    let hair: [f64; 3] = {
        let h = rng.random_range(0.1..0.5);
        [h * tone[0], 0.75 * h * tone[1], 0.55 * h * tone[2]]
    };
    let iris: [f64; 3] = {
        let k = rng.random_range(0.1..0.4);
        if rng.random_bool(0.3) {
            [0.5 * k * tone[0], 0.7 * k * tone[1], k * tone[2]]
        } else {
            [k * tone[0], 0.7 * k * tone[1], 0.45 * k * tone[2]]
        }
    };
    let sclera = [0.75, 0.72, 0.7].map(|w: f64| w.max(1.1 * tone.iter().cloned().fold(0.0, f64::max)));
    let freckle_density = rng.random_range(0.3..1.0);
    let base_spec = rng.random_range(0.18..0.3);

    let tone_noise = octaves(rng, res, 3, 3);
    let freckles = value_noise(rng, res, (res / 3).max(2));
    let spec_noise = octaves(rng, res, 8, 2);
    let dx = octaves(rng, res, 8, 3);
    let dy = octaves(rng, res, 8, 3);

    let mut albedo = vec![0.0; 3 * n];
    let mut specular = vec![0.0; n];
    for y in 0..res {
        for x in 0..res {
            let i = y * res + x;
            let d = texel_direction((x as f64 + 0.5) / res as f64, (y as f64 + 0.5) / res as f64);
            let m = mirror(d);

            // Fixed shading profile peaking on the forehead, so skin texels rank
            // alike across faces; the random part stays small.
            let forehead = if d[2] > 0.0 { (-(d[0].powi(2) + (d[1] - 0.55).powi(2)) / 0.045).exp() } else { 0.0 };
            let vary = 1.0 + 0.06 * forehead + 0.01 * tone_noise[i];
            let mut c = tone.map(|t| t * vary);
            let cheek = ellipse(m, (0.35, -0.1), (0.18, 0.15));
            c = [c[0] * (1.0 + 0.1 * cheek), c[1] * (1.0 - 0.08 * cheek), c[2] * (1.0 - 0.08 * cheek)];
            if freckles[i] > 0.55 {
                let f = 1.0 - 0.15 * freckle_density * ((freckles[i] - 0.55) / 0.45).min(1.0);
                c = c.map(|v| v * f);
            }
            let lips = ellipse(d, (0.0, -0.45), (0.17, 0.055));
            c = lerp3(c, [0.75 * tone[0], 0.42 * tone[1], 0.42 * tone[2]], lips);
            let brow = ellipse(m, (0.3, 0.36), (0.14, 0.035));
            c = lerp3(c, hair, brow);
            let eye = ellipse(m, (0.3, 0.22), (0.1, 0.045));
            c = lerp3(c, sclera, eye);
            let pupil = ellipse(m, (0.3, 0.22), (0.035, 0.035));
            c = lerp3(c, iris, pupil);
            let scalp = (((0.25 - d[2]) / 0.08).max((d[1] - 0.72) / 0.08) + 0.5).clamp(0.0, 1.0);
            c = lerp3(c, hair, scalp);
            for ch in 0..3 {
                albedo[ch * n + i] = c[ch];
            }

            let tzone = ellipse(d, (0.0, 0.5), (0.22, 0.2)).max(ellipse(d, (0.0, 0.0), (0.08, 0.3)));
            let mut s = base_spec + 0.15 * tzone + 0.03 * spec_noise[i];
            s += 0.3 * eye - 0.05 * lips;
            s = s + (0.1 - s) * scalp;
            specular[i] = s;
        }
    }
    let mut detail = dx;
    detail.extend(dy);
    RawFace {
        albedo,
        specular,
        detail,
    }
}

const TEXEL_MIN: f64 = 0.01;
const TEXEL_MAX: f64 = 0.99;
/// Detail noise amplitude in the tangent plane.
const DETAIL_SIGMA: f64 = 0.15;

fn clamp_texel(v: f64) -> f64 {
    v.clamp(TEXEL_MIN, TEXEL_MAX)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

fn detail_normals(detail: &[f64], n: usize, bias: f64) -> Vec<f64> {
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let v = [bias + DETAIL_SIGMA * detail[i], bias + DETAIL_SIGMA * detail[n + i], 1.0];
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        for c in 0..3 {
            out[c * n + i] = v[c] / len;
        }
    }
    out
}

fn encoded_mean(details: &[Vec<f64>], n: usize, bias: f64) -> f64 {
    let total: f64 = details
        .iter()
        .map(|d| detail_normals(d, n, bias).iter().map(|v| 0.5 * (v + 1.0)).sum::<f64>())
        .sum();
    total / (details.len() * 3 * n) as f64
}

/// Builds `cfg.n_samples` faces and calibrates the corpus statistics.
pub fn synthetic_corpus(cfg: &CorpusConfig) -> Result<Vec<ReflectanceMaps>> {
    if cfg.n_samples == 0 || cfg.resolution < 8 {
        return Err(Error::contract("synthetic_corpus", "need at least one sample at 8x8 or more"));
    }
    let (res, n) = (cfg.resolution, cfg.resolution * cfg.resolution);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let palette: Vec<[f64; 3]> = (1..=10).map(|l| monk_linear(l).unwrap()).collect();
    let mut faces: Vec<RawFace> = (0..cfg.n_samples)
        .map(|_| {
            let t: f64 = rng.random_range(0.0..9.0);
            let k = t.floor() as usize;
            let tone = lerp3(palette[k], palette[(k + 1).min(9)], t - k as f64);
            raw_face(&mut rng, res, tone)
        })
        .collect();

    // Clamping moves the moments a little, so the affine map is refined.
    for f in &mut faces {
        f.albedo.iter_mut().for_each(|v| *v = clamp_texel(*v));
    }
    for _ in 0..8 {
        let all: Vec<f64> = faces.iter().flat_map(|f| f.albedo.iter().copied()).collect();
        let (m, s) = mean_std(&all);
        let gain = ALBEDO_STD / s;
        for f in &mut faces {
            f.albedo
                .iter_mut()
                .for_each(|v| *v = clamp_texel(ALBEDO_MEAN + gain * (*v - m)));
        }
    }

    let details: Vec<Vec<f64>> = faces.iter().map(|f| f.detail.clone()).collect();
    let (mut lo, mut hi) = (-0.6, 0.3);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if encoded_mean(&details, n, mid) < NORMAL_MEAN {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let bias = 0.5 * (lo + hi);

    faces
        .into_iter()
        .map(|f| {
            let normals = detail_normals(&f.detail, n, bias);
            let specular = f.specular.into_iter().map(clamp_texel).collect();
            ReflectanceMaps::new(res, f.albedo, specular, normals)
        })
        .collect()
}

/// Seeded reference face with the skin tone of Monk bin `label`, used as a
/// histogram-matching target. Its albedo is not recalibrated.
pub fn skin_tone_target(label: u8, resolution: usize, seed: u64) -> Result<SkinToneTarget> {
    let tone = monk_linear(label)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((label as u64) << 32));
    let face = raw_face(&mut rng, resolution, tone);
    SkinToneTarget::new(face.albedo.into_iter().map(clamp_texel).collect(), label)
}
