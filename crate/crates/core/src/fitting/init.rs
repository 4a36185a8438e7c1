//! Starting values: a similarity pose from landmarks and an averaged
//! random latent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry;
use crate::reflectance::{LatentW, PyramidGenerator};
use crate::render::Camera;
use crate::shape::{PcaShapeModel, N_LANDMARKS};

/// Eye outer corners, nose tip and mouth corners in the 68-point layout.
pub const POSE_LANDMARKS: [usize; 5] = [36, 45, 30, 48, 54];

/// Smallest-to-largest spread ratio below which a point set counts as
/// collinear.
const COLLINEAR_RATIO: f64 = 1e-6;

fn spread_ratio(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let (hi, lo) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
    if hi <= 0.0 {
        0.0
    } else {
        lo.max(0.0) / hi
    }
}

/// Camera whose in-plane rotation, scale and offset best align the mean
/// shape's pose landmarks with the detected ones under a weak-perspective
/// model. Out-of-plane rotation is left frontal; the fit recovers it.
pub fn init_camera(
    model: &PcaShapeModel,
    landmarks: &[[f64; 2]],
    width: usize,
    height: usize,
    focal: f64,
) -> Result<Camera> {
    if landmarks.len() != N_LANDMARKS {
        return Err(Error::contract("init_camera", format!("{} landmarks", landmarks.len())));
    }
    let target: Vec<[f64; 2]> = POSE_LANDMARKS.iter().map(|&k| landmarks[k]).collect();
    if spread_ratio(&target) < COLLINEAR_RATIO {
        return Err(Error::domain("init_camera", "pose landmarks are collinear"));
    }
    let flip = geometry::rot_x(std::f64::consts::PI);
    let mean = &model.mean;
    let src: Vec<[f64; 3]> = POSE_LANDMARKS
        .iter()
        .map(|&k| {
            let v = model.landmarks[k];
            geometry::mat_vec(&flip, [mean[3 * v], mean[3 * v + 1], mean[3 * v + 2]])
        })
        .collect();
    let src2: Vec<[f64; 2]> = src.iter().map(|p| [p[0], p[1]]).collect();
    if spread_ratio(&src2) < COLLINEAR_RATIO {
        return Err(Error::domain("init_camera", "model pose landmarks are collinear"));
    }

    let n = target.len() as f64;
    let centroid = |pts: &[[f64; 2]]| {
        let s = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let (ca, cb) = (centroid(&src2), centroid(&target));
    let (mut dot, mut crs, mut norm) = (0.0, 0.0, 0.0);
    for (a, b) in src2.iter().zip(&target) {
        let a = [a[0] - ca[0], a[1] - ca[1]];
        let b = [b[0] - cb[0], b[1] - cb[1]];
        dot += a[0] * b[0] + a[1] * b[1];
        crs += a[0] * b[1] - a[1] * b[0];
        norm += a[0] * a[0] + a[1] * a[1];
    }
    let theta = crs.atan2(dot);
    let s = dot.hypot(crs) / norm;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::domain("init_camera", "degenerate landmark scale"));
    }

    let r = geometry::mat_mul(&geometry::rot_z(theta), &flip);
    let centre3 = src.iter().fold([0.0; 3], |a, p| geometry::add(a, *p));
    let rc = geometry::mat_vec(&geometry::rot_z(theta), geometry::scale(centre3, 1.0 / n));
    let principal = [width as f64 / 2.0, height as f64 / 2.0];
    let depth = focal / s;
    let cam = Camera {
        rotation: geometry::rotation_log(&r),
        translation: [
            (cb[0] - principal[0]) / s - rc[0],
            (cb[1] - principal[1]) / s - rc[1],
            depth - rc[2],
        ],
        focal,
        principal,
        width,
        height,
    };
    cam.validate()?;
    Ok(cam)
}

/// Mean of `samples` standard-normal latents.
pub fn init_latent(gen: &PyramidGenerator, samples: usize, seed: u64) -> LatentW {
    let mut w = LatentW::zeros(gen.n_levels(), gen.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        for v in w.data.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += z;
        }
    }
    let inv = 1.0 / samples.max(1) as f64;
    w.data.iter_mut().for_each(|v| *v *= inv);
    w
}
