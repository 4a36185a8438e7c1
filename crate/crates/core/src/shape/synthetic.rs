//! Procedural shape model: a head-like deformed icosphere with seeded,
//! smooth, orthonormal identity and expression bases. The face looks down
//! +Z with +Y up.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::geometry::{self, Vec3};

use super::{PcaShapeModel, N_LANDMARKS};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticShapeConfig {
    pub subdivisions: usize,
    pub n_id: usize,
    pub n_expr: usize,
    pub seed: u64,
}

impl Default for SyntheticShapeConfig {
    fn default() -> Self {
        SyntheticShapeConfig {
            subdivisions: 4,
            n_id: 10,
            n_expr: 5,
            seed: 7,
        }
    }
}

/// Unit icosphere with outward counter-clockwise winding.
pub fn icosphere(subdivisions: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(geometry::normalized)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(geometry::normalized(geometry::add(verts[a], verts[b])));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Lambert azimuthal equal-area map of a unit direction, centred on +Z:
/// the front hemisphere fills the disc of radius `0.5 / sqrt(2)` around
/// the texture centre, image rows running top (+Y) to bottom.
pub fn sphere_uv(d: Vec3) -> [f64; 2] {
    let theta = d[2].clamp(-1.0, 1.0).acos();
    let rxy = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if rxy < 1e-12 {
        return if d[2] > 0.0 { [0.5, 0.5] } else { [0.5, 1.0] };
    }
    let r = 0.5 * (theta / 2.0).sin();
    [0.5 + r * d[0] / rxy, 0.5 - r * d[1] / rxy]
}

/// Head-like deformation of a unit direction.
pub fn head_surface(d: Vec3) -> Vec3 {
    let [x, y, z] = d;
    let mut p = [0.8 * x, y, 0.9 * z];
    if z > 0.0 {
        let nose = 0.2 * (-(x * x) / 0.03 - (y + 0.05).powi(2) / 0.08).exp();
        let brow = 0.05 * (-(y - 0.35).powi(2) / 0.01 - x * x / 0.2).exp();
        let chin = 0.06 * (-(y + 0.75).powi(2) / 0.02 - x * x / 0.06).exp();
        p[2] += z * (nose + brow + chin);
    }
    p
}

fn smooth_field(rng: &mut ChaCha8Rng, dirs: &[Vec3], focus: Option<(Vec3, f64)>) -> Vec<f64> {
    const BUMPS: usize = 6;
    const WIDTH: f64 = 0.55;
    let mut bumps = Vec::with_capacity(BUMPS);
    for _ in 0..BUMPS {
        let c: Vec3 = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample::<f64, _>(StandardNormal).abs(),
        ];
        let a: Vec3 = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        bumps.push((geometry::normalized(c), a));
    }
    let mut out = Vec::with_capacity(dirs.len() * 3);
    for &d in dirs {
        let mut acc = [0.0; 3];
        for (c, a) in &bumps {
            let dist2 = geometry::norm(geometry::sub(d, *c)).powi(2);
            acc = geometry::add(acc, geometry::scale(*a, (-dist2 / (2.0 * WIDTH * WIDTH)).exp()));
        }
        if let Some((centre, w)) = focus {
            let dist2 = geometry::norm(geometry::sub(d, centre)).powi(2);
            acc = geometry::scale(acc, (-dist2 / (2.0 * w * w)).exp());
        }
        out.extend(acc);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Removes the components along each (orthonormal) vector of `against`,
/// twice for numerical safety, then normalizes.
fn orthonormalize(v: &mut [f64], against: &[Vec<f64>]) {
    for _ in 0..2 {
        for u in against {
            let c = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
    }
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Farthest-point sampling over `candidates`, starting from `first`.
fn farthest_points(points: &[Vec3], candidates: &[usize], first: usize, n: usize) -> Vec<usize> {
    let mut chosen = vec![first];
    let mut best: Vec<f64> = candidates
        .iter()
        .map(|&c| geometry::norm(geometry::sub(points[c], points[first])))
        .collect();
    while chosen.len() < n {
        let (i, _) = best
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let pick = candidates[i];
        chosen.push(pick);
        for (b, &c) in best.iter_mut().zip(candidates) {
            *b = b.min(geometry::norm(geometry::sub(points[c], points[pick])));
        }
    }
    chosen
}

pub fn synthetic_shape_model(cfg: &SyntheticShapeConfig) -> Result<PcaShapeModel> {
    let (dirs, triangles) = icosphere(cfg.subdivisions);
    let v = dirs.len();
    let mean_pts: Vec<Vec3> = dirs.iter().map(|&d| head_surface(d)).collect();
    let uv: Vec<[f64; 2]> = dirs.iter().map(|&d| sphere_uv(d)).collect();
    let mean: Vec<f64> = mean_pts.iter().flatten().copied().collect();

    // Rigid motions and uniform scale are the camera's job; keep them out of
    // the bases.
    let mut nuisance: Vec<Vec<f64>> = Vec::new();
    for axis in 0..3 {
        let mut t = vec![0.0; 3 * v];
        (0..v).for_each(|i| t[3 * i + axis] = 1.0);
        let mut w = [0.0; 3];
        w[axis] = 1.0;
        let r: Vec<f64> = mean_pts.iter().flat_map(|&p| geometry::cross(w, p)).collect();
        nuisance.push(t);
        nuisance.push(r);
    }
    nuisance.push(mean.clone());
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for mut n in nuisance {
        orthonormalize(&mut n, &ortho);
        ortho.push(n);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mouth = geometry::normalized([0.0, -0.45, 0.89]);
    let mut columns = Vec::new();
    for k in 0..cfg.n_id + cfg.n_expr {
        let focus = (k >= cfg.n_id).then_some((mouth, 0.4));
        let mut f = smooth_field(&mut rng, &dirs, focus);
        orthonormalize(&mut f, &ortho);
        ortho.push(f.clone());
        columns.push(f);
    }

    let to_row_major = |cols: &[Vec<f64>]| {
        let k = cols.len();
        let mut out = vec![0.0; 3 * v * k];
        for (j, c) in cols.iter().enumerate() {
            for (r, &x) in c.iter().enumerate() {
                out[r * k + j] = x;
            }
        }
        out
    };
    let scale = (3 * v) as f64;
    let id_eig = (0..cfg.n_id).map(|k| (0.04 * 0.75f64.powi(k as i32)).powi(2) * scale).collect();
    let expr_eig = (0..cfg.n_expr).map(|k| (0.03 * 0.75f64.powi(k as i32)).powi(2) * scale).collect();

    let nose = (0..v)
        .max_by(|&a, &b| mean_pts[a][2].total_cmp(&mean_pts[b][2]))
        .expect("non-empty mesh");
    let front: Vec<usize> = (0..v).filter(|&i| dirs[i][2] > 0.3).collect();
    let landmarks = farthest_points(&mean_pts, &front, nose, N_LANDMARKS);

    PcaShapeModel::new(
        mean,
        to_row_major(&columns[..cfg.n_id]),
        id_eig,
        to_row_major(&columns[cfg.n_id..]),
        expr_eig,
        triangles,
        uv,
        landmarks,
    )
}
