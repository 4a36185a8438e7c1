//! Z-buffered rasterization with perspective-correct barycentrics. Coverage
//! and barycentric weights are plain values; attributes are interpolated on
//! the tape through fixed sparse operators so that gradients reach vertex
//! positions and normals but not the coverage decision.

use std::rc::Rc;

use crate::error::Warning;
use crate::geometry::{self, Vec3};
use crate::shape::Mesh;
use crate::tensor::{SparseRows, Tensor, Var};

use super::Camera;

/// Below this |det| of a triangle's UV edge matrix the tangent frame falls
/// back to an arbitrary basis.
const UV_DET_EPS: f64 = 1e-14;

/// Marks background pixels in [`FragmentBuffer::triangle`].
pub const BACKGROUND: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct FragmentBuffer {
    pub width: usize,
    pub height: usize,
    /// Per pixel (row-major): covering triangle or [`BACKGROUND`].
    pub triangle: Vec<u32>,
    /// Covered pixel indices in row-major order; fragment `i` is pixel
    /// `pixels[i]`.
    pub pixels: Rc<Vec<usize>>,
    pub bary: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    /// `[P x 2]` interpolated texture coordinates.
    pub uv: Tensor,
    pub warnings: Vec<Warning>,
    interp: Rc<SparseRows>,
    tangent_rows: Rc<SparseRows>,
    bitangent_rows: Rc<SparseRows>,
    /// Fallback frame directions for fragments on UV-degenerate triangles,
    /// `[P x 3]` each; zero rows elsewhere.
    seeds: Option<(Tensor, Tensor)>,
}

impl FragmentBuffer {
    pub fn n_covered(&self) -> usize {
        self.pixels.len()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.triangle.iter().map(|&t| t != BACKGROUND).collect()
    }

    /// Perspective-correct interpolation of per-vertex `[V x k]` attributes.
    pub fn interpolate<'t>(&self, attr: Var<'t>) -> Var<'t> {
        attr.sparse(self.interp.clone())
    }

    /// Unnormalized per-fragment tangent and bitangent from camera-space
    /// vertex positions: `dP/du` and `-dP/dv` of the covering triangle
    /// (texture rows run downwards, so `-v` points up the texture).
    pub fn frames<'t>(&self, positions: Var<'t>) -> (Var<'t>, Var<'t>) {
        let mut t = positions.sparse(self.tangent_rows.clone());
        let mut b = positions.sparse(self.bitangent_rows.clone());
        if let Some((ts, bs)) = &self.seeds {
            let tape = positions.tape();
            t = t + tape.constant(ts);
            b = b + tape.constant(bs);
        }
        (t, b)
    }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Per-triangle coefficients expressing `dP/du` and `-dP/dv` as linear
/// combinations of the three corner positions, or `None` when the UV
/// triangle is degenerate.
fn frame_coefficients(uv: [[f64; 2]; 3]) -> Option<([f64; 3], [f64; 3])> {
    let (du1, dv1) = (uv[1][0] - uv[0][0], uv[1][1] - uv[0][1]);
    let (du2, dv2) = (uv[2][0] - uv[0][0], uv[2][1] - uv[0][1]);
    let det = du1 * dv2 - du2 * dv1;
    if det.abs() < UV_DET_EPS {
        return None;
    }
    let (t1, t2) = (dv2 / det, -dv1 / det);
    let (b1, b2) = (du2 / det, -du1 / det);
    Some(([-(t1 + t2), t1, t2], [-(b1 + b2), b1, b2]))
}

/// Rasterizes camera-space `[V x 3]` positions. Triangles touching the near
/// plane are skipped.
pub fn rasterize(positions: &[f64], mesh: &Mesh, cam: &Camera) -> FragmentBuffer {
    let (w, h) = (cam.width, cam.height);
    let n_v = mesh.n_vertices();
    assert_eq!(positions.len(), 3 * n_v, "contract violation: position count");
    let pos = |i: usize| -> Vec3 { [positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]] };
    let screen: Vec<Option<[f64; 2]>> = (0..n_v).map(|i| cam.project_point(pos(i))).collect();

    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut tri_of = vec![BACKGROUND; w * h];
    let mut bary_of = vec![[0.0; 3]; w * h];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let (Some(s0), Some(s1), Some(s2)) = (screen[t[0]], screen[t[1]], screen[t[2]]) else {
            continue;
        };
        let area = edge(s0, s1, s2);
        if area.abs() < 1e-12 {
            continue;
        }
        let inv_z = [1.0 / pos(t[0])[2], 1.0 / pos(t[1])[2], 1.0 / pos(t[2])[2]];
        let xmin = s0[0].min(s1[0]).min(s2[0]).floor().max(0.0) as usize;
        let ymin = s0[1].min(s1[1]).min(s2[1]).floor().max(0.0) as usize;
        let xmax = (s0[0].max(s1[0]).max(s2[0]).ceil().max(0.0) as usize).min(w);
        let ymax = (s0[1].max(s1[1]).max(s2[1]).ceil().max(0.0) as usize).min(h);
        for py in ymin..ymax {
            for px in xmin..xmax {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let l = [edge(s1, s2, p) / area, edge(s2, s0, p) / area, edge(s0, s1, p) / area];
                if l.iter().any(|&x| x < 0.0) {
                    continue;
                }
                let q = [l[0] * inv_z[0], l[1] * inv_z[1], l[2] * inv_z[2]];
                let s = q[0] + q[1] + q[2];
                let z = 1.0 / s;
                let idx = py * w + px;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                    tri_of[idx] = ti as u32;
                    bary_of[idx] = [q[0] / s, q[1] / s, q[2] / s];
                }
            }
        }
    }

    let mut pixels = Vec::new();
    let mut bary = Vec::new();
    let mut depth = Vec::new();
    let mut uv = Vec::new();
    let mut interp = SparseRows::new(n_v);
    let mut tangent_rows = SparseRows::new(n_v);
    let mut bitangent_rows = SparseRows::new(n_v);
    let mut t_seed = Vec::new();
    let mut b_seed = Vec::new();
    let mut degenerate = 0usize;
    for idx in 0..w * h {
        let ti = tri_of[idx];
        if ti == BACKGROUND {
            continue;
        }
        let t = mesh.triangles[ti as usize];
        let b = bary_of[idx];
        pixels.push(idx);
        bary.push(b);
        depth.push(zbuf[idx]);
        let corner_uv = t.map(|i| mesh.uv[i]);
        uv.push((0..3).map(|k| b[k] * corner_uv[k][0]).sum::<f64>());
        uv.push((0..3).map(|k| b[k] * corner_uv[k][1]).sum::<f64>());
        interp.push_row((0..3).map(|k| (t[k], b[k])));
        match frame_coefficients(corner_uv) {
            Some((tc, bc)) => {
                tangent_rows.push_row((0..3).map(|k| (t[k], tc[k])));
                bitangent_rows.push_row((0..3).map(|k| (t[k], bc[k])));
                t_seed.extend([0.0; 3]);
                b_seed.extend([0.0; 3]);
            }
            None => {
                degenerate += 1;
                tangent_rows.push_row([]);
                bitangent_rows.push_row([]);
                let n = geometry::cross(
                    geometry::sub(pos(t[1]), pos(t[0])),
                    geometry::sub(pos(t[2]), pos(t[0])),
                );
                let axis = (0..3).min_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs())).unwrap();
                let mut e = [0.0; 3];
                e[axis] = 1.0;
                t_seed.extend(e);
                b_seed.extend(geometry::cross(geometry::normalized(n), e));
            }
        }
    }

    let mut warnings = Vec::new();
    if pixels.is_empty() {
        warnings.push(Warning::new("rasterize", "mesh is entirely off-screen"));
    }
    if degenerate > 0 {
        warnings.push(Warning::new(
            "rasterize",
            format!("{degenerate} fragments on UV-degenerate triangles use a fallback tangent frame"),
        ));
    }
    let p = pixels.len();
    FragmentBuffer {
        width: w,
        height: h,
        triangle: tri_of,
        pixels: Rc::new(pixels),
        bary,
        depth,
        uv: Tensor::new(vec![p, 2], uv),
        warnings,
        interp: Rc::new(interp),
        tangent_rows: Rc::new(tangent_rows),
        bitangent_rows: Rc::new(bitangent_rows),
        seeds: (degenerate > 0).then(|| (Tensor::new(vec![p, 3], t_seed), Tensor::new(vec![p, 3], b_seed))),
    }
}
