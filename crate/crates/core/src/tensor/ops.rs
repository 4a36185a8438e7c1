//! Forward kernels and vector-Jacobian products for every recorded op.
//!
//! Each op is a pure function of its input values; the tape relies on this
//! to replay a recorded graph with substituted leaves. Backward kernels
//! accumulate in ascending index order so results do not depend on scheduling.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::geometry;

use super::sparse::SparseRows;

pub(crate) type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    /// `max(0, x)`; the derivative at exactly 0 is taken as 0.
    Max0,
    Exp,
    Log,
    /// The derivative at exactly 0 is taken as 0.
    Abs,
    PowScalar(f64),
    Softplus,
    /// `scale * x + shift`
    Affine { scale: f64, shift: f64 },
    /// `max(c, x)`
    MaxScalar(f64),
    /// Clamp to [0, 1] with quadratic C1 blends of half-width `band` at both
    /// borders.
    SoftClamp01(f64),
    /// Only the upper blend of [`UnaryKind::SoftClamp01`].
    SoftCap1(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilters {
    pub out_ch: usize,
    pub in_ch: usize,
    pub size: usize,
    /// `[out_ch][in_ch][size][size]`, row-major.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: NodeId,
        b: NodeId,
    },
    Unary {
        kind: UnaryKind,
        a: NodeId,
    },
    Reduce {
        kind: ReduceKind,
        a: NodeId,
        map: Rc<Vec<usize>>,
        count: usize,
    },
    Norm2 {
        a: NodeId,
    },
    MatVec {
        m: NodeId,
        x: NodeId,
    },
    Normalize3 {
        a: NodeId,
    },
    Cross3 {
        a: NodeId,
        b: NodeId,
    },
    ExpandLast {
        a: NodeId,
        k: usize,
    },
    Sparse {
        a: NodeId,
        rows: Rc<SparseRows>,
    },
    Transpose2 {
        a: NodeId,
    },
    Reshape {
        a: NodeId,
    },
    Narrow {
        a: NodeId,
        offset: usize,
    },
    SliceLast {
        a: NodeId,
        start: usize,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Bilinear {
        tex: NodeId,
        uv: NodeId,
    },
    Upsample2x {
        a: NodeId,
    },
    Conv2d {
        img: NodeId,
        filters: Rc<ConvFilters>,
    },
    MaxPool2 {
        a: NodeId,
    },
    Rotate {
        points: NodeId,
        rvec: NodeId,
    },
    Project {
        points: NodeId,
        focal: f64,
        cx: f64,
        cy: f64,
        near: f64,
    },
    PowTensor {
        base: NodeId,
        exponent: NodeId,
    },
    Composite {
        values: NodeId,
        pixels: Rc<Vec<usize>>,
        background: [f64; 3],
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            Binary { a, b, .. } | Cross3 { a, b } => vec![*a, *b],
            MatVec { m, x } => vec![*m, *x],
            Bilinear { tex, uv } => vec![*tex, *uv],
            Rotate { points, rvec } => vec![*points, *rvec],
            PowTensor { base, exponent } => vec![*base, *exponent],
            Concat { parts } => parts.clone(),
            Unary { a, .. }
            | Reduce { a, .. }
            | Norm2 { a }
            | Normalize3 { a }
            | ExpandLast { a, .. }
            | Sparse { a, .. }
            | Transpose2 { a }
            | Reshape { a }
            | Narrow { a, .. }
            | SliceLast { a, .. }
            | Upsample2x { a }
            | MaxPool2 { a } => vec![*a],
            Conv2d { img, .. } => vec![*img],
            Project { points, .. } => vec![*points],
            Composite { values, .. } => vec![*values],
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
            },
            Unary { kind, .. } => match kind {
                UnaryKind::Max0 => "max0",
                UnaryKind::Exp => "exp",
                UnaryKind::Log => "log",
                UnaryKind::Abs => "abs",
                UnaryKind::PowScalar(_) => "pow_scalar",
                UnaryKind::Softplus => "softplus",
                UnaryKind::Affine { .. } => "affine",
                UnaryKind::MaxScalar(_) => "max_scalar",
                UnaryKind::SoftClamp01(_) => "soft_clamp01",
                UnaryKind::SoftCap1(_) => "soft_cap1",
            },
            Reduce { kind, .. } => match kind {
                ReduceKind::Sum => "sum",
                ReduceKind::Mean => "mean",
            },
            Norm2 { .. } => "norm2",
            MatVec { .. } => "matvec",
            Normalize3 { .. } => "normalize3",
            Cross3 { .. } => "cross3",
            ExpandLast { .. } => "expand_last",
            Sparse { .. } => "sparse_combine",
            Transpose2 { .. } => "transpose2",
            Reshape { .. } => "reshape",
            Narrow { .. } => "narrow",
            SliceLast { .. } => "slice_last",
            Concat { .. } => "concat",
            Bilinear { .. } => "bilinear_sample",
            Upsample2x { .. } => "upsample2x",
            Conv2d { .. } => "conv2d",
            MaxPool2 { .. } => "max_pool2",
            Rotate { .. } => "rotate",
            Project { .. } => "project",
            PowTensor { .. } => "pow_tensor",
            Composite { .. } => "composite",
        }
    }

    /// Evaluates the op on the given input values.
    pub(crate) fn forward(
        &self,
        vals: &[&[f64]],
        shapes: &[&[usize]],
        out_shape: &[usize],
    ) -> Result<Vec<f64>> {
        use Op::*;
        let n_out: usize = out_shape.iter().product();
        Ok(match self {
            Leaf => unreachable!("leaves carry their own values"),
            Binary { kind, .. } => binary_forward(*kind, vals[0], vals[1], n_out)?,
            Unary { kind, .. } => unary_forward(*kind, vals[0])?,
            Reduce { kind, map, count, .. } => {
                let mut out = vec![0.0; n_out];
                for (x, &o) in vals[0].iter().zip(map.iter()) {
                    out[o] += x;
                }
                if *kind == ReduceKind::Mean {
                    let inv = 1.0 / *count as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
                out
            }
            Norm2 { .. } => vec![vals[0].iter().map(|x| x * x).sum::<f64>().sqrt()],
            MatVec { .. } => {
                let (rows, cols) = (shapes[0][0], shapes[0][1]);
                let (m, x) = (vals[0], vals[1]);
                (0..rows)
                    .map(|r| {
                        m[r * cols..(r + 1) * cols]
                            .iter()
                            .zip(x)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect()
            }
            Normalize3 { .. } => {
                let a = vals[0];
                let mut out = vec![0.0; a.len()];
                for (row, chunk) in a.chunks_exact(3).enumerate() {
                    let n = (chunk[0] * chunk[0] + chunk[1] * chunk[1] + chunk[2] * chunk[2])
                        .sqrt();
                    if !(n >= NORMALIZE_EPS) {
                        return Err(Error::domain(
                            "normalize3",
                            format!("row {row} has norm {n:e} below {NORMALIZE_EPS:e}"),
                        ));
                    }
                    for k in 0..3 {
                        out[row * 3 + k] = chunk[k] / n;
                    }
                }
                out
            }
            Cross3 { .. } => {
                let mut out = vec![0.0; vals[0].len()];
                for ((o, a), b) in out
                    .chunks_exact_mut(3)
                    .zip(vals[0].chunks_exact(3))
                    .zip(vals[1].chunks_exact(3))
                {
                    let c = geometry::cross([a[0], a[1], a[2]], [b[0], b[1], b[2]]);
                    o.copy_from_slice(&c);
                }
                out
            }
            ExpandLast { k, .. } => {
                let mut out = Vec::with_capacity(n_out);
                for &x in vals[0] {
                    out.extend(std::iter::repeat_n(x, *k));
                }
                out
            }
            Sparse { rows, .. } => {
                let a = vals[0];
                let width = a.len() / rows.n_in();
                let mut out = vec![0.0; rows.n_out() * width];
                for r in 0..rows.n_out() {
                    let dst = &mut out[r * width..(r + 1) * width];
                    for (c, w) in rows.row(r) {
                        for (d, s) in dst.iter_mut().zip(&a[c * width..(c + 1) * width]) {
                            *d += w * s;
                        }
                    }
                }
                out
            }
            Transpose2 { .. } => {
                let (p, q) = (shapes[0][0], shapes[0][1]);
                let a = vals[0];
                let mut out = vec![0.0; p * q];
                for i in 0..p {
                    for j in 0..q {
                        out[j * p + i] = a[i * q + j];
                    }
                }
                out
            }
            Reshape { .. } => vals[0].to_vec(),
            Narrow { offset, .. } => vals[0][*offset..*offset + n_out].to_vec(),
            SliceLast { start, .. } => {
                let k = *shapes[0].last().unwrap();
                let len = *out_shape.last().unwrap();
                let mut out = Vec::with_capacity(n_out);
                for row in vals[0].chunks_exact(k) {
                    out.extend_from_slice(&row[*start..*start + len]);
                }
                out
            }
            Concat { .. } => vals.iter().flat_map(|v| v.iter().copied()).collect(),
            Bilinear { .. } => bilinear_forward(vals[0], shapes[0], vals[1]),
            Upsample2x { .. } => {
                let s = shapes[0];
                upsample2x_values(vals[0], s[0], s[1], s[2])
            }
            Conv2d { filters, .. } => {
                let s = shapes[0];
                conv2d_forward(vals[0], s[1], s[2], filters)
            }
            MaxPool2 { .. } => {
                let s = shapes[0];
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / 2, w / 2);
                let a = vals[0];
                let mut out = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let (idx, _) = pool_argmax(a, ch, y, x, h, w);
                            out[(ch * oh + y) * ow + x] = a[idx];
                        }
                    }
                }
                out
            }
            Rotate { .. } => {
                let r = geometry::rotation_matrix([vals[1][0], vals[1][1], vals[1][2]]);
                let mut out = vec![0.0; vals[0].len()];
                for (o, p) in out.chunks_exact_mut(3).zip(vals[0].chunks_exact(3)) {
                    o.copy_from_slice(&geometry::mat_vec(&r, [p[0], p[1], p[2]]));
                }
                out
            }
            Project {
                focal,
                cx,
                cy,
                near,
                ..
            } => {
                let mut out = Vec::with_capacity(n_out);
                for (row, p) in vals[0].chunks_exact(3).enumerate() {
                    if !(p[2] > *near) {
                        return Err(Error::domain(
                            "project",
                            format!("point {row} has depth {} at or behind z = {near}", p[2]),
                        ));
                    }
                    out.push(focal * p[0] / p[2] + cx);
                    out.push(focal * p[1] / p[2] + cy);
                }
                out
            }
            PowTensor { .. } => {
                let e = vals[1][0];
                let mut out = Vec::with_capacity(n_out);
                for &b in vals[0] {
                    if b < 0.0 {
                        return Err(Error::domain("pow_tensor", format!("negative base {b}")));
                    }
                    out.push(if b == 0.0 { 0.0 } else { b.powf(e) });
                }
                out
            }
            Composite {
                pixels, background, ..
            } => {
                let plane = out_shape[1] * out_shape[2];
                let mut out = vec![0.0; 3 * plane];
                for c in 0..3 {
                    out[c * plane..(c + 1) * plane].fill(background[c]);
                }
                for (p, &pix) in pixels.iter().enumerate() {
                    for c in 0..3 {
                        out[c * plane + pix] = vals[0][p * 3 + c];
                    }
                }
                out
            }
        })
    }

    /// Vector-Jacobian product: returns one gradient per input, or `None`
    /// where `needs[i]` is false.
    pub(crate) fn backward(
        &self,
        vals: &[&[f64]],
        shapes: &[&[usize]],
        out: &[f64],
        g: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        use Op::*;
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        match self {
            Leaf => vec![],
            Binary { kind, .. } => {
                let (a, b) = (vals[0], vals[1]);
                let (la, lb) = (a.len(), b.len());
                let mut ga = want(0).then(|| vec![0.0; la]);
                let mut gb = want(1).then(|| vec![0.0; lb]);
                for (i, &gi) in g.iter().enumerate() {
                    let (ia, ib) = (i % la, i % lb);
                    let (da, db) = match kind {
                        BinaryKind::Add => (gi, gi),
                        BinaryKind::Sub => (gi, -gi),
                        BinaryKind::Mul => (gi * b[ib], gi * a[ia]),
                        BinaryKind::Div => (gi / b[ib], -gi * a[ia] / (b[ib] * b[ib])),
                    };
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += db;
                    }
                }
                vec![ga, gb]
            }
            Unary { kind, .. } => {
                let a = vals[0];
                vec![Some(
                    a.iter()
                        .zip(out)
                        .zip(g)
                        .map(|((&x, &y), &gi)| gi * unary_derivative(*kind, x, y))
                        .collect(),
                )]
            }
            Reduce { kind, map, count, .. } => {
                let scale = if *kind == ReduceKind::Mean {
                    1.0 / *count as f64
                } else {
                    1.0
                };
                vec![Some(map.iter().map(|&o| g[o] * scale).collect())]
            }
            Norm2 { .. } => {
                let n = out[0];
                vec![Some(if n > 0.0 {
                    vals[0].iter().map(|x| g[0] * x / n).collect()
                } else {
                    vec![0.0; vals[0].len()]
                })]
            }
            MatVec { .. } => {
                let (rows, cols) = (shapes[0][0], shapes[0][1]);
                let (m, x) = (vals[0], vals[1]);
                let gm = want(0).then(|| {
                    let mut gm = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for (d, xv) in gm[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                            *d = g[r] * xv;
                        }
                    }
                    gm
                });
                let gx = want(1).then(|| {
                    let mut gx = vec![0.0; cols];
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (d, mv) in gx.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
                                *d += gr * mv;
                            }
                        }
                    }
                    gx
                });
                vec![gm, gx]
            }
            Normalize3 { .. } => {
                let a = vals[0];
                let mut ga = vec![0.0; a.len()];
                for row in 0..a.len() / 3 {
                    let x = &a[row * 3..row * 3 + 3];
                    let y = &out[row * 3..row * 3 + 3];
                    let gr = &g[row * 3..row * 3 + 3];
                    let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                    let yg = y[0] * gr[0] + y[1] * gr[1] + y[2] * gr[2];
                    for k in 0..3 {
                        ga[row * 3 + k] = (gr[k] - y[k] * yg) / n;
                    }
                }
                vec![Some(ga)]
            }
            Cross3 { .. } => {
                let (a, b) = (vals[0], vals[1]);
                let mut ga = want(0).then(|| vec![0.0; a.len()]);
                let mut gb = want(1).then(|| vec![0.0; b.len()]);
                for row in 0..a.len() / 3 {
                    let r = row * 3..row * 3 + 3;
                    let av = [a[r.start], a[r.start + 1], a[r.start + 2]];
                    let bv = [b[r.start], b[r.start + 1], b[r.start + 2]];
                    let gv = [g[r.start], g[r.start + 1], g[r.start + 2]];
                    if let Some(ga) = ga.as_mut() {
                        ga[r.clone()].copy_from_slice(&geometry::cross(bv, gv));
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[r].copy_from_slice(&geometry::cross(gv, av));
                    }
                }
                vec![ga, gb]
            }
            ExpandLast { k, .. } => vec![Some(g.chunks_exact(*k).map(|c| c.iter().sum()).collect())],
            Sparse { rows, .. } => {
                let width = vals[0].len() / rows.n_in();
                let mut ga = vec![0.0; vals[0].len()];
                for r in 0..rows.n_out() {
                    let src = &g[r * width..(r + 1) * width];
                    for (c, w) in rows.row(r) {
                        for (d, s) in ga[c * width..(c + 1) * width].iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
                vec![Some(ga)]
            }
            Transpose2 { .. } => {
                let (p, q) = (shapes[0][0], shapes[0][1]);
                let mut ga = vec![0.0; p * q];
                for i in 0..p {
                    for j in 0..q {
                        ga[i * q + j] = g[j * p + i];
                    }
                }
                vec![Some(ga)]
            }
            Reshape { .. } => vec![Some(g.to_vec())],
            Narrow { offset, .. } => {
                let mut ga = vec![0.0; vals[0].len()];
                ga[*offset..*offset + g.len()].copy_from_slice(g);
                vec![Some(ga)]
            }
            SliceLast { start, .. } => {
                let k = *shapes[0].last().unwrap();
                let rows = vals[0].len() / k;
                let len = g.len() / rows;
                let mut ga = vec![0.0; vals[0].len()];
                for r in 0..rows {
                    ga[r * k + start..r * k + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![Some(ga)]
            }
            Concat { .. } => {
                let mut offset = 0;
                vals.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let part = want(i).then(|| g[offset..offset + v.len()].to_vec());
                        offset += v.len();
                        part
                    })
                    .collect()
            }
            Bilinear { .. } => {
                let (gt, guv) = bilinear_backward(vals[0], shapes[0], vals[1], g, want(0), want(1));
                vec![gt, guv]
            }
            Upsample2x { .. } => {
                let s = shapes[0];
                vec![Some(upsample2x_transpose(g, s[0], s[1], s[2]))]
            }
            Conv2d { filters, .. } => {
                let s = shapes[0];
                vec![Some(conv2d_backward_input(g, s[1], s[2], filters))]
            }
            MaxPool2 { .. } => {
                let s = shapes[0];
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / 2, w / 2);
                let a = vals[0];
                let mut ga = vec![0.0; a.len()];
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let (idx, _) = pool_argmax(a, ch, y, x, h, w);
                            ga[idx] += g[(ch * oh + y) * ow + x];
                        }
                    }
                }
                vec![Some(ga)]
            }
            Rotate { .. } => {
                let v = [vals[1][0], vals[1][1], vals[1][2]];
                let r = geometry::rotation_matrix(v);
                let gp = want(0).then(|| {
                    let mut gp = vec![0.0; vals[0].len()];
                    for (d, gr) in gp.chunks_exact_mut(3).zip(g.chunks_exact(3)) {
                        d.copy_from_slice(&geometry::mat_t_vec(&r, [gr[0], gr[1], gr[2]]));
                    }
                    gp
                });
                let gv = want(1).then(|| {
                    let jac = geometry::rotation_jacobian(v);
                    let mut gv = vec![0.0; 3];
                    for (p, gr) in vals[0].chunks_exact(3).zip(g.chunks_exact(3)) {
                        let p = [p[0], p[1], p[2]];
                        let gr = [gr[0], gr[1], gr[2]];
                        for (i, j) in jac.iter().enumerate() {
                            gv[i] += geometry::dot(gr, geometry::mat_vec(j, p));
                        }
                    }
                    gv
                });
                vec![gp, gv]
            }
            Project { focal, .. } => {
                let mut gp = vec![0.0; vals[0].len()];
                for (row, p) in vals[0].chunks_exact(3).enumerate() {
                    let (gu, gv) = (g[row * 2], g[row * 2 + 1]);
                    let iz = 1.0 / p[2];
                    gp[row * 3] = gu * focal * iz;
                    gp[row * 3 + 1] = gv * focal * iz;
                    gp[row * 3 + 2] = -(gu * p[0] + gv * p[1]) * focal * iz * iz;
                }
                vec![Some(gp)]
            }
            PowTensor { .. } => {
                let e = vals[1][0];
                let gb = want(0).then(|| {
                    vals[0]
                        .iter()
                        .zip(g)
                        .map(|(&b, &gi)| if b > 0.0 { gi * e * b.powf(e - 1.0) } else { 0.0 })
                        .collect()
                });
                let ge = want(1).then(|| {
                    let s: f64 = vals[0]
                        .iter()
                        .zip(out)
                        .zip(g)
                        .map(|((&b, &y), &gi)| if b > 0.0 { gi * y * b.ln() } else { 0.0 })
                        .sum();
                    vec![s]
                });
                vec![gb, ge]
            }
            Composite { pixels, .. } => {
                let plane = g.len() / 3;
                let mut gv = vec![0.0; vals[0].len()];
                for (p, &pix) in pixels.iter().enumerate() {
                    for c in 0..3 {
                        gv[p * 3 + c] = g[c * plane + pix];
                    }
                }
                vec![Some(gv)]
            }
        }
    }
}

/// Minimum row norm accepted by `normalize3`.
pub const NORMALIZE_EPS: f64 = 1e-12;

fn binary_forward(kind: BinaryKind, a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let (la, lb) = (a.len(), b.len());
    let mut out = Vec::with_capacity(n);
    match kind {
        BinaryKind::Add => out.extend((0..n).map(|i| a[i % la] + b[i % lb])),
        BinaryKind::Sub => out.extend((0..n).map(|i| a[i % la] - b[i % lb])),
        BinaryKind::Mul => out.extend((0..n).map(|i| a[i % la] * b[i % lb])),
        BinaryKind::Div => {
            for i in 0..n {
                let d = b[i % lb];
                if d == 0.0 {
                    return Err(Error::domain("div", format!("division by zero at element {i}")));
                }
                out.push(a[i % la] / d);
            }
        }
    }
    Ok(out)
}

fn unary_forward(kind: UnaryKind, a: &[f64]) -> Result<Vec<f64>> {
    match kind {
        UnaryKind::Log => {
            if let Some(i) = a.iter().position(|&x| !(x > 0.0)) {
                return Err(Error::domain(
                    "log",
                    format!("non-positive input {} at element {i}", a[i]),
                ));
            }
        }
        UnaryKind::PowScalar(s) if s.fract() != 0.0 => {
            if let Some(i) = a.iter().position(|&x| x < 0.0) {
                return Err(Error::domain(
                    "pow_scalar",
                    format!("negative base {} with fractional exponent {s} at element {i}", a[i]),
                ));
            }
        }
        _ => {}
    }
    Ok(a.iter().map(|&x| unary_value(kind, x)).collect())
}

pub(crate) fn unary_value(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Max0 => x.max(0.0),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Abs => x.abs(),
        UnaryKind::PowScalar(s) => x.powf(s),
        UnaryKind::Softplus => softplus(x),
        UnaryKind::Affine { scale, shift } => scale * x + shift,
        UnaryKind::MaxScalar(c) => x.max(c),
        UnaryKind::SoftClamp01(band) => soft_clamp01(x, band),
        UnaryKind::SoftCap1(band) => soft_cap1(x, band),
    }
}

fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Max0 => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Exp => y,
        UnaryKind::Log => 1.0 / x,
        UnaryKind::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryKind::PowScalar(s) => {
            if s == 0.0 {
                0.0
            } else {
                s * x.powf(s - 1.0)
            }
        }
        UnaryKind::Softplus => 1.0 / (1.0 + (-x).exp()),
        UnaryKind::Affine { scale, .. } => scale,
        UnaryKind::MaxScalar(c) => {
            if x > c {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::SoftClamp01(band) => soft_clamp01_derivative(x, band),
        UnaryKind::SoftCap1(band) => soft_cap1_derivative(x, band),
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn soft_low(x: f64, band: f64) -> f64 {
    if x <= -band {
        0.0
    } else if x < band {
        (x + band) * (x + band) / (4.0 * band)
    } else {
        x
    }
}

fn soft_low_derivative(x: f64, band: f64) -> f64 {
    if x <= -band {
        0.0
    } else if x < band {
        (x + band) / (2.0 * band)
    } else {
        1.0
    }
}

pub fn soft_cap1(x: f64, band: f64) -> f64 {
    1.0 - soft_low(1.0 - x, band)
}

fn soft_cap1_derivative(x: f64, band: f64) -> f64 {
    soft_low_derivative(1.0 - x, band)
}

pub fn soft_clamp01(x: f64, band: f64) -> f64 {
    if x < 0.5 {
        soft_low(x, band)
    } else {
        soft_cap1(x, band)
    }
}

fn soft_clamp01_derivative(x: f64, band: f64) -> f64 {
    if x < 0.5 {
        soft_low_derivative(x, band)
    } else {
        soft_cap1_derivative(x, band)
    }
}

/// Bilinear lookup geometry for one coordinate axis: lower index, upper
/// index, fractional weight, and d(frac)/d(coordinate).
fn bilinear_axis(t: f64, size: usize) -> (usize, usize, f64, f64) {
    let x = t * size as f64 - 0.5;
    let max = (size - 1) as f64;
    if size == 1 {
        return (0, 0, 0.0, 0.0);
    }
    let inside = x > 0.0 && x < max;
    let xc = x.clamp(0.0, max);
    let i0 = (xc.floor() as usize).min(size - 2);
    let f = xc - i0 as f64;
    (i0, i0 + 1, f, if inside { size as f64 } else { 0.0 })
}

fn bilinear_forward(tex: &[f64], shape: &[usize], uv: &[f64]) -> Vec<f64> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let mut out = Vec::with_capacity(uv.len() / 2 * c);
    for p in uv.chunks_exact(2) {
        let (x0, x1, fx, _) = bilinear_axis(p[0], w);
        let (y0, y1, fy, _) = bilinear_axis(p[1], h);
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        for ch in 0..c {
            let t = &tex[ch * plane..(ch + 1) * plane];
            out.push(
                w00 * t[y0 * w + x0] + w10 * t[y0 * w + x1] + w01 * t[y1 * w + x0] + w11 * t[y1 * w + x1],
            );
        }
    }
    out
}

/// The four texel weights of a bilinear lookup, in the order
/// (x0,y0), (x1,y0), (x0,y1), (x1,y1).
pub fn bilinear_weights(u: f64, v: f64, w: usize, h: usize) -> [(usize, f64); 4] {
    let (x0, x1, fx, _) = bilinear_axis(u, w);
    let (y0, y1, fy, _) = bilinear_axis(v, h);
    [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ]
}

fn bilinear_backward(
    tex: &[f64],
    shape: &[usize],
    uv: &[f64],
    g: &[f64],
    want_tex: bool,
    want_uv: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let mut gt = want_tex.then(|| vec![0.0; tex.len()]);
    let mut guv = want_uv.then(|| vec![0.0; uv.len()]);
    for (pi, p) in uv.chunks_exact(2).enumerate() {
        let (x0, x1, fx, dfx) = bilinear_axis(p[0], w);
        let (y0, y1, fy, dfy) = bilinear_axis(p[1], h);
        let gp = &g[pi * c..(pi + 1) * c];
        if let Some(gt) = gt.as_mut() {
            let ws = [
                (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
                (y0 * w + x1, fx * (1.0 - fy)),
                (y1 * w + x0, (1.0 - fx) * fy),
                (y1 * w + x1, fx * fy),
            ];
            for (ch, &gc) in gp.iter().enumerate() {
                for &(idx, wt) in &ws {
                    gt[ch * plane + idx] += wt * gc;
                }
            }
        }
        if let Some(guv) = guv.as_mut() {
            let (mut du, mut dv) = (0.0, 0.0);
            for (ch, &gc) in gp.iter().enumerate() {
                let t = &tex[ch * plane..(ch + 1) * plane];
                let (t00, t10, t01, t11) = (t[y0 * w + x0], t[y0 * w + x1], t[y1 * w + x0], t[y1 * w + x1]);
                du += gc * ((1.0 - fy) * (t10 - t00) + fy * (t11 - t01));
                dv += gc * ((1.0 - fx) * (t01 - t00) + fx * (t11 - t10));
            }
            guv[pi * 2] = du * dfx;
            guv[pi * 2 + 1] = dv * dfy;
        }
    }
    (gt, guv)
}

/// Two taps per output sample along one axis: `(index, weight)` pairs.
fn upsample_taps(n: usize) -> Vec<[(usize, f64); 2]> {
    (0..2 * n)
        .map(|o| {
            let i = o / 2;
            let j = if o % 2 == 0 {
                i.saturating_sub(1)
            } else {
                (i + 1).min(n - 1)
            };
            [(i, 0.75), (j, 0.25)]
        })
        .collect()
}

/// Bilinear 2x upsampling of a `[c x h x w]` stack with half-pixel centres
/// and edge clamping.
pub fn upsample2x_values(a: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &a[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, tyy) in ty.iter().enumerate() {
            for (ox, txx) in tx.iter().enumerate() {
                let mut s = 0.0;
                for &(iy, wy) in tyy {
                    for &(ix, wx) in txx {
                        s += wy * wx * src[iy * w + ix];
                    }
                }
                dst[oy * ow + ox] = s;
            }
        }
    }
    out
}

fn upsample2x_transpose(g: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut ga = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = &g[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut ga[ch * h * w..(ch + 1) * h * w];
        for (oy, tyy) in ty.iter().enumerate() {
            for (ox, txx) in tx.iter().enumerate() {
                let gv = src[oy * ow + ox];
                for &(iy, wy) in tyy {
                    for &(ix, wx) in txx {
                        dst[iy * w + ix] += wy * wx * gv;
                    }
                }
            }
        }
    }
    ga
}

/// 2x2 box downsampling of a `[c x h x w]` stack (h, w even).
pub fn downsample2x_values(a: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ch * h * w;
                let s = a[base + 2 * y * w + 2 * x]
                    + a[base + 2 * y * w + 2 * x + 1]
                    + a[base + (2 * y + 1) * w + 2 * x]
                    + a[base + (2 * y + 1) * w + 2 * x + 1];
                out[(ch * oh + y) * ow + x] = 0.25 * s;
            }
        }
    }
    out
}

fn pool_argmax(a: &[f64], ch: usize, y: usize, x: usize, h: usize, w: usize) -> (usize, f64) {
    let base = ch * h * w;
    let cands = [
        base + 2 * y * w + 2 * x,
        base + 2 * y * w + 2 * x + 1,
        base + (2 * y + 1) * w + 2 * x,
        base + (2 * y + 1) * w + 2 * x + 1,
    ];
    let mut best = (cands[0], a[cands[0]]);
    for &c in &cands[1..] {
        if a[c] > best.1 {
            best = (c, a[c]);
        }
    }
    best
}

/// Valid output range along one axis for tap offset `d` with padding `p`:
/// output positions `o` where `o + d - p` lies inside `[0, n)`.
fn tap_range(n: usize, d: usize, p: usize) -> std::ops::Range<usize> {
    let lo = p.saturating_sub(d);
    let hi = (n + p).saturating_sub(d).min(n);
    lo..hi.max(lo)
}

fn conv2d_forward(img: &[f64], h: usize, w: usize, f: &ConvFilters) -> Vec<f64> {
    let (k, p) = (f.size, f.size / 2);
    let plane = h * w;
    let mut out = vec![0.0; f.out_ch * plane];
    for o in 0..f.out_ch {
        let dst = &mut out[o * plane..(o + 1) * plane];
        for c in 0..f.in_ch {
            let src = &img[c * plane..(c + 1) * plane];
            for dy in 0..k {
                let ys = tap_range(h, dy, p);
                for dx in 0..k {
                    let wt = f.weights[((o * f.in_ch + c) * k + dy) * k + dx];
                    if wt == 0.0 {
                        continue;
                    }
                    let xs = tap_range(w, dx, p);
                    for y in ys.clone() {
                        let sy = y + dy - p;
                        let drow = &mut dst[y * w + xs.start..y * w + xs.end];
                        let srow = &src[sy * w + xs.start + dx - p..sy * w + xs.end + dx - p];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward_input(g: &[f64], h: usize, w: usize, f: &ConvFilters) -> Vec<f64> {
    let (k, p) = (f.size, f.size / 2);
    let plane = h * w;
    let mut gi = vec![0.0; f.in_ch * plane];
    for o in 0..f.out_ch {
        let src = &g[o * plane..(o + 1) * plane];
        for c in 0..f.in_ch {
            let dst = &mut gi[c * plane..(c + 1) * plane];
            for dy in 0..k {
                let ys = tap_range(h, dy, p);
                for dx in 0..k {
                    let wt = f.weights[((o * f.in_ch + c) * k + dy) * k + dx];
                    if wt == 0.0 {
                        continue;
                    }
                    let xs = tap_range(w, dx, p);
                    for y in ys.clone() {
                        let sy = y + dy - p;
                        let grow = &src[y * w + xs.start..y * w + xs.end];
                        let drow = &mut dst[sy * w + xs.start + dx - p..sy * w + xs.end + dx - p];
                        for (d, s) in drow.iter_mut().zip(grow) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
    gi
}
