//! Loss terms of the inversion and tuning objectives.

use std::rc::Rc;

use super::features::{FeatureBank, TargetFeatures};
use crate::error::{Error, Result};
use crate::tensor::{SparseRows, Tape, Tensor, Var};

/// L2 norm of all landmark offsets, divided by the image diagonal.
pub fn loss_landmark<'t>(pred: Var<'t>, target: &[[f64; 2]], diagonal: f64) -> Var<'t> {
    let t = pred
        .tape()
        .constant(&Tensor::new(vec![target.len(), 2], target.iter().flatten().copied().collect()));
    (pred - t).norm2().scale(1.0 / diagonal)
}

/// Mean absolute difference over the channels of covered pixels. `mask`
/// is `[H x W]` with 1 on covered pixels and 0 elsewhere.
pub fn loss_photometric<'t>(target: &Tensor, rendered: Var<'t>, mask: &Tensor) -> Result<Var<'t>> {
    let covered = mask.data().iter().filter(|&&m| m != 0.0).count();
    if covered == 0 {
        return Err(Error::domain("loss_photometric", "no covered pixels; the fit has left the image"));
    }
    let tape = rendered.tape();
    let diff = (rendered - tape.constant(target)).abs() * tape.constant(mask);
    Ok(diff.sum().scale(1.0 / (3 * covered) as f64))
}

/// `1 - cos` between the pooled embeddings of target and rendering.
pub fn loss_identity<'t>(target: &TargetFeatures, rendered_last: Var<'t>) -> Result<Var<'t>> {
    let e = FeatureBank::embedding(rendered_last);
    let side = Tape::new();
    let t_hat = unit(side.constant(&target.embedding))?.value();
    // 1 - cos written as half the squared distance of unit vectors, so the
    // gradient at a perfect match is exactly zero
    let d = unit(e)? - e.tape().constant(&t_hat);
    Ok(d.square().sum().scale(0.5))
}

fn unit(v: Var<'_>) -> Result<Var<'_>> {
    let n = v.norm2();
    if n.item() == 0.0 {
        return Err(Error::domain("loss_identity", "zero-norm embedding"));
    }
    let k = v.value().numel();
    v.div(n.reshape(&[1]).expand_last(k))
}

/// Per-level L2 distance of activations, each divided by the level's
/// element count, summed over levels.
pub fn loss_perceptual<'t>(target: &TargetFeatures, rendered: &[Var<'t>]) -> Result<Var<'t>> {
    if rendered.len() != target.levels.len() {
        return Err(Error::contract("loss_perceptual", "level count mismatch"));
    }
    let tape = rendered[0].tape();
    let mut total = tape.scalar(0.0);
    for (f, t) in rendered.iter().zip(&target.levels) {
        total = total + (*f - tape.constant(t)).norm2().scale(1.0 / t.numel() as f64);
    }
    Ok(total)
}

/// Mean squared deviation of the latent from its initialization.
pub fn loss_w_reg<'t>(w: Var<'t>, w_init: &Tensor) -> Var<'t> {
    (w - w.tape().constant(w_init)).square().mean()
}

fn mirror_rows(c: usize, r: usize) -> Rc<SparseRows> {
    let idx: Vec<usize> = (0..c * r * r)
        .map(|i| {
            let (plane, x) = (i / r, i % r);
            plane * r + (r - 1 - x)
        })
        .collect();
    Rc::new(SparseRows::gather(&idx, c * r * r))
}

/// Mean absolute difference between a `[3 x R x R]` albedo and its
/// left-right mirror in texture space.
pub fn loss_flip<'t>(albedo: Var<'t>) -> Result<Var<'t>> {
    let s = albedo.shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::contract("loss_flip", format!("albedo {s:?} is not C x R x R")));
    }
    let flat = albedo.reshape(&[s[0] * s[1] * s[2]]);
    let mirrored = flat.sparse(mirror_rows(s[0], s[1]));
    Ok((flat - mirrored).abs().mean())
}

/// Floor on `r + g + b` when forming chromaticities.
pub const CHROMA_EPS: f64 = 1e-4;

fn chromaticity<'t>(albedo: Var<'t>) -> Result<Var<'t>> {
    let s = albedo.shape();
    let n = s[1] * s[2];
    // [3 x n] -> [n x 3] so the channel sum broadcasts per texel
    let rows = albedo.reshape(&[3, n]).transpose2();
    let sum = rows.sum_last().max_scalar(CHROMA_EPS).expand_last(3);
    rows.div(sum)
}

/// Mean absolute chromaticity change against the tuning-start snapshot.
pub fn loss_chroma<'t>(albedo: Var<'t>, initial: &Tensor) -> Result<Var<'t>> {
    let s = albedo.shape();
    if s.len() != 3 || s[0] != 3 || s != initial.shape() {
        return Err(Error::contract("loss_chroma", "albedo and snapshot shapes differ"));
    }
    let c = chromaticity(albedo)?;
    let c0 = chromaticity(albedo.tape().constant(initial))?;
    Ok((c - c0).abs().mean())
}
