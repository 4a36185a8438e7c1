//! Reflectance maps and the latent-to-reflectance generator.
//!
//! The generator is a linear Laplacian pyramid. Each level owns one row of
//! the latent matrix; that row drives all seven channels (diffuse RGB,
//! specular, tangent-space normal XYZ) through a single basis fitted by PCA
//! over the concatenated channels, so the modalities stay coupled per level.

mod augment;
mod io;
mod latent;
pub mod synthetic;

use std::ops::Range;
use std::rc::Rc;

use nalgebra::{DMatrix, SymmetricEigen};

pub use augment::{
    augment_albedo, blend_albedo, histogram_match, region_mean, skin_mask, MaskParams, SkinToneTarget, UvRect,
};
pub use io::{load_generator, load_maps_png, save_generator, save_maps_png};
pub use latent::{latent_pca, LatentComponents, DEFAULT_SAMPLES as LATENT_PCA_SAMPLES};

use crate::error::{Error, Result, Warning};
use crate::render::MapVars;
use crate::tensor::{downsample2x_values, upsample2x_values, Tape, Tensor, Var};

/// Channels per texel: diffuse RGB, specular, normal XYZ.
pub const CHANNELS: usize = 7;

/// Half-width of the C1 blend that keeps albedos inside [0, 1].
pub const SQUASH_BAND: f64 = 0.01;

/// Smallest normal z-component before renormalization.
pub const MIN_NORMAL_Z: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectanceMaps {
    pub resolution: usize,
    /// `3 x R x R`, channel-major.
    pub albedo: Vec<f64>,
    /// `R x R`
    pub specular: Vec<f64>,
    /// `3 x R x R` tangent-space unit normals.
    pub normals: Vec<f64>,
}

impl ReflectanceMaps {
    pub fn new(resolution: usize, albedo: Vec<f64>, specular: Vec<f64>, normals: Vec<f64>) -> Result<Self> {
        let n = resolution * resolution;
        if albedo.len() != 3 * n || specular.len() != n || normals.len() != 3 * n {
            return Err(Error::contract("reflectance maps", "channel sizes do not match the resolution"));
        }
        Ok(ReflectanceMaps {
            resolution,
            albedo,
            specular,
            normals,
        })
    }

    /// Checks albedo range and normal unit length (to `tol`) with z > 0.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.albedo.iter().chain(&self.specular).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract("reflectance maps", "albedo outside [0, 1]"));
        }
        let n = self.resolution * self.resolution;
        for i in 0..n {
            let (x, y, z) = (self.normals[i], self.normals[n + i], self.normals[2 * n + i]);
            if ((x * x + y * y + z * z).sqrt() - 1.0).abs() > tol || z <= 0.0 {
                return Err(Error::contract("reflectance maps", format!("texel {i} normal is not unit with z > 0")));
            }
        }
        Ok(())
    }

    /// All seven channels stacked, `7 x R x R`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(CHANNELS * self.resolution * self.resolution);
        out.extend_from_slice(&self.albedo);
        out.extend_from_slice(&self.specular);
        out.extend_from_slice(&self.normals);
        out
    }

    pub fn vars<'t>(&self, tape: &'t Tape) -> MapVars<'t> {
        let r = self.resolution;
        MapVars {
            albedo: tape.constant(&Tensor::new(vec![3, r, r], self.albedo.clone())),
            specular: tape.constant(&Tensor::new(vec![1, r, r], self.specular.clone())),
            normals: tape.constant(&Tensor::new(vec![3, r, r], self.normals.clone())),
        }
    }
}

/// Latent matrix, one `dim`-row per pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentW {
    pub levels: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl LatentW {
    pub fn zeros(levels: usize, dim: usize) -> Self {
        LatentW {
            levels,
            dim,
            data: vec![0.0; levels * dim],
        }
    }

    pub fn row(&self, level: usize) -> &[f64] {
        &self.data[level * self.dim..(level + 1) * self.dim]
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::new(vec![self.levels, self.dim], self.data.clone())
    }
}

/// Levels open to tuning: the middle half, `floor(L/4) .. floor(3L/4)`.
pub fn tunable_levels(levels: usize) -> Range<usize> {
    levels / 4..(3 * levels) / 4
}

/// Additive latent deltas for the tunable levels. Writes to frozen levels
/// are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneOffsets {
    pub levels: usize,
    pub dim: usize,
    /// `L x D`; rows outside [`tunable_levels`] stay zero.
    pub data: Vec<f64>,
}

impl TuneOffsets {
    pub fn zeros(levels: usize, dim: usize) -> Self {
        TuneOffsets {
            levels,
            dim,
            data: vec![0.0; levels * dim],
        }
    }

    pub fn band(&self) -> Range<usize> {
        tunable_levels(self.levels)
    }

    pub fn row(&self, level: usize) -> &[f64] {
        &self.data[level * self.dim..(level + 1) * self.dim]
    }

    pub fn set_row(&mut self, level: usize, values: &[f64]) -> Result<()> {
        if !self.band().contains(&level) {
            return Err(Error::contract(
                "tune offsets",
                format!("level {level} is frozen; tunable levels are {:?}", self.band()),
            ));
        }
        if values.len() != self.dim {
            return Err(Error::contract("tune offsets", "row length mismatch"));
        }
        self.data[level * self.dim..(level + 1) * self.dim].copy_from_slice(values);
        Ok(())
    }

    /// Values of the tunable band only, `n_band x D`.
    pub fn band_values(&self) -> Vec<f64> {
        let b = self.band();
        self.data[b.start * self.dim..b.end * self.dim].to_vec()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub resolution: usize,
    /// `7 x r x r`
    pub mean: Rc<Vec<f64>>,
    /// `(7 r^2) x D`, row-major; column `k` has squared norm `variance[k]`.
    pub basis: Rc<Vec<f64>>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PyramidGenerator {
    pub resolution: usize,
    pub dim: usize,
    pub levels: Vec<PyramidLevel>,
    pub warnings: Vec<Warning>,
}

/// Tape values produced by [`generate`].
#[derive(Debug, Clone, Copy)]
pub struct Generated<'t> {
    /// `7 x R x R` before squashing.
    pub pre_squash: Var<'t>,
    pub maps: MapVars<'t>,
}

impl PyramidGenerator {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Level resolutions double from `R / 2^(L-1)` up to `R`.
    pub fn level_resolutions(resolution: usize, levels: usize) -> Result<Vec<usize>> {
        if levels == 0 || !resolution.is_power_of_two() || resolution < 1 << (levels - 1) {
            return Err(Error::contract(
                "generator",
                format!("resolution {resolution} cannot hold {levels} doubling levels"),
            ));
        }
        let r0 = resolution >> (levels - 1);
        Ok((0..levels).map(|l| r0 << l).collect())
    }

    /// Plain-value generation.
    pub fn generate_maps(&self, w: &LatentW, offsets: Option<&TuneOffsets>) -> Result<ReflectanceMaps> {
        let tape = Tape::new();
        let wv = tape.constant(&w.tensor());
        let band = offsets.map(|o| tape.constant(&Tensor::new(vec![o.band().len(), o.dim], o.band_values())));
        let g = generate(self, wv, band)?;
        ReflectanceMaps::new(
            self.resolution,
            g.maps.albedo.data().to_vec(),
            g.maps.specular.data().to_vec(),
            g.maps.normals.data().to_vec(),
        )
    }

    /// Least-squares latent for `maps`: each level's residual projected onto
    /// that level's basis.
    pub fn project(&self, maps: &ReflectanceMaps) -> Result<LatentW> {
        if maps.resolution != self.resolution {
            return Err(Error::contract("project", "resolution mismatch"));
        }
        let residuals = laplacian_pyramid(&maps.stacked(), self.resolution, self.levels.len());
        let d = self.dim;
        let mut w = LatentW::zeros(self.levels.len(), d);
        for (l, (lvl, res)) in self.levels.iter().zip(&residuals).enumerate() {
            for k in 0..d {
                if lvl.variance[k] <= 0.0 {
                    continue;
                }
                let dot: f64 = res
                    .iter()
                    .zip(lvl.mean.iter())
                    .enumerate()
                    .map(|(i, (x, m))| (x - m) * lvl.basis[i * d + k])
                    .sum();
                w.data[l * d + k] = dot / lvl.variance[k];
            }
        }
        Ok(w)
    }
}

/// Residual images per level, coarse to fine: the coarsest level holds the
/// blurred image itself, every finer level the detail its upsampled parent
/// lacks.
pub fn laplacian_pyramid(stacked: &[f64], resolution: usize, levels: usize) -> Vec<Vec<f64>> {
    let mut gauss = vec![stacked.to_vec()];
    let mut r = resolution;
    for _ in 1..levels {
        let next = downsample2x_values(gauss.last().unwrap(), CHANNELS, r, r);
        r /= 2;
        gauss.push(next);
    }
    gauss.reverse();
    let mut out = vec![gauss[0].clone()];
    let mut r = resolution >> (levels - 1);
    for l in 1..levels {
        let up = upsample2x_values(&gauss[l - 1], CHANNELS, r, r);
        out.push(gauss[l].iter().zip(&up).map(|(a, b)| a - b).collect());
        r *= 2;
    }
    out
}

/// Runs the pyramid on the tape. `band_offsets`, when given, is
/// `n_band x D` and is added to the rows of the tunable levels only.
pub fn generate<'t>(gen: &PyramidGenerator, w: Var<'t>, band_offsets: Option<Var<'t>>) -> Result<Generated<'t>> {
    let (l_count, d) = (gen.levels.len(), gen.dim);
    if w.shape() != [l_count, d] {
        return Err(Error::contract(
            "generate",
            format!("latent shape {:?}, generator expects [{l_count}, {d}]", w.shape()),
        ));
    }
    let band = tunable_levels(l_count);
    if let Some(o) = band_offsets {
        if o.shape() != [band.len(), d] {
            return Err(Error::contract("generate", format!("offset shape {:?}", o.shape())));
        }
    }
    let tape = w.tape();
    let mut acc: Option<Var<'t>> = None;
    for (l, lvl) in gen.levels.iter().enumerate() {
        let r = lvl.resolution;
        let mut row = w.narrow(l * d, &[d]);
        if let (Some(o), true) = (band_offsets, band.contains(&l)) {
            row = row + o.narrow((l - band.start) * d, &[d]);
        }
        let n = CHANNELS * r * r;
        let basis = tape.constant_shared(&[n, d], lvl.basis.clone());
        let mean = tape.constant_shared(&[n], lvl.mean.clone());
        let c = (mean + Var::matvec(basis, row)).reshape(&[CHANNELS, r, r]);
        acc = Some(match acc {
            Some(a) => a.upsample2x() + c,
            None => c,
        });
    }
    let pre = acc.expect("at least one level");
    let r = gen.resolution;
    let plane = r * r;
    let albedo = pre.narrow(0, &[3, r, r]).soft_clamp01(SQUASH_BAND);
    let specular = pre.narrow(3 * plane, &[1, r, r]).soft_clamp01(SQUASH_BAND);
    let nxy = pre.narrow(4 * plane, &[2, plane]);
    let nz = pre.narrow(6 * plane, &[1, plane]).max_scalar(MIN_NORMAL_Z);
    let normals = Var::concat(&[nxy, nz])
        .transpose2()
        .normalize3()?
        .transpose2()
        .reshape(&[3, r, r]);
    Ok(Generated {
        pre_squash: pre,
        maps: MapVars {
            albedo,
            specular,
            normals,
        },
    })
}

/// Eigenvalue floor, relative to the level's total energy, below which a
/// principal direction counts as absent.
const RANK_TOL: f64 = 1e-12;

/// Fits per-level means and `dim` principal directions (scaled by their
/// standard deviation) to the Laplacian residuals of `corpus`.
pub fn fit_generator(corpus: &[ReflectanceMaps], levels: usize, dim: usize) -> Result<PyramidGenerator> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::contract("fit_generator", "empty corpus"))?;
    let res = first.resolution;
    if corpus.iter().any(|m| m.resolution != res) {
        return Err(Error::contract("fit_generator", "corpus resolutions differ"));
    }
    let resolutions = PyramidGenerator::level_resolutions(res, levels)?;
    let n = corpus.len();
    let pyramids: Vec<Vec<Vec<f64>>> = corpus
        .iter()
        .map(|m| laplacian_pyramid(&m.stacked(), res, levels))
        .collect();

    let mut out_levels = Vec::with_capacity(levels);
    let mut warnings = Vec::new();
    for (l, &r) in resolutions.iter().enumerate() {
        let size = CHANNELS * r * r;
        let mut mean = vec![0.0; size];
        for p in &pyramids {
            mean.iter_mut().zip(&p[l]).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centred: Vec<Vec<f64>> = pyramids
            .iter()
            .map(|p| p[l].iter().zip(&mean).map(|(x, m)| x - m).collect())
            .collect();

        let mut gram = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let energy: f64 = pyramids.iter().map(|p| p[l].iter().map(|x| x * x).sum::<f64>()).sum();
        let denom = (n.max(2) - 1) as f64;

        let mut basis = vec![0.0; size * dim];
        let mut variance = vec![0.0; dim];
        let mut rank = 0;
        for k in 0..dim.min(n) {
            let j = order[k];
            let lambda = eig.eigenvalues[j];
            if !(lambda > RANK_TOL * energy) {
                break;
            }
            let u = eig.eigenvectors.column(j);
            let scale = 1.0 / denom.sqrt();
            let mut sq = 0.0;
            for i in 0..size {
                let b: f64 = (0..n).map(|s| u[s] * centred[s][i]).sum::<f64>() * scale;
                basis[i * dim + k] = b;
                sq += b * b;
            }
            variance[k] = sq;
            rank += 1;
        }
        if rank < dim {
            warnings.push(Warning::new(
                "fit_generator",
                format!("level {l} keeps {rank} of {dim} components (corpus rank)"),
            ));
        }
        out_levels.push(PyramidLevel {
            resolution: r,
            mean: Rc::new(mean),
            basis: Rc::new(basis),
            variance,
        });
    }
    Ok(PyramidGenerator {
        resolution: res,
        dim,
        levels: out_levels,
        warnings,
    })
}

/// Peak signal-to-noise ratio for signals with unit peak.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "contract violation: psnr length");
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[cfg(test)]
mod tests;
