//! Principal directions of the latent prior, for manipulation sliders.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LatentW, PyramidGenerator};
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentComponents {
    pub dim: usize,
    /// `D x D`, row `k` is component `k`, unit length.
    pub components: Vec<f64>,
    /// Sample variance along each component, descending.
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
}

impl LatentComponents {
    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.dim..(k + 1) * self.dim]
    }

    /// Moves every row of `w` in `levels` by `sigmas` standard deviations
    /// along component `k`.
    pub fn edit(&self, w: &LatentW, k: usize, sigmas: f64, levels: std::ops::Range<usize>) -> Result<LatentW> {
        if w.dim != self.dim || k >= self.dim || levels.end > w.levels {
            return Err(Error::contract("latent edit", "component or level out of range"));
        }
        let step = sigmas * self.explained_variance[k].sqrt();
        let mut out = w.clone();
        for l in levels {
            for (x, c) in out.data[l * w.dim..(l + 1) * w.dim].iter_mut().zip(self.component(k)) {
                *x += step * c;
            }
        }
        Ok(out)
    }
}

/// PCA over `n_samples` rows drawn from the latent prior. The prior at this
/// scale is the identity map of a standard normal, so the components only
/// recover axes up to sampling noise.
pub fn latent_pca(gen: &PyramidGenerator, n_samples: usize, seed: u64) -> Result<LatentComponents> {
    let d = gen.dim;
    if n_samples < d.max(2) {
        return Err(Error::contract(
            "latent_pca",
            format!("{n_samples} samples for a {d}-dimensional latent"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = DMatrix::<f64>::from_fn(n_samples, d, |_, _| StandardNormal.sample(&mut rng));
    let mean: Vec<f64> = (0..d).map(|j| samples.column(j).mean()).collect();
    let mut centred = samples;
    for j in 0..d {
        centred.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = centred.tr_mul(&centred) / (n_samples - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Vec::with_capacity(d * d);
    for &j in &order {
        components.extend(eig.eigenvectors.column(j).iter());
    }
    Ok(LatentComponents {
        dim: d,
        components,
        explained_variance: order.iter().map(|&j| eig.eigenvalues[j]).collect(),
        mean,
    })
}
