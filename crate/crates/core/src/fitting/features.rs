//! Frozen convolutional feature pyramid used by the identity and
//! perceptual losses in place of a pretrained recognition network.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{ConvFilters, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankConfig {
    pub levels: usize,
    pub filters: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            levels: 4,
            filters: 16,
            size: 5,
            seed: 0x5eed,
        }
    }
}

/// Conv + ReLU per level with 2x max pooling in between. Filters are
/// constants on the tape and never see gradients.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    levels: Vec<Rc<ConvFilters>>,
}

/// Feature values of a fixed image, for use as loss targets.
#[derive(Debug, Clone)]
pub struct TargetFeatures {
    pub levels: Vec<Tensor>,
    pub embedding: Tensor,
}

impl FeatureBank {
    /// Seeded Gaussian filters, rows orthonormalized per level.
    pub fn new(cfg: &BankConfig) -> Result<Self> {
        if cfg.levels == 0 || cfg.filters == 0 || cfg.size.is_multiple_of(2) {
            return Err(Error::contract("feature bank", "need levels, filters and an odd filter size"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut levels = Vec::with_capacity(cfg.levels);
        let mut in_ch = 3;
        for _ in 0..cfg.levels {
            let fan = in_ch * cfg.size * cfg.size;
            if cfg.filters > fan {
                return Err(Error::contract("feature bank", "more filters than filter dimensions"));
            }
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cfg.filters);
            while rows.len() < cfg.filters {
                let mut v: Vec<f64> = (0..fan).map(|_| StandardNormal.sample(&mut rng)).collect();
                for r in &rows {
                    let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
                }
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if n > 1e-8 {
                    rows.push(v.into_iter().map(|a| a / n).collect());
                }
            }
            levels.push(Rc::new(ConvFilters {
                out_ch: cfg.filters,
                in_ch,
                size: cfg.size,
                weights: rows.concat(),
            }));
            in_ch = cfg.filters;
        }
        Ok(FeatureBank { levels })
    }

    /// Bank from explicit filters; channel counts must chain from 3.
    pub fn from_filters(levels: Vec<ConvFilters>) -> Result<Self> {
        let mut in_ch = 3;
        for f in &levels {
            if f.in_ch != in_ch || f.weights.len() != f.out_ch * f.in_ch * f.size * f.size {
                return Err(Error::contract("feature bank", "filter shapes do not chain"));
            }
            in_ch = f.out_ch;
        }
        if levels.is_empty() {
            return Err(Error::contract("feature bank", "no levels"));
        }
        Ok(FeatureBank {
            levels: levels.into_iter().map(Rc::new).collect(),
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    fn check_size(&self, image: &[usize]) -> Result<()> {
        let need = 1usize << (self.levels.len() - 1);
        if image.len() != 3 || image[0] != 3 || !image[1].is_multiple_of(need) || !image[2].is_multiple_of(need) {
            return Err(Error::contract(
                "feature bank",
                format!("image {image:?} must be 3 x H x W with sides divisible by {need}"),
            ));
        }
        Ok(())
    }

    /// Activations of every level for a `[3 x H x W]` image.
    pub fn features<'t>(&self, image: Var<'t>) -> Result<Vec<Var<'t>>> {
        self.check_size(&image.shape())?;
        let mut out = Vec::with_capacity(self.levels.len());
        let mut x = image;
        for (j, f) in self.levels.iter().enumerate() {
            if j > 0 {
                x = x.max_pool2();
            }
            x = x.conv2d(f.clone()).max0();
            out.push(x);
        }
        Ok(out)
    }

    /// Global average of the last level, one value per filter.
    pub fn embedding<'t>(last: Var<'t>) -> Var<'t> {
        last.mean_axes(&[1, 2])
    }

    pub fn target(&self, image: &Tensor) -> Result<TargetFeatures> {
        let tape = Tape::new();
        let feats = self.features(tape.constant(image))?;
        let embedding = Self::embedding(*feats.last().unwrap()).value();
        Ok(TargetFeatures {
            levels: feats.iter().map(|f| f.value()).collect(),
            embedding,
        })
    }
}
