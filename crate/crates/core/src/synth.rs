//! Self-consistent synthetic fixtures: a procedural shape model, a
//! generator fitted to a procedural reflectance corpus, a ground-truth fit
//! state drawn from both, and its renders with exact landmarks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fitting::{self, BankConfig, FeatureBank, FitConfig, FitState, FitTarget, ImageParams, Models};
use crate::io::{load_image, load_landmarks, save_landmarks, save_png16, Image};
use crate::reflectance::{self, synthetic::CorpusConfig, LatentW};
use crate::render::{Camera, Lighting};
use crate::shape::synthetic::{synthetic_shape_model, SyntheticShapeConfig};
use crate::shape::{self, ShapeCoeffs};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Side of the rendered targets.
    pub resolution: usize,
    pub map_resolution: usize,
    pub levels: usize,
    pub dim: usize,
    pub corpus_samples: usize,
    pub subdivisions: usize,
    /// One view per entry, radians about the vertical axis.
    pub yaws: Vec<f64>,
    /// Scale on the standard-normal ground-truth latent and whitened shape.
    pub truncation: f64,
    pub distance: f64,
    pub focal_factor: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            resolution: 128,
            map_resolution: 128,
            levels: 8,
            dim: 64,
            corpus_samples: 96,
            subdivisions: 4,
            yaws: vec![0.0],
            truncation: 0.5,
            distance: 4.5,
            focal_factor: FitConfig::default().focal_factor,
            seed: 1,
        }
    }
}

impl SynthConfig {
    /// A frontal and two side views.
    pub const THREE_VIEW_YAWS: [f64; 3] = [0.0, -0.45, 0.45];

    pub fn three_view() -> Self {
        SynthConfig {
            yaws: Self::THREE_VIEW_YAWS.to_vec(),
            ..SynthConfig::default()
        }
    }
}

pub struct Fixture {
    pub config: SynthConfig,
    pub models: Models,
    pub truth: FitState,
    pub targets: Vec<FitTarget>,
}

/// Ground-truth lighting, in camera space: soft ambient and one warm key
/// light above and to the left of the camera.
pub fn truth_lighting() -> Lighting {
    Lighting::new(0.85, &[([-0.35, -0.3, -1.0], [1.1, 1.05, 1.0])], 24.0).expect("valid constants")
}

fn quantize16(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

pub fn build_fixture(cfg: &SynthConfig, bank: &BankConfig) -> Result<Fixture> {
    if cfg.yaws.is_empty() {
        return Err(Error::contract("synth", "at least one view is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape_seed: u64 = rng.random();
    let corpus_seed: u64 = rng.random();

    let shape = synthetic_shape_model(&SyntheticShapeConfig {
        subdivisions: cfg.subdivisions,
        seed: shape_seed,
        ..SyntheticShapeConfig::default()
    })?;
    let corpus = reflectance::synthetic::synthetic_corpus(&CorpusConfig {
        resolution: cfg.map_resolution,
        n_samples: cfg.corpus_samples,
        seed: corpus_seed,
    })?;
    let generator = reflectance::fit_generator(&corpus, cfg.levels, cfg.dim)?;
    drop(corpus);
    let models = Models {
        shape,
        generator,
        bank: FeatureBank::new(bank)?,
    };

    let mut w = LatentW::zeros(cfg.levels, cfg.dim);
    for v in w.data.iter_mut() {
        *v = cfg.truncation * rng.sample::<f64, _>(StandardNormal);
    }
    let p_s = models
        .shape
        .id_eig
        .iter()
        .map(|e| cfg.truncation * e.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let coeffs = ShapeCoeffs {
        p_s,
        p_e: vec![0.0; models.shape.n_expr()],
    };
    let focal = cfg.focal_factor * cfg.resolution as f64;
    let per_image = cfg
        .yaws
        .iter()
        .map(|&yaw| ImageParams {
            camera: Camera::orbit(cfg.resolution, cfg.resolution, focal, cfg.distance, yaw),
            lighting: truth_lighting(),
            expression: None,
        })
        .collect();
    let mut truth = FitState::at(&models, w, coeffs, per_image)?;
    truth.stage = fitting::Stage::Inverted;
    let targets = render_targets(&truth, &models)?;
    Ok(Fixture {
        config: cfg.clone(),
        models,
        truth,
        targets,
    })
}

/// Targets as they will read back from 16-bit files.
pub fn render_targets(state: &FitState, models: &Models) -> Result<Vec<FitTarget>> {
    let fit_cfg = FitConfig::default();
    (0..state.n_images())
        .map(|i| {
            let r = fitting::render_view(state, models, &fit_cfg, i, None, None)?;
            let data = r.image.data.iter().map(|&v| quantize16(v)).collect();
            Ok(FitTarget {
                image: Image::new(r.image.width, r.image.height, data)?,
                landmarks: fitting::state_landmarks(state, models, i)?,
            })
        })
        .collect()
}

/// File names inside a fixture directory.
pub struct FixtureLayout {
    pub dir: PathBuf,
}

impl FixtureLayout {
    pub fn new(dir: &Path) -> Self {
        FixtureLayout { dir: dir.to_path_buf() }
    }
    pub fn shape(&self) -> PathBuf {
        self.dir.join("shape.fmsm")
    }
    pub fn generator(&self) -> PathBuf {
        self.dir.join("generator.fmgn")
    }
    pub fn truth(&self) -> PathBuf {
        self.dir.join("truth.fmfs")
    }
    pub fn target(&self, i: usize) -> PathBuf {
        self.dir.join(format!("target_{i}.png"))
    }
    pub fn landmarks(&self, i: usize) -> PathBuf {
        self.dir.join(format!("landmarks_{i}.txt"))
    }
}

/// Writes the fixture and returns the files written.
pub fn write_fixture(fx: &Fixture, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let lay = FixtureLayout::new(dir);
    shape::save_shape_model(&fx.models.shape, &lay.shape())?;
    reflectance::save_generator(&fx.models.generator, &lay.generator())?;
    fitting::save_state(&fx.truth, &lay.truth())?;
    let mut files = vec![lay.shape(), lay.generator(), lay.truth()];
    for (i, t) in fx.targets.iter().enumerate() {
        save_png16(&lay.target(i), 3, t.image.width, t.image.height, &t.image.data)?;
        save_landmarks(&lay.landmarks(i), &t.landmarks)?;
        files.push(lay.target(i));
        files.push(lay.landmarks(i));
    }
    Ok(files)
}

/// Reads a fixture directory back: models, ground truth and targets.
pub fn load_fixture(dir: &Path, bank: &BankConfig) -> Result<(Models, FitState, Vec<FitTarget>)> {
    let lay = FixtureLayout::new(dir);
    let models = Models {
        shape: shape::load_shape_model(&lay.shape())?,
        generator: reflectance::load_generator(&lay.generator())?,
        bank: FeatureBank::new(bank)?,
    };
    let truth = fitting::load_state(&lay.truth())?;
    let targets = (0..truth.n_images())
        .map(|i| {
            Ok(FitTarget {
                image: load_image(&lay.target(i))?,
                landmarks: load_landmarks(&lay.landmarks(i))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((models, truth, targets))
}
