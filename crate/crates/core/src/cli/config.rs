//! Run configuration files and command-line overrides.
//!
//! Paths inside a configuration file are relative to the file itself.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{FitConfig, Preset};

use super::manifest::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPaths {
    pub shape_model: PathBuf,
    pub generator: PathBuf,
    pub targets: Vec<PathBuf>,
    /// One 68-point file per target, same order.
    pub landmarks: Vec<PathBuf>,
    pub output: PathBuf,
}

/// Everything `fit` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Sets both iteration counts when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub paths: RunPaths,
    #[serde(default)]
    pub fit: FitConfig,
}

/// Reads a TOML file into `T`.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("configuration types serialize to TOML")
}

/// Hex SHA-256 of the canonical TOML form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(to_toml(value).as_bytes())
}

/// `p` against `base` when relative, made absolute.
pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

/// Configuration values holding file paths.
pub trait Rebase {
    /// Resolves every relative path against `base`.
    fn rebase(&mut self, base: &Path);
}

/// Reads a configuration file and resolves its paths against the file's
/// directory.
pub fn load_config<T: DeserializeOwned + Rebase>(path: &Path) -> Result<T> {
    let mut cfg: T = read_toml(path)?;
    cfg.rebase(path.parent().unwrap_or(Path::new("")));
    Ok(cfg)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        load_config(path)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        if p.targets.is_empty() {
            return Err(Error::Config("no targets listed".into()));
        }
        if p.targets.len() != p.landmarks.len() {
            return Err(Error::Config(format!(
                "{} targets but {} landmark files",
                p.targets.len(),
                p.landmarks.len()
            )));
        }
        require(&p.shape_model, "shape model")?;
        require(&p.generator, "generator")?;
        for t in &p.targets {
            require(t, "target")?;
        }
        for l in &p.landmarks {
            require(l, "landmark file")?;
        }
        if self.fit.seed != self.seed {
            return Err(Error::Config(format!("fit.seed {} differs from seed {}", self.fit.seed, self.seed)));
        }
        self.fit.validate()
    }
}

impl Rebase for RunConfig {
    fn rebase(&mut self, base: &Path) {
        let p = &mut self.paths;
        for f in [&mut p.shape_model, &mut p.generator, &mut p.output] {
            *f = resolve(base, f);
        }
        for t in p.targets.iter_mut().chain(p.landmarks.iter_mut()) {
            *t = resolve(base, t);
        }
    }
}

/// Flag values; each one present wins over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub res: Option<usize>,
    pub iters_inv: Option<usize>,
    pub iters_tune: Option<usize>,
    pub no_tuning: bool,
}

impl Overrides {
    /// Applies in order: seed, preset, explicit iteration counts, the rest.
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.fit.seed = cfg.seed;
        if let Some(p) = self.preset {
            cfg.preset = Some(p);
        }
        if let Some(p) = cfg.preset {
            cfg.fit.apply_preset(p);
        }
        if let Some(n) = self.iters_inv {
            cfg.fit.iters_inv = n;
        }
        if let Some(n) = self.iters_tune {
            cfg.fit.iters_tune = n;
        }
        if let Some(r) = self.res {
            cfg.fit.resolution = r;
        }
        if self.no_tuning {
            cfg.fit.enable_tuning = false;
        }
        if let Some(o) = &self.out {
            cfg.paths.output = o.clone();
        }
    }
}
