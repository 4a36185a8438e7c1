//! Command implementations behind the `facefit` binary. Each command reads
//! one configuration value, writes only inside its output directory and
//! leaves a manifest there.

mod commands;
pub mod config;
pub mod manifest;

use crate::error::Error;

pub use commands::{
    cmd_augment, cmd_fit, cmd_gradcheck, cmd_interpolate, cmd_latent_pca, cmd_render, cmd_synth, load_models,
    AugmentConfig, AugmentOutcome, FitOutcome, GradcheckOutcome, InterpolateConfig, LatentPcaConfig, RenderConfig,
    RenderOutcome, SceneOverrides, SynthOutcome, SynthRun,
};
pub use config::{config_hash, load_config, read_toml, to_toml, Overrides, Rebase, RunConfig, RunPaths};
pub use manifest::{sha256_file, Manifest, OutputEntry, CONFIG_FILE, MANIFEST_FILE};

/// A command failure tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage} failed: {source}")]
pub struct CommandError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

pub type CommandResult<T> = std::result::Result<T, CommandError>;

pub(crate) trait AtStage<T> {
    fn at(self, stage: &'static str) -> CommandResult<T>;
}

impl<T> AtStage<T> for crate::error::Result<T> {
    fn at(self, stage: &'static str) -> CommandResult<T> {
        self.map_err(|source| CommandError { stage, source })
    }
}

