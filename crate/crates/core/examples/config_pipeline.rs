//! The command pipeline from Rust: write a fixture with its run file, fit
//! from the file, re-render the fit from a new angle and check the
//! manifests.
//!
//! `cargo run --release --example config_pipeline -- [out_dir]`

use std::path::PathBuf;

use facefit::cli::{self, Manifest, Overrides, RenderConfig, RunConfig, SynthRun};
use facefit::fitting::BankConfig;
use facefit::synth::SynthConfig;

fn main() -> Result<(), cli::CommandError> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("facefit-pipeline"));

    let synth = cli::cmd_synth(&SynthRun {
        synth: SynthConfig { resolution: 64, map_resolution: 64, levels: 6, dim: 16, corpus_samples: 32, ..SynthConfig::default() },
        bank: BankConfig::default(),
        output: out.join("fixture"),
    })?;
    println!("fixture: {} files, run file {}", synth.manifest.outputs.len(), synth.run_config.display());

    let mut run = RunConfig::load(&synth.run_config).map_err(|source| cli::CommandError { stage: "configuration", source })?;
    Overrides { iters_inv: Some(120), out: Some(out.join("fit")), ..Default::default() }.apply(&mut run);
    let fit = cli::cmd_fit(&run)?;
    println!("fit: psnr {:.2} dB, landmark error {:.3} px", fit.psnr[0], fit.landmark_error[0]);

    let mut render = RenderConfig::beside_checkpoint(&out.join("fit/fit.fmfs"), &out.join("turned"))
        .map_err(|source| cli::CommandError { stage: "configuration", source })?;
    render.scene.yaw = Some(0.5);
    cli::cmd_render(&render)?;

    for dir in ["fixture", "fit", "turned"] {
        let d = out.join(dir);
        let m = Manifest::load(&d.join(cli::MANIFEST_FILE)).map_err(|source| cli::CommandError { stage: "check", source })?;
        let bad = m.mismatches(&d).map_err(|source| cli::CommandError { stage: "check", source })?;
        println!("{dir:>8}: {} {} outputs, config {}, {} changed", m.command, m.outputs.len(), &m.config_hash[..12], bad.len());
    }
    Ok(())
}
