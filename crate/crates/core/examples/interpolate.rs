//! Fits two synthetic subjects and renders the blend between the fits.
//!
//! `cargo run --release --example interpolate -- [out_dir]`

use std::path::PathBuf;

use facefit::fitting::{self, BankConfig, FitConfig};
use facefit::io::save_srgb8;
use facefit::synth::{build_fixture, SynthConfig};

fn main() -> facefit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("facefit-interp"));
    std::fs::create_dir_all(&out).map_err(|e| facefit::Error::Io { path: out.clone(), msg: e.to_string() })?;

    let synth = |seed| SynthConfig {
        resolution: 64,
        map_resolution: 64,
        levels: 6,
        dim: 16,
        corpus_samples: 32,
        seed,
        ..SynthConfig::default()
    };
    let cfg = FitConfig {
        resolution: 64,
        ..FitConfig::default()
    };
    // the second subject is rendered with the first fixture's models
    let a = build_fixture(&synth(3), &BankConfig::default())?;
    let other = build_fixture(&synth(4), &BankConfig::default())?.truth;
    let mut b_truth = a.truth.clone();
    b_truth.w = other.w;
    b_truth.coeffs = other.coeffs;
    let b_targets = facefit::synth::render_targets(&b_truth, &a.models)?;

    let fa = fitting::fit(&a.targets, &a.models, &cfg)?;
    let fb = fitting::fit(&b_targets, &a.models, &cfg)?;
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let s = fitting::interpolate_fit(&fa, &fb, t)?;
        let r = fitting::render_view(&s, &a.models, &cfg, 0, None, None)?;
        save_srgb8(&out.join(format!("blend_{k}.png")), &r.image)?;
        println!("t = {t:.2}: latent norm {:.3}", s.w.data.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    println!("wrote {}", out.display());
    Ok(())
}
