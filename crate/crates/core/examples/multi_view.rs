//! Fits three views of one synthetic subject jointly and each view on its
//! own, then compares the recovered latents with the ground truth.
//!
//! Takes a few minutes at the default 128x128.
//!
//! `cargo run --release --example multi_view`

use std::time::Instant;

use facefit::fitting::{self, BankConfig, FitConfig};
use facefit::reflectance::psnr;
use facefit::synth::{build_fixture, SynthConfig};

fn w_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn main() -> facefit::Result<()> {
    let fx = build_fixture(&SynthConfig::three_view(), &BankConfig::default())?;
    let cfg = FitConfig::default();

    let t = Instant::now();
    let joint = fitting::fit_multi(&fx.targets, &fx.models, &cfg)?;
    println!("joint fit in {:.1}s, W error {:.3}", t.elapsed().as_secs_f64(), w_error(&joint.w.data, &fx.truth.w.data));
    for i in 0..fx.targets.len() {
        let r = fitting::render_view(&joint, &fx.models, &cfg, i, None, None)?;
        println!("  view {i}: psnr {:.2} dB", psnr(&r.image.data, &fx.targets[i].image.data));
    }
    for i in 0..fx.targets.len() {
        let s = fitting::fit(&fx.targets[i..i + 1], &fx.models, &cfg)?;
        println!("single view {i}: W error {:.3}", w_error(&s.w.data, &fx.truth.w.data));
    }
    Ok(())
}
