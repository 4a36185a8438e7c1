//! Renders a synthetic subject, fits it back from the image and landmarks,
//! and reports how close the recovery gets after each stage.
//!
//! About half a minute at the default 128x128.
//!
//! `cargo run --release --example synthetic_roundtrip -- [out_dir]`

use std::path::PathBuf;
use std::time::Instant;

use facefit::fitting::{self, BankConfig, FitConfig, FitState};
use facefit::io::save_srgb8;
use facefit::reflectance::psnr;
use facefit::synth::{build_fixture, Fixture, SynthConfig};

fn report(stage: &str, s: &FitState, fx: &Fixture, cfg: &FitConfig, out: &std::path::Path) -> facefit::Result<()> {
    let r = fitting::render_view(s, &fx.models, cfg, 0, None, None)?;
    save_srgb8(&out.join(format!("{stage}.png")), &r.image)?;
    let lm = fitting::state_landmarks(s, &fx.models, 0)?;
    let target = &fx.targets[0].landmarks;
    let lm_err = lm.iter().zip(target).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])).sum::<f64>() / target.len() as f64;
    let gt = &fx.truth.coeffs.p_s;
    let num = s.coeffs.p_s.iter().zip(gt).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den = gt.iter().map(|b| b * b).sum::<f64>().sqrt();
    println!(
        "{stage:>9}: psnr {:.2} dB, landmarks {:.3} px, identity error {:.3}",
        psnr(&r.image.data, &fx.targets[0].image.data),
        lm_err,
        num / den
    );
    Ok(())
}

fn main() -> facefit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("facefit-roundtrip"));
    std::fs::create_dir_all(&out).map_err(|e| facefit::Error::Io { path: out.clone(), msg: e.to_string() })?;

    let t = Instant::now();
    let fx = build_fixture(&SynthConfig::default(), &BankConfig::default())?;
    save_srgb8(&out.join("target.png"), &fx.targets[0].image)?;
    println!("fixture in {:.1}s", t.elapsed().as_secs_f64());

    let cfg = FitConfig::default();
    let t = Instant::now();
    let inv = fitting::fit_inversion(&fx.targets, &fx.models, &cfg)?;
    println!("inversion in {:.1}s", t.elapsed().as_secs_f64());
    for r in inv.inversion_trace.iter().step_by(50) {
        println!("  iter {:4}: total {:.5}, photometric {:.5}, landmark {:.5}", r.iter, r.total, r.photometric, r.landmark);
    }
    report("inversion", &inv, &fx, &cfg, &out)?;

    let t = Instant::now();
    let tuned = fitting::fit_tuning(inv, &fx.targets, &fx.models, &cfg)?;
    println!("tuning in {:.1}s", t.elapsed().as_secs_f64());
    report("tuned", &tuned, &fx, &cfg, &out)?;
    Ok(())
}
