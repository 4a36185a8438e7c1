//! Renders one synthetic subject under a few lights and camera yaws and
//! writes sRGB previews next to the linear 16-bit images.
//!
//! `cargo run --example render_lighting -- [out_dir]`

use std::path::PathBuf;

use facefit::cli::SceneOverrides;
use facefit::fitting::{self, BankConfig, FitConfig};
use facefit::io::{save_png16, save_srgb8};
use facefit::synth::{build_fixture, SynthConfig};

fn main() -> facefit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("facefit-render"));
    std::fs::create_dir_all(&out).map_err(|e| facefit::Error::Io { path: out.clone(), msg: e.to_string() })?;

    let synth = SynthConfig {
        resolution: 192,
        corpus_samples: 24,
        ..SynthConfig::default()
    };
    let fx = build_fixture(&synth, &BankConfig::default())?;
    let cfg = FitConfig::default();
    let view = &fx.truth.per_image[0];

    let scenes = [
        ("key", SceneOverrides::default()),
        ("left", SceneOverrides { light_direction: Some([-1.0, -0.2, -0.4]), ..Default::default() }),
        ("behind", SceneOverrides { light_direction: Some([0.35, -0.3, 1.0]), ..Default::default() }),
        ("bright", SceneOverrides { light_scale: Some(1.6), ..Default::default() }),
        ("turned", SceneOverrides { yaw: Some(0.6), ..Default::default() }),
        ("glossy", SceneOverrides { shininess: Some(60.0), ..Default::default() }),
    ];
    for (name, s) in scenes {
        let cam = s.camera(&view.camera);
        let light = s.lighting(&view.lighting)?;
        let r = fitting::render_view(&fx.truth, &fx.models, &cfg, 0, Some(&cam), Some(&light))?;
        let n = r.image.data.len() / 3;
        let mean = r.image.data[..n].iter().sum::<f64>() / r.covered.iter().filter(|&&c| c).count().max(1) as f64;
        save_png16(&out.join(format!("{name}.png")), 3, r.image.width, r.image.height, &r.image.data)?;
        save_srgb8(&out.join(format!("{name}_srgb.png")), &r.image)?;
        println!("{name:>7}: mean red over the face {mean:.3}");
    }
    println!("wrote {}", out.display());
    Ok(())
}
