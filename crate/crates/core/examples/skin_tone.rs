//! Transfers each tone of the skin-tone scale onto one albedo map and
//! reports how the forehead colour follows.
//!
//! `cargo run --example skin_tone -- [out_dir]`

use std::path::PathBuf;

use facefit::io::save_png16;
use facefit::reflectance::synthetic::{skin_tone_target, synthetic_corpus, CorpusConfig};
use facefit::reflectance::{augment_albedo, region_mean, skin_mask, MaskParams, UvRect};

fn main() -> facefit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("facefit-skin"));
    std::fs::create_dir_all(&out).map_err(|e| facefit::Error::Io { path: out.clone(), msg: e.to_string() })?;

    let r = 256;
    let src = synthetic_corpus(&CorpusConfig { resolution: r, n_samples: 1, seed: 21 })?.remove(0).albedo;
    let rect = UvRect::FOREHEAD;
    let params = MaskParams::default();
    let mask = skin_mask(&src, &rect, &params)?;
    save_png16(&out.join("source.png"), 3, r, r, &src)?;
    save_png16(&out.join("mask.png"), 1, r, r, &mask)?;
    let m = region_mean(&src, &rect)?;
    println!("source forehead  ({:.3}, {:.3}, {:.3})", m[0], m[1], m[2]);

    for label in 1..=10u8 {
        let target = skin_tone_target(label, r, 0)?;
        let aug = augment_albedo(&src, &target, &rect, &params)?;
        let m = region_mean(&aug, &rect)?;
        let t = region_mean(&target.albedo, &rect)?;
        save_png16(&out.join(format!("tone_{label:02}.png")), 3, r, r, &aug)?;
        println!(
            "tone {label:2}: forehead ({:.3}, {:.3}, {:.3}), reference ({:.3}, {:.3}, {:.3})",
            m[0], m[1], m[2], t[0], t[1], t[2]
        );
    }
    Ok(())
}
