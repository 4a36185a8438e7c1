//! Fits the pyramid generator to a procedural corpus, finds principal
//! latent directions and sweeps albedo along the leading ones.
//!
//! `cargo run --example latent_directions -- [out_dir]`

use std::path::PathBuf;

use facefit::io::save_png16;
use facefit::reflectance::synthetic::{synthetic_corpus, CorpusConfig};
use facefit::reflectance::{fit_generator, latent_pca, LatentW};

fn main() -> facefit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("facefit-latent"));
    std::fs::create_dir_all(&out).map_err(|e| facefit::Error::Io { path: out.clone(), msg: e.to_string() })?;

    let corpus = synthetic_corpus(&CorpusConfig { resolution: 64, n_samples: 48, seed: 2 })?;
    let gen = fit_generator(&corpus, 6, 16)?;
    let pcs = latent_pca(&gen, 4000, 0)?;
    let total: f64 = pcs.explained_variance.iter().sum();
    for k in 0..4 {
        println!("component {k}: {:.1}% of the sampled variance", 100.0 * pcs.explained_variance[k] / total);
    }

    let base = LatentW::zeros(gen.n_levels(), gen.dim);
    let r = gen.resolution;
    for k in 0..2 {
        for s in [-2.0, 0.0, 2.0] {
            let w = pcs.edit(&base, k, s, 0..gen.n_levels())?;
            let maps = gen.generate_maps(&w, None)?;
            let n = r * r;
            let mean: Vec<f64> = (0..3).map(|c| maps.albedo[c * n..(c + 1) * n].iter().sum::<f64>() / n as f64).collect();
            save_png16(&out.join(format!("pc{k}_{s:+.0}.png")), 3, r, r, &maps.albedo)?;
            println!("pc{k} {s:+.0} sigma: mean albedo ({:.3}, {:.3}, {:.3})", mean[0], mean[1], mean[2]);
        }
    }
    Ok(())
}
