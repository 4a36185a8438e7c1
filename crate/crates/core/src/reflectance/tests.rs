use std::cell::RefCell;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::synthetic::{monk_linear, skin_tone_target, synthetic_corpus, CorpusConfig};
use super::*;
use crate::tensor::fd;

fn small_corpus(n: usize, seed: u64) -> Vec<ReflectanceMaps> {
    synthetic_corpus(&CorpusConfig {
        resolution: 32,
        n_samples: n,
        seed,
    })
    .unwrap()
}

thread_local! {
    static SMALL: RefCell<Option<(Vec<ReflectanceMaps>, PyramidGenerator)>> = const { RefCell::new(None) };
}

/// 12-sample corpus at 32^2 and a 4-level generator with D = 16.
fn with_small<T>(f: impl FnOnce(&[ReflectanceMaps], &PyramidGenerator) -> T) -> T {
    SMALL.with(|cell| {
        let mut slot = cell.borrow_mut();
        if slot.is_none() {
            let corpus = small_corpus(12, 3);
            let gen = fit_generator(&corpus, 4, 16).unwrap();
            *slot = Some((corpus, gen));
        }
        let (c, g) = slot.as_ref().unwrap();
        f(c, g)
    })
}

fn random_latent(rng: &mut ChaCha8Rng, levels: usize, dim: usize, sigma: f64) -> LatentW {
    LatentW {
        levels,
        dim,
        data: (0..levels * dim).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect(),
    }
}

fn pre_squash(gen: &PyramidGenerator, w: &LatentW) -> Vec<f64> {
    let tape = Tape::new();
    let g = generate(gen, tape.constant(&w.tensor()), None).unwrap();
    g.pre_squash.data().to_vec()
}

#[test]
fn level_resolutions_double_to_the_top() {
    assert_eq!(PyramidGenerator::level_resolutions(128, 8).unwrap(), vec![1, 2, 4, 8, 16, 32, 64, 128]);
    assert!(PyramidGenerator::level_resolutions(64, 8).is_err());
    assert!(PyramidGenerator::level_resolutions(96, 3).is_err());
}

#[test]
fn zero_latent_gives_the_upsampled_means() {
    with_small(|_, gen| {
        let mut acc = gen.levels[0].mean.to_vec();
        let mut r = gen.levels[0].resolution;
        for lvl in &gen.levels[1..] {
            acc = upsample2x_values(&acc, CHANNELS, r, r);
            r *= 2;
            acc.iter_mut().zip(lvl.mean.iter()).for_each(|(a, m)| *a += m);
        }
        let got = pre_squash(gen, &LatentW::zeros(4, 16));
        let err = got.iter().zip(&acc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    });
}

#[test]
fn pre_squash_output_is_affine_in_the_latent() {
    with_small(|_, gen| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_latent(&mut rng, 4, 16, 1.0);
        let w2 = LatentW {
            data: w.data.iter().map(|v| 2.0 * v).collect(),
            ..w.clone()
        };
        let p0 = pre_squash(gen, &LatentW::zeros(4, 16));
        let p1 = pre_squash(gen, &w);
        let p2 = pre_squash(gen, &w2);
        for i in 0..p0.len() {
            assert!(((p2[i] - p0[i]) - 2.0 * (p1[i] - p0[i])).abs() < 1e-10);
        }
    });
}

#[test]
fn wrong_latent_shape_is_a_contract_error() {
    with_small(|_, gen| {
        let r = gen.generate_maps(&LatentW::zeros(4, 15), None);
        assert!(matches!(r, Err(Error::Contract { .. })));
    });
}

#[test]
fn generator_statistics_follow_the_corpus() {
    with_small(|corpus, gen| {
        let mean_albedo = |m: &ReflectanceMaps| m.albedo.iter().sum::<f64>() / m.albedo.len() as f64;
        let mean_normal =
            |m: &ReflectanceMaps| m.normals.iter().map(|v| 0.5 * (v + 1.0)).sum::<f64>() / m.normals.len() as f64;
        let canon = gen.generate_maps(&LatentW::zeros(4, 16), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = 0.0;
        let mut n = 0.0;
        for _ in 0..20 {
            let m = gen.generate_maps(&random_latent(&mut rng, 4, 16, 1.0), None).unwrap();
            a += mean_albedo(&m) / 20.0;
            n += mean_normal(&m) / 20.0;
        }
        let corpus_a = corpus.iter().map(mean_albedo).sum::<f64>() / corpus.len() as f64;
        assert!((corpus_a - 0.24).abs() < 2e-3, "{corpus_a}");
        assert!((mean_albedo(&canon) - 0.24).abs() < 0.02);
        assert!((a - 0.24).abs() < 0.02, "{a}");
        assert!((mean_normal(&canon) - 0.61).abs() < 0.02);
        assert!((n - 0.61).abs() < 0.02, "{n}");
    });
}

#[test]
fn corpus_moments_match_the_targets() {
    let corpus = small_corpus(12, 3);
    let all_a: Vec<f64> = corpus.iter().flat_map(|m| m.albedo.iter().copied()).collect();
    let all_n: Vec<f64> = corpus.iter().flat_map(|m| m.normals.iter().map(|v| 0.5 * (v + 1.0))).collect();
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
    };
    let (am, asd) = stats(&all_a);
    let (nm, nsd) = stats(&all_n);
    assert!((am - 0.24).abs() < 2e-3 && (asd - 0.12).abs() < 5e-3, "{am} {asd}");
    assert!((nm - 0.61).abs() < 1e-6, "{nm}");
    // Unit normals with this mean cannot spread much below 0.26.
    assert!((nsd - 0.24).abs() < 0.05, "{nsd}");
    for m in &corpus {
        m.validate(1e-9).unwrap();
    }
}

#[test]
fn identical_corpus_has_no_variance() {
    let one = small_corpus(1, 8).remove(0);
    let gen = fit_generator(&[one.clone(), one.clone(), one.clone()], 3, 4).unwrap();
    assert!(gen.levels.iter().all(|l| l.variance.iter().all(|&v| v == 0.0)));
    assert!(!gen.warnings.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = gen.generate_maps(&random_latent(&mut rng, 3, 4, 2.0), None).unwrap();
    let err = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err(&out.albedo, &one.albedo) < 1e-12);
    assert!(err(&out.specular, &one.specular) < 1e-12);
    assert!(err(&out.normals, &one.normals) < 1e-12);
}

#[test]
fn two_samples_give_one_component_and_a_close_reconstruction() {
    let corpus = small_corpus(2, 21);
    let gen = fit_generator(&corpus, 4, 8).unwrap();
    for l in &gen.levels {
        assert!(l.variance[0] > 0.0);
        assert!(l.variance[1..].iter().all(|&v| v == 0.0));
    }
    let w = gen.project(&corpus[0]).unwrap();
    let rec = gen.generate_maps(&w, None).unwrap();
    let p = psnr(&rec.stacked(), &corpus[0].stacked());
    assert!(p >= 40.0, "{p}");
}

#[test]
fn reconstruction_error_does_not_grow_with_dim() {
    let corpus = small_corpus(32, 4);
    let mut last = f64::INFINITY;
    for d in [2, 4, 8, 16] {
        let gen = fit_generator(&corpus, 4, d).unwrap();
        let mut mse = 0.0;
        for m in &corpus {
            let pre = pre_squash(&gen, &gen.project(m).unwrap());
            let s = m.stacked();
            mse += pre.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        assert!(mse <= last * (1.0 + 1e-9), "D={d}: {mse} > {last}");
        last = mse;
    }
}

#[test]
fn full_rank_projection_reconstructs_every_sample() {
    with_small(|corpus, gen| {
        for m in corpus {
            let rec = gen.generate_maps(&gen.project(m).unwrap(), None).unwrap();
            let p = psnr(&rec.stacked(), &m.stacked());
            assert!(p >= 35.0, "{p}");
        }
    });
}

#[test]
fn random_latents_stay_in_range() {
    with_small(|_, gen| {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for i in 0..1000 {
            let sigma = [0.5, 1.0, 3.0, 10.0][i % 4];
            let m = gen.generate_maps(&random_latent(&mut rng, 4, 16, sigma), None).unwrap();
            m.validate(1e-6).unwrap();
        }
    });
}

#[test]
fn offsets_on_frozen_levels_are_rejected() {
    let mut o = TuneOffsets::zeros(8, 4);
    assert_eq!(o.band(), 2..6);
    assert!(o.set_row(1, &[1.0; 4]).is_err());
    assert!(o.set_row(6, &[1.0; 4]).is_err());
    o.set_row(2, &[1.0; 4]).unwrap();
    assert_eq!(o.band_values().len(), 16);
    assert_eq!(tunable_levels(4), 1..3);
}

#[test]
fn offsets_act_like_latent_shifts_on_their_level() {
    with_small(|_, gen| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_latent(&mut rng, 4, 16, 1.0);
        let mut o = TuneOffsets::zeros(4, 16);
        let delta: Vec<f64> = (0..16).map(|k| 0.1 * k as f64).collect();
        o.set_row(1, &delta).unwrap();
        let mut shifted = w.clone();
        shifted.data[16..32].iter_mut().zip(&delta).for_each(|(x, d)| *x += d);
        let a = gen.generate_maps(&w, Some(&o)).unwrap();
        let b = gen.generate_maps(&shifted, None).unwrap();
        let err = a.stacked().iter().zip(&b.stacked()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    });
}

#[test]
fn generator_gradients_match_finite_differences() {
    with_small(|_, gen| {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let tape = Tape::new();
        let w = tape.param(&random_latent(&mut rng, 4, 16, 1.0).tensor());
        let off = tape.param(&Tensor::new(vec![2, 16], (0..32).map(|i| 0.01 * i as f64).collect()));
        let g = generate(gen, w, Some(off)).unwrap();
        let wa = tape.constant(&Tensor::new(vec![3, 32, 32], (0..3072).map(|i| ((i * 7) % 13) as f64).collect()));
        let loss = (g.maps.albedo * wa).mean() + g.maps.specular.square().mean() + g.maps.normals.sum().scale(1e-3);
        let report = fd::check(&tape, loss, &[w, off], 32).unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    });
}

#[test]
fn generator_file_round_trips() {
    with_small(|_, gen| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.fmgn");
        save_generator(gen, &path).unwrap();
        let back = load_generator(&path).unwrap();
        assert_eq!(back.resolution, gen.resolution);
        for (a, b) in back.levels.iter().zip(&gen.levels) {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.basis, b.basis);
            assert_eq!(a.variance, b.variance);
        }
        std::fs::write(&path, b"FMSM\x01\0\0\0").unwrap();
        assert!(matches!(load_generator(&path), Err(Error::Format { .. })));
    });
}

#[test]
fn maps_png_round_trip_within_quantization() {
    let m = small_corpus(1, 2).remove(0);
    let dir = tempfile::tempdir().unwrap();
    save_maps_png(&m, dir.path()).unwrap();
    let sidecar = std::fs::read_to_string(dir.path().join("maps.txt")).unwrap();
    assert!(sidecar.contains("colorspace = linear"));
    let back = load_maps_png(dir.path()).unwrap();
    back.validate(1e-9).unwrap();
    let err = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err(&back.albedo, &m.albedo) <= 0.5 / 65535.0 + 1e-12);
    assert!(err(&back.normals, &m.normals) < 1e-4);
}

#[test]
fn uniform_albedo_mask_is_one() {
    let a = vec![0.3; 3 * 16 * 16];
    let m = skin_mask(&a, &UvRect::FOREHEAD, &MaskParams::default()).unwrap();
    assert!(m.iter().all(|&v| v == 1.0));
}

#[test]
fn distant_texel_is_masked_out() {
    let mut a = vec![0.3; 3 * 16 * 16];
    // texel 0 sits far outside the forehead patch
    a[0] = 0.8;
    let m = skin_mask(&a, &UvRect::FOREHEAD, &MaskParams::default()).unwrap();
    assert_eq!(m[0], 0.0);
    assert_eq!(m[1], 1.0);
}

#[test]
fn mask_is_non_increasing_in_distance() {
    let r = 32;
    let n = r * r;
    let mut a = vec![0.3; 3 * n];
    let rect = UvRect::FOREHEAD;
    let inside = rect.texels(r);
    let outside: Vec<usize> = (0..n).filter(|i| !inside.contains(i)).collect();
    // Grid of red offsets on texels outside the patch.
    let ds: Vec<f64> = (0..outside.len()).map(|k| 0.6 * k as f64 / outside.len() as f64).collect();
    for (&t, &d) in outside.iter().zip(&ds) {
        a[t] = 0.3 + d;
    }
    let m = skin_mask(&a, &rect, &MaskParams::default()).unwrap();
    for w in outside.windows(2) {
        assert!(m[w[1]] <= m[w[0]]);
    }
}

#[test]
fn empty_rect_is_a_contract_error() {
    let a = vec![0.3; 3 * 8 * 8];
    let thin = UvRect {
        u0: 0.5,
        v0: 0.5,
        u1: 0.51,
        v1: 0.51,
    };
    assert!(matches!(skin_mask(&a, &thin, &MaskParams::default()), Err(Error::Contract { .. })));
}

/// Earth mover's distance between 256-bin histograms of two channels.
fn emd256(a: &[f64], b: &[f64]) -> f64 {
    let hist = |v: &[f64]| {
        let mut h = [0.0; 256];
        for &x in v {
            h[((x * 256.0) as usize).min(255)] += 1.0 / v.len() as f64;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    let (mut ca, mut cb, mut d) = (0.0, 0.0, 0.0);
    for k in 0..256 {
        ca += ha[k];
        cb += hb[k];
        d += (ca - cb).abs() / 256.0;
    }
    d
}

#[test]
fn self_matching_is_near_identity() {
    let m = small_corpus(1, 5).remove(0);
    let h = histogram_match(&m.albedo, &m.albedo).unwrap();
    let err = h.iter().zip(&m.albedo).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err <= 1.0 / 256.0, "{err}");
}

#[test]
fn constant_target_maps_to_the_constant() {
    let m = small_corpus(1, 5).remove(0);
    let target = vec![0.37; 3 * 8 * 8];
    let h = histogram_match(&m.albedo, &target).unwrap();
    assert!(h.iter().all(|&v| v == 0.37));
}

#[test]
fn matched_histogram_is_close_to_the_target() {
    let m = small_corpus(1, 5).remove(0);
    let t = skin_tone_target(8, 32, 1).unwrap();
    let h = histogram_match(&m.albedo, &t.albedo).unwrap();
    let n = 32 * 32;
    for c in 0..3 {
        let d = emd256(&h[c * n..(c + 1) * n], &t.albedo[c * n..(c + 1) * n]);
        assert!(d <= 2.0 / 255.0, "channel {c}: {d}");
    }
    let again = histogram_match(&h, &t.albedo).unwrap();
    let err = again.iter().zip(&h).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err <= 1.0 / 256.0, "{err}");
}

#[test]
fn forced_masks_reduce_to_the_blend_endpoints() {
    let m = small_corpus(1, 6).remove(0);
    let t = skin_tone_target(3, 32, 2).unwrap();
    let matched = histogram_match(&m.albedo, &t.albedo).unwrap();
    let zero = blend_albedo(&m.albedo, &matched, &vec![0.0; 1024]).unwrap();
    assert_eq!(zero, m.albedo);
    let one = blend_albedo(&m.albedo, &matched, &vec![1.0; 1024]).unwrap();
    assert_eq!(one, matched);
}

#[test]
fn augmented_forehead_takes_the_target_tone() {
    let corpus = synthetic_corpus(&CorpusConfig {
        resolution: 64,
        n_samples: 3,
        seed: 13,
    })
    .unwrap();
    for (i, m) in corpus.iter().enumerate() {
        for label in 1u8..=10 {
            let t = skin_tone_target(label, 64, i as u64).unwrap();
            let out = augment_albedo(&m.albedo, &t, &UvRect::FOREHEAD, &MaskParams::default()).unwrap();
            let got = region_mean(&out, &UvRect::FOREHEAD).unwrap();
            let want = region_mean(&t.albedo, &UvRect::FOREHEAD).unwrap();
            for c in 0..3 {
                assert!((got[c] - want[c]).abs() <= 0.02, "sample {i} MST {label}: {got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn monk_swatches_convert_to_linear() {
    let l1 = monk_linear(1).unwrap();
    let expect = |c: u8| {
        let s = c as f64 / 255.0;
        ((s + 0.055) / 1.055).powf(2.4)
    };
    assert!((l1[0] - expect(0xf6)).abs() < 1e-15);
    assert!(monk_linear(0).is_err() && monk_linear(11).is_err());
    let dark = monk_linear(10).unwrap();
    assert!(dark.iter().zip(&l1).all(|(d, l)| d < l));
}

#[test]
fn latent_pca_is_orthonormal_and_isotropic() {
    let corpus = small_corpus(2, 1);
    // Sampling spread of the covariance spectrum grows with the dimension;
    // at D = 64 it already exceeds the 10% band at this sample count.
    let gen = fit_generator(&corpus, 2, 4).unwrap();
    let pcs = latent_pca(&gen, latent::DEFAULT_SAMPLES, 4).unwrap();
    let d = pcs.dim;
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = pcs.component(i).iter().zip(pcs.component(j)).map(|(a, b)| a * b).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot - want).abs() < 1e-9);
        }
    }
    let (lo, hi) = (pcs.explained_variance[d - 1], pcs.explained_variance[0]);
    assert!(hi / lo <= 1.1, "{hi} / {lo}");
    assert!(matches!(latent_pca(&gen, 3, 0), Err(Error::Contract { .. })));
}

#[test]
fn latent_edit_moves_the_chosen_rows() {
    let corpus = small_corpus(2, 1);
    let gen = fit_generator(&corpus, 2, 8).unwrap();
    let pcs = latent_pca(&gen, 200, 4).unwrap();
    let w = LatentW::zeros(2, 8);
    let e = pcs.edit(&w, 0, 2.0, 1..2).unwrap();
    assert!(e.row(0).iter().all(|&v| v == 0.0));
    let len: f64 = e.row(1).iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((len - 2.0 * pcs.explained_variance[0].sqrt()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn affine_in_random_directions(seed in 0u64..1000, s in -3.0f64..3.0) {
        with_small(|_, gen| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_latent(&mut rng, 4, 16, 1.0);
            let ws = LatentW { data: w.data.iter().map(|v| s * v).collect(), ..w.clone() };
            let p0 = pre_squash(gen, &LatentW::zeros(4, 16));
            let p1 = pre_squash(gen, &w);
            let ps = pre_squash(gen, &ws);
            for i in 0..p0.len() {
                prop_assert!(((ps[i] - p0[i]) - s * (p1[i] - p0[i])).abs() < 1e-9);
            }
            Ok(())
        })?;
    }

    #[test]
    fn matching_is_idempotent(seed in 0u64..200, label in 1u8..=10) {
        let m = small_corpus(1, seed).remove(0);
        let t = skin_tone_target(label, 16, seed).unwrap();
        let h = histogram_match(&m.albedo, &t.albedo).unwrap();
        let again = histogram_match(&h, &t.albedo).unwrap();
        let err = again.iter().zip(&h).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1.0 / 256.0);
    }
}

