use super::losses::*;
use super::*;
use crate::geometry;
use crate::reflectance::{fit_generator, psnr, synthetic, ReflectanceMaps};
use crate::synth::{build_fixture, Fixture, SynthConfig};
use crate::tensor::{fd, ConvFilters};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

fn small_synth(yaws: &[f64]) -> SynthConfig {
    SynthConfig {
        resolution: 32,
        map_resolution: 32,
        levels: 4,
        dim: 8,
        corpus_samples: 12,
        subdivisions: 3,
        yaws: yaws.to_vec(),
        seed: 5,
        ..SynthConfig::default()
    }
}

thread_local! {
    static FIXTURE: Rc<Fixture> = Rc::new(build_fixture(&small_synth(&[0.0]), &BankConfig::default()).unwrap());
}

fn fixture() -> Rc<Fixture> {
    FIXTURE.with(|f| f.clone())
}

fn small_cfg(iters_inv: usize, iters_tune: usize) -> FitConfig {
    FitConfig {
        resolution: 32,
        iters_inv,
        iters_tune,
        init_samples: 50,
        ..FitConfig::default()
    }
}

/// Exact (unquantized) renders of a state as targets.
fn exact_targets(state: &FitState, models: &Models) -> Vec<FitTarget> {
    (0..state.n_images())
        .map(|i| FitTarget {
            image: render_view(state, models, &small_cfg(0, 0), i, None, None).unwrap().image,
            landmarks: state_landmarks(state, models, i).unwrap(),
        })
        .collect()
}

/// Truth moved away from the optimum in every parameter group.
fn perturbed(fx: &Fixture, seed: u64) -> FitState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = fx.truth.clone();
    s.stage = Stage::Initialized;
    s.w_init = s.w.clone();
    for v in s.w.data.iter_mut() {
        *v += 0.3 * rng.random_range(-1.0..1.0);
    }
    for (p, e) in s.coeffs.p_s.iter_mut().zip(&fx.models.shape.id_eig) {
        *p += 0.3 * e.sqrt() * rng.random_range(-1.0..1.0);
    }
    let cam = &mut s.per_image[0].camera;
    cam.rotation[1] += 0.05;
    cam.translation[0] += 0.05;
    s.per_image[0].lighting.ambient_raw += 0.1;
    s
}

fn image_tensor(img: &Image) -> Tensor {
    Tensor::new(vec![3, img.height, img.width], img.data.clone())
}

fn random_image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
    Tensor::new(vec![3, side, side], (0..3 * side * side).map(|_| rng.random_range(0.05..0.95)).collect())
}

// ---- landmark loss

#[test]
fn landmark_loss_zero_for_identical_points() {
    let tape = Tape::new();
    let pts: Vec<[f64; 2]> = (0..68).map(|i| [i as f64, 2.0 * i as f64]).collect();
    let pred = tape.param(&Tensor::new(vec![68, 2], pts.iter().flatten().copied().collect()));
    assert_eq!(loss_landmark(pred, &pts, 181.0).item(), 0.0);
}

#[test]
fn landmark_loss_three_four_five() {
    let tape = Tape::new();
    let target: Vec<[f64; 2]> = (0..68).map(|i| [i as f64, 1.0]).collect();
    let mut pred = target.clone();
    pred[10][0] += 3.0;
    pred[10][1] += 4.0;
    let p = tape.param(&Tensor::new(vec![68, 2], pred.iter().flatten().copied().collect()));
    assert!((loss_landmark(p, &target, 1.0).item() - 5.0).abs() < 1e-12);
}

#[test]
fn landmark_loss_gradient_points_away_from_target() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target: Vec<[f64; 2]> = (0..68).map(|_| [rng.random_range(0.0..64.0), rng.random_range(0.0..64.0)]).collect();
    let pred_vals: Vec<f64> = target.iter().flatten().map(|v| v + rng.random_range(-2.0..2.0)).collect();
    let p = tape.param(&Tensor::new(vec![68, 2], pred_vals.clone()));
    let loss = loss_landmark(p, &target, 90.0);
    let r = fd::check(&tape, loss, &[p], 136).unwrap();
    assert!(r.max_rel_err <= 1e-4, "{r:?}");
    tape.backward(loss);
    let g = tape.grad(p).unwrap();
    let toward: f64 = g
        .data()
        .iter()
        .zip(target.iter().flatten().zip(&pred_vals))
        .map(|(g, (t, p))| -g * (t - p))
        .sum();
    assert!(toward > 0.0);
}

// ---- photometric loss

fn full_mask(side: usize) -> Tensor {
    Tensor::full(&[side, side], 1.0)
}

#[test]
fn photometric_loss_identical_is_zero() {
    let tape = Tape::new();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(1), 8);
    let r = tape.param(&img);
    assert_eq!(loss_photometric(&img, r, &full_mask(8)).unwrap().item(), 0.0);
}

#[test]
fn photometric_loss_constant_offset_on_covered_pixels() {
    let tape = Tape::new();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(2), 8);
    let mut mask = full_mask(8);
    mask.data_mut()[..20].iter_mut().for_each(|m| *m = 0.0);
    let shifted: Vec<f64> = img.data().iter().map(|v| v + 0.1).collect();
    // background pixels carry a large error that must be ignored
    let mut shifted = shifted;
    for c in 0..3 {
        for p in 0..20 {
            shifted[c * 64 + p] = 5.0;
        }
    }
    let r = tape.param(&Tensor::new(vec![3, 8, 8], shifted));
    assert!((loss_photometric(&img, r, &mask).unwrap().item() - 0.1).abs() < 1e-12);
}

#[test]
fn photometric_loss_gradient_matches_fd() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_image(&mut rng, 8);
    let r = tape.param(&random_image(&mut rng, 8));
    let loss = loss_photometric(&img, r, &full_mask(8)).unwrap();
    let rep = fd::check(&tape, loss, &[r], 192).unwrap();
    assert!(rep.max_rel_err <= 1e-4, "{rep:?}");
}

#[test]
fn photometric_loss_without_coverage_is_a_domain_error() {
    let tape = Tape::new();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(5), 8);
    let err = loss_photometric(&img, tape.param(&img), &Tensor::zeros(&[8, 8])).unwrap_err();
    assert!(matches!(err, Error::Domain { .. }));
}

// ---- identity and perceptual losses

fn bank() -> FeatureBank {
    FeatureBank::new(&BankConfig::default()).unwrap()
}

fn identity_of(bank: &FeatureBank, target: &Tensor, img: &Tensor) -> f64 {
    let tf = bank.target(target).unwrap();
    let tape = Tape::new();
    let feats = bank.features(tape.constant(img)).unwrap();
    loss_identity(&tf, *feats.last().unwrap()).unwrap().item()
}

#[test]
fn identity_loss_ordering() {
    let b = bank();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let i0 = random_image(&mut rng, 32);
    let noise = random_image(&mut ChaCha8Rng::seed_from_u64(99), 32);
    let blend = Tensor::new(
        vec![3, 32, 32],
        i0.data().iter().zip(noise.data()).map(|(a, n)| 0.5 * a + 0.5 * n).collect(),
    );
    let same = identity_of(&b, &i0, &i0);
    let random = identity_of(&b, &i0, &noise);
    let mid = identity_of(&b, &i0, &blend);
    assert!(same.abs() < 1e-6);
    assert!((0.0..=2.0).contains(&random));
    assert!(same < mid && mid < random, "{same} {mid} {random}");
}

#[test]
fn identity_loss_zero_embedding_is_a_domain_error() {
    let b = bank();
    let i0 = random_image(&mut ChaCha8Rng::seed_from_u64(7), 32);
    let tf = b.target(&i0).unwrap();
    let tape = Tape::new();
    let black = tape.constant(&Tensor::zeros(&[3, 32, 32]));
    let feats = b.features(black).unwrap();
    assert!(matches!(loss_identity(&tf, *feats.last().unwrap()), Err(Error::Domain { .. })));
}

#[test]
fn perceptual_loss_identical_is_zero() {
    let b = bank();
    let i0 = random_image(&mut ChaCha8Rng::seed_from_u64(8), 32);
    let tf = b.target(&i0).unwrap();
    let tape = Tape::new();
    let feats = b.features(tape.constant(&i0)).unwrap();
    assert_eq!(loss_perceptual(&tf, &feats).unwrap().item(), 0.0);
}

#[test]
fn perceptual_loss_with_delta_bank_is_normalized_image_l2() {
    let mut weights = vec![0.0; 9];
    for c in 0..3 {
        weights[c * 3 + c] = 1.0;
    }
    let b = FeatureBank::from_filters(vec![ConvFilters {
        out_ch: 3,
        in_ch: 3,
        size: 1,
        weights,
    }])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (i0, i1) = (random_image(&mut rng, 16), random_image(&mut rng, 16));
    let tape = Tape::new();
    let got = loss_perceptual(&b.target(&i0).unwrap(), &b.features(tape.constant(&i1)).unwrap())
        .unwrap()
        .item();
    let l2 = i0.data().iter().zip(i1.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!((got - l2 / (3.0 * 256.0)).abs() < 1e-14);
}

#[test]
fn perceptual_and_identity_gradients_match_fd() {
    let b = bank();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let i0 = random_image(&mut rng, 32);
    let tf = b.target(&i0).unwrap();
    let tape = Tape::new();
    let r = tape.param(&random_image(&mut rng, 32));
    let feats = b.features(r).unwrap();
    let per = loss_perceptual(&tf, &feats).unwrap();
    let rep = fd::check(&tape, per, &[r], 60).unwrap();
    assert!(rep.max_rel_err <= 1e-4, "perceptual {rep:?}");
    let id = loss_identity(&tf, *feats.last().unwrap()).unwrap();
    let rep = fd::check(&tape, id, &[r], 60).unwrap();
    assert!(rep.max_rel_err <= 1e-4, "identity {rep:?}");
}

#[test]
fn feature_bank_is_seed_deterministic() {
    let i0 = random_image(&mut ChaCha8Rng::seed_from_u64(11), 32);
    let a = bank().target(&i0).unwrap();
    let b = bank().target(&i0).unwrap();
    assert_eq!(a.embedding, b.embedding);
    let other = FeatureBank::new(&BankConfig {
        seed: 1,
        ..BankConfig::default()
    })
    .unwrap()
    .target(&i0)
    .unwrap();
    assert_ne!(a.embedding, other.embedding);
}

#[test]
fn feature_bank_filters_receive_no_gradient() {
    let b = bank();
    let tape = Tape::new();
    let img = tape.param(&random_image(&mut ChaCha8Rng::seed_from_u64(12), 32));
    let feats = b.features(img).unwrap();
    tape.backward(FeatureBank::embedding(*feats.last().unwrap()).sum());
    let params = (0..tape.len()).filter(|_| true).count();
    assert!(params > 0);
    // the image is the only parameter recorded on the tape
    assert!(tape.grad(img).is_some());
}

// ---- latent regularizer

#[test]
fn w_reg_values_and_gradient() {
    let tape = Tape::new();
    let w0 = Tensor::new(vec![4, 8], (0..32).map(|i| i as f64 * 0.1).collect());
    let same = tape.param(&w0);
    assert_eq!(loss_w_reg(same, &w0).item(), 0.0);

    let delta = 0.37;
    let shifted: Vec<f64> = w0.data().iter().map(|v| v + delta).collect();
    let w = tape.param(&Tensor::new(vec![4, 8], shifted.clone()));
    let l = loss_w_reg(w, &w0);
    assert!((l.item() - delta * delta).abs() < 1e-12);
    tape.backward(l);
    let g = tape.grad(w).unwrap();
    for (i, gi) in g.data().iter().enumerate() {
        let expect = 2.0 * (shifted[i] - w0.data()[i]) / 32.0;
        assert!((gi - expect).abs() < 1e-14);
    }
}

// ---- flip and chromaticity

fn albedo_from(r: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Tensor {
    let mut d = Vec::with_capacity(3 * r * r);
    for c in 0..3 {
        for y in 0..r {
            for x in 0..r {
                d.push(f(c, y, x));
            }
        }
    }
    Tensor::new(vec![3, r, r], d)
}

#[test]
fn flip_loss_cases() {
    let tape = Tape::new();
    let r = 8;
    let sym = albedo_from(r, |c, y, x| 0.1 * c as f64 + 0.01 * y as f64 + 0.02 * (x.min(r - 1 - x)) as f64);
    assert_eq!(loss_flip(tape.constant(&sym)).unwrap().item(), 0.0);
    let halves = albedo_from(r, |_, _, x| if x < r / 2 { 0.0 } else { 1.0 });
    assert!((loss_flip(tape.constant(&halves)).unwrap().item() - 1.0).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = albedo_from(r, |_, _, _| rng.random_range(0.1..0.8));
    let b = Tensor::new(vec![3, r, r], a.data().iter().map(|v| v + 0.125).collect());
    let la = loss_flip(tape.constant(&a)).unwrap().item();
    let lb = loss_flip(tape.constant(&b)).unwrap().item();
    assert!((la - lb).abs() < 1e-12);
}

#[test]
fn chroma_loss_cases() {
    let tape = Tape::new();
    let r = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = albedo_from(r, |_, _, _| rng.random_range(0.1..0.45));
    assert_eq!(loss_chroma(tape.constant(&a), &a).unwrap().item(), 0.0);
    let doubled = Tensor::new(vec![3, r, r], a.data().iter().map(|v| 2.0 * v).collect());
    assert!(loss_chroma(tape.constant(&doubled), &a).unwrap().item() < 1e-15);

    // rotate the channels of one texel: same sum, different hue
    let mut rotated = a.clone();
    let n = r * r;
    let t = 7;
    let (c0, c1, c2) = (a.data()[t], a.data()[n + t], a.data()[2 * n + t]);
    rotated.data_mut()[t] = c1;
    rotated.data_mut()[n + t] = c2;
    rotated.data_mut()[2 * n + t] = c0;
    assert!(loss_chroma(tape.constant(&rotated), &a).unwrap().item() > 0.0);
}

#[test]
fn flip_and_chroma_gradients_match_fd() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let a0 = albedo_from(6, |_, _, _| rng.random_range(0.1..0.8));
    let a = tape.param(&albedo_from(6, |_, _, _| rng.random_range(0.1..0.8)));
    let lf = loss_flip(a).unwrap();
    assert!(fd::check(&tape, lf, &[a], 108).unwrap().max_rel_err <= 1e-4);
    let lk = loss_chroma(a, &a0).unwrap();
    assert!(fd::check(&tape, lk, &[a], 108).unwrap().max_rel_err <= 1e-4);
}

// ---- Adam

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut p = vec![0.3, -1.2, 4.0];
    let mut m = AdamMoments::zeros(3);
    adam_step(&mut p, &[0.0; 3], &mut m, 0.1, 1);
    assert_eq!(p, vec![0.3, -1.2, 4.0]);
}

#[test]
fn adam_first_step_is_lr_times_sign() {
    let start = [0.3, -1.2, 4.0, 2.0];
    let g = [2.5, -0.01, 1e3, -7.0];
    let mut p = start.to_vec();
    let mut m = AdamMoments::zeros(4);
    adam_step(&mut p, &g, &mut m, 0.05, 1);
    for i in 0..4 {
        let moved = p[i] - start[i];
        assert!((moved + 0.05 * g[i].signum()).abs() < 1e-6, "{i}: {moved}");
    }
}

#[test]
fn adam_minimizes_a_parabola() {
    let mut x = vec![1.0];
    let mut m = AdamMoments::zeros(1);
    // independent scalar recurrence
    let (mut xr, mut mr, mut vr) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=100u32 {
        let g = 2.0 * x[0];
        adam_step(&mut x, &[g], &mut m, 0.1, t);
        let gr = 2.0 * xr;
        mr = 0.9 * mr + 0.1 * gr;
        vr = 0.999 * vr + 0.001 * gr * gr;
        let mh = mr / (1.0 - 0.9f64.powi(t as i32));
        let vh = vr / (1.0 - 0.999f64.powi(t as i32));
        xr -= 0.1 * mh / (vh.sqrt() + 1e-8);
    }
    assert!(x[0].abs() < 0.02, "{}", x[0]);
    assert!((x[0] - xr).abs() < 1e-12);
}

#[test]
#[should_panic(expected = "contract violation")]
fn adam_rejects_step_zero() {
    adam_step(&mut [1.0], &[1.0], &mut AdamMoments::zeros(1), 0.1, 0);
}

// ---- configuration

#[test]
fn default_config_matches_published_hyperparameters() {
    let c = FitConfig::default();
    let w = c.weights;
    assert_eq!(
        [
            w.landmark,
            w.photometric,
            w.identity,
            w.perceptual,
            w.w_reg,
            w.shape_reg,
            w.expr_reg,
            w.tune_perceptual,
            w.tune_photometric,
            w.flip,
            w.chroma
        ],
        [100.0, 0.5, 1.0, 25.0, 5e-2, 5e-4, 5e-4, 2.0, 0.5, 0.8, 0.35]
    );
    assert_eq!((c.lr_inv, c.lr_tune), (1e-2, 8e-4));
    assert_eq!((c.iters_inv, c.iters_tune), (200, 20));
    assert_eq!(c.init_samples, 1000);
    assert_eq!(FitConfig::with_preset(Preset::Supplemental).iters_inv, 250);
    assert_eq!(FitConfig::with_preset(Preset::Supplemental).iters_tune, 30);
}

#[test]
fn config_toml_round_trip_and_validation() {
    let c = FitConfig::default();
    let text = toml::to_string(&c).unwrap();
    let back: FitConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, c);
    let partial: FitConfig = toml::from_str("iters_inv = 5\n[weights]\nflip = 0.0\n").unwrap();
    assert_eq!(partial.iters_inv, 5);
    assert_eq!(partial.weights.flip, 0.0);
    assert_eq!(partial.weights.chroma, 0.35);
    assert!(toml::from_str::<FitConfig>("bogus = 1").is_err());

    let mut bad = FitConfig::default();
    bad.weights.identity = -1.0;
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

// ---- camera initialization

#[test]
fn camera_init_recovers_frontal_pose() {
    let fx = fixture();
    let cam = init_camera(&fx.models.shape, &fx.targets[0].landmarks, 32, 32, 44.8).unwrap();
    let truth = &fx.truth.per_image[0].camera;
    let r = geometry::mat_mul(&geometry::transpose(&cam.rotation_matrix()), &truth.rotation_matrix());
    let angle = geometry::norm(geometry::rotation_log(&r));
    assert!(angle < 0.05, "rotation off by {angle}");
    assert!((cam.translation[2] - truth.translation[2]).abs() < 0.1 * truth.translation[2]);
    assert!(cam.translation[0].abs() < 0.1 && cam.translation[1].abs() < 0.1);
}

#[test]
fn camera_init_rejects_collinear_landmarks() {
    let fx = fixture();
    let line: Vec<[f64; 2]> = (0..68).map(|i| [i as f64, 2.0 * i as f64 + 1.0]).collect();
    let err = init_camera(&fx.models.shape, &line, 32, 32, 44.8).unwrap_err();
    assert!(matches!(err, Error::Domain { .. }));
    let targets = vec![FitTarget {
        image: fx.targets[0].image.clone(),
        landmarks: line,
    }];
    assert!(matches!(initial_state(&targets, &fx.models, &small_cfg(1, 0)), Err(Error::Domain { .. })));
}

#[test]
fn latent_init_averages_random_draws() {
    let fx = fixture();
    let w = init_latent(&fx.models.generator, 1000, 3);
    let mean = w.data.iter().sum::<f64>() / w.data.len() as f64;
    let max = w.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    // each entry is a mean of 1000 unit normals: sd ~ 0.032
    assert!(mean.abs() < 0.02 && max < 0.15, "{mean} {max}");
    assert_eq!(w, init_latent(&fx.models.generator, 1000, 3));
}

// ---- objectives

#[test]
fn inversion_loss_is_zero_at_the_source_state() {
    let fx = fixture();
    let mut s = fx.truth.clone();
    s.coeffs = ShapeCoeffs::zeros(&fx.models.shape);
    s.stage = Stage::Initialized;
    let targets = exact_targets(&s, &fx.models);
    let rec = total_inversion_loss(&s, &targets, &fx.models, &small_cfg(0, 0)).unwrap();
    assert!(rec.total.abs() < 1e-6, "{rec:?}");
    for c in rec.components() {
        assert!((0.0..1e-6).contains(&c), "{rec:?}");
    }
}

#[test]
fn inversion_loss_decomposes_into_weighted_terms() {
    let fx = fixture();
    let s = perturbed(&fx, 1);
    let cfg = small_cfg(0, 0);
    let rec = total_inversion_loss(&s, &fx.targets, &fx.models, &cfg).unwrap();
    let w = cfg.weights;
    let dot = w.landmark * rec.landmark
        + w.photometric * rec.photometric
        + w.identity * rec.identity
        + w.perceptual * rec.perceptual
        + w.w_reg * rec.w_reg
        + w.shape_reg * rec.shape_reg
        + w.expr_reg * rec.expr_reg;
    assert!((rec.total - dot).abs() < 1e-12, "{} vs {dot}", rec.total);

    // a single active term gives lambda_k times that term
    let names = ["landmark", "photometric", "identity", "perceptual", "w_reg", "shape_reg"];
    for (k, name) in names.iter().enumerate() {
        let mut c = cfg.clone();
        c.weights = LossWeights {
            landmark: 0.0,
            photometric: 0.0,
            identity: 0.0,
            perceptual: 0.0,
            w_reg: 0.0,
            shape_reg: 0.0,
            expr_reg: 0.0,
            ..c.weights
        };
        let lam = 3.5;
        match k {
            0 => c.weights.landmark = lam,
            1 => c.weights.photometric = lam,
            2 => c.weights.identity = lam,
            3 => c.weights.perceptual = lam,
            4 => c.weights.w_reg = lam,
            _ => c.weights.shape_reg = lam,
        }
        let r = total_inversion_loss(&s, &fx.targets, &fx.models, &c).unwrap();
        let term = r.components()[k];
        assert!(term > 0.0, "{name}");
        assert!((r.total - lam * term).abs() <= 1e-12 * r.total.abs().max(1.0), "{name}");
    }
}

#[test]
fn all_zero_weights_give_zero_total() {
    let fx = fixture();
    let mut cfg = small_cfg(0, 0);
    cfg.weights = LossWeights {
        landmark: 0.0,
        photometric: 0.0,
        identity: 0.0,
        perceptual: 0.0,
        w_reg: 0.0,
        shape_reg: 0.0,
        expr_reg: 0.0,
        ..cfg.weights
    };
    let rec = total_inversion_loss(&perturbed(&fx, 2), &fx.targets, &fx.models, &cfg).unwrap();
    assert_eq!(rec.total, 0.0);
}

fn duplicated(fx: &Fixture, s: &FitState, n: usize) -> (FitState, Vec<FitTarget>) {
    let mut d = s.clone();
    d.per_image = vec![s.per_image[0].clone(); n];
    (d, vec![fx.targets[0].clone(); n])
}

#[test]
fn batch_of_identical_images_equals_single_loss() {
    let fx = fixture();
    let s = perturbed(&fx, 3);
    let cfg = small_cfg(0, 0);
    let single = total_inversion_loss(&s, &fx.targets, &fx.models, &cfg).unwrap();
    let (d, t) = duplicated(&fx, &s, 2);
    let double = total_inversion_loss(&d, &t, &fx.models, &cfg).unwrap();
    assert!((single.total - double.total).abs() < 1e-12 * single.total);
}

#[test]
fn full_chain_gradient_matches_fd() {
    let fx = fixture();
    let s = perturbed(&fx, 4);
    let cfg = small_cfg(0, 0);
    let prep = prepare(&fx.targets, &fx.models, &cfg).unwrap();
    let tape = Tape::new();
    let ev = build(&tape, &s, &prep, &fx.models, &cfg, Objective::Inversion).unwrap();
    let rep = fd::check(&tape, ev.total, &ev.leaves, 12).unwrap();
    assert!(rep.max_rel_err <= 1e-4, "{rep:?}");
}

fn inverted(fx: &Fixture, iters: usize) -> FitState {
    let mut s = perturbed(fx, 5);
    invert(&mut s, &fx.targets, &fx.models, &small_cfg(iters, 0)).unwrap();
    s
}

#[test]
fn tuning_objective_gradient_matches_fd() {
    let fx = fixture();
    let mut s = inverted(&fx, 2);
    s.albedo_init = Some(s.maps(&fx.models).unwrap().albedo);
    let band = s.offsets.band();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for l in band {
        let row: Vec<f64> = (0..s.offsets.dim).map(|_| rng.random_range(-0.2..0.2)).collect();
        s.offsets.set_row(l, &row).unwrap();
    }
    let cfg = small_cfg(0, 0);
    let prep = prepare(&fx.targets, &fx.models, &cfg).unwrap();
    let tape = Tape::new();
    let ev = build(&tape, &s, &prep, &fx.models, &cfg, Objective::Tuning).unwrap();
    assert_eq!(ev.leaves.len(), 1);
    let rep = fd::check(&tape, ev.total, &ev.leaves, 16).unwrap();
    assert!(rep.max_rel_err <= 1e-4, "{rep:?}");
}

#[test]
fn tuning_starts_from_the_inversion_optimum() {
    let fx = fixture();
    let s = inverted(&fx, 3);
    let cfg = small_cfg(0, 2);
    let before = total_tuning_loss(&s, &fx.targets, &fx.models, &cfg).unwrap();
    let tuned = fit_tuning(s, &fx.targets, &fx.models, &cfg).unwrap();
    assert_eq!(tuned.tuning_trace[0].total, before.total);
    assert_eq!(tuned.tuning_trace[0].flip, before.flip);
    assert_eq!(before.chroma, 0.0);
}

#[test]
fn tuning_stage_contracts() {
    let fx = fixture();
    let cfg = small_cfg(2, 2);
    let fresh = perturbed(&fx, 7);
    assert!(matches!(
        fit_tuning(fresh.clone(), &fx.targets, &fx.models, &cfg),
        Err(Error::Contract { .. })
    ));
    assert!(matches!(
        total_tuning_loss(&fresh, &fx.targets, &fx.models, &cfg),
        Err(Error::Contract { .. })
    ));
    let tuned = fit_tuning(inverted(&fx, 2), &fx.targets, &fx.models, &cfg).unwrap();
    assert!(matches!(
        fit_tuning(tuned.clone(), &fx.targets, &fx.models, &cfg),
        Err(Error::Contract { .. })
    ));
    let mut again = tuned;
    assert!(matches!(invert(&mut again, &fx.targets, &fx.models, &cfg), Err(Error::Contract { .. })));
}

#[test]
fn tuning_freezes_everything_but_band_offsets() {
    let fx = fixture();
    let s = inverted(&fx, 4);
    let tuned = fit_tuning(s.clone(), &fx.targets, &fx.models, &small_cfg(0, 4)).unwrap();
    assert_eq!(tuned.w, s.w);
    assert_eq!(tuned.w_init, s.w_init);
    assert_eq!(tuned.coeffs, s.coeffs);
    assert_eq!(tuned.per_image, s.per_image);
    assert!(!tuned.offsets.is_zero());
    let band = tuned.offsets.band();
    for l in (0..tuned.offsets.levels).filter(|l| !band.contains(l)) {
        assert!(tuned.offsets.row(l).iter().all(|&v| v == 0.0));
    }
    let mut o = tuned.offsets.clone();
    assert!(matches!(o.set_row(0, &vec![1.0; o.dim]), Err(Error::Contract { .. })));
}

/// Generator whose albedo is spatially uniform for every latent, so the
/// flip term and its gradient vanish exactly.
fn uniform_albedo_models(fx: &Fixture) -> Models {
    let r = 32;
    let n = r * r;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let corpus: Vec<ReflectanceMaps> = synthetic::synthetic_corpus(&synthetic::CorpusConfig {
        resolution: r,
        n_samples: 12,
        seed: 3,
    })
    .unwrap()
    .into_iter()
    .map(|mut m| {
        for c in 0..3 {
            let v = rng.random_range(0.2..0.6);
            m.albedo[c * n..(c + 1) * n].iter_mut().for_each(|a| *a = v);
        }
        m
    })
    .collect();
    Models {
        shape: fx.models.shape.clone(),
        generator: fit_generator(&corpus, 4, 8).unwrap(),
        bank: fx.models.bank.clone(),
    }
}

#[test]
fn regularizer_only_tuning_keeps_offsets_at_zero() {
    let fx = fixture();
    let models = uniform_albedo_models(&fx);
    let mut s = FitState::at(&models, LatentW::zeros(4, 8), fx.truth.coeffs.clone(), fx.truth.per_image.clone()).unwrap();
    let mut cfg = small_cfg(2, 5);
    invert(&mut s, &fx.targets, &models, &cfg).unwrap();
    cfg.weights.tune_perceptual = 0.0;
    cfg.weights.tune_photometric = 0.0;
    let tuned = fit_tuning(s, &fx.targets, &models, &cfg).unwrap();
    assert!(tuned.offsets.is_zero(), "{:?}", tuned.offsets.data);
    assert!(tuned.tuning_trace.iter().all(|r| r.total == 0.0));
}

#[test]
fn tuning_does_not_lower_round_trip_psnr() {
    let fx = fixture();
    let cfg = small_cfg(40, 10);
    let s = fit_inversion(&fx.targets, &fx.models, &cfg).unwrap();
    let before = psnr(&render_view(&s, &fx.models, &cfg, 0, None, None).unwrap().image.data, &fx.targets[0].image.data);
    let t = fit_tuning(s, &fx.targets, &fx.models, &cfg).unwrap();
    let after = psnr(&render_view(&t, &fx.models, &cfg, 0, None, None).unwrap().image.data, &fx.targets[0].image.data);
    assert!(after >= before, "{before} -> {after}");
}

// ---- fitting loops

#[test]
fn fixed_point_trace_stays_at_zero() {
    let fx = fixture();
    let mut s = fx.truth.clone();
    s.coeffs = ShapeCoeffs::zeros(&fx.models.shape);
    s.stage = Stage::Initialized;
    let targets = exact_targets(&s, &fx.models);
    invert(&mut s, &targets, &fx.models, &small_cfg(10, 0)).unwrap();
    let tr = &s.inversion_trace;
    assert_eq!(tr.len(), 11);
    for pair in tr.windows(2) {
        assert!(pair[1].total <= pair[0].total + 1e-12, "{:?}", tr.iter().map(|r| r.total).collect::<Vec<_>>());
    }
    assert!(tr.iter().all(|r| r.total < 1e-6), "{:?}", tr.last());
}

#[test]
fn inversion_reduces_photometric_error() {
    let fx = fixture();
    let s = fit_inversion(&fx.targets, &fx.models, &small_cfg(60, 0)).unwrap();
    let first = s.inversion_trace.first().unwrap();
    let last = s.inversion_trace.last().unwrap();
    assert!(last.photometric < 0.02, "{last:?}");
    assert!(last.total < first.total);
    assert_eq!(s.stage, Stage::Inverted);
}

#[test]
fn smoothed_loss_trend_is_non_increasing() {
    let fx = fixture();
    let s = fit_inversion(&fx.targets, &fx.models, &small_cfg(60, 0)).unwrap();
    let totals: Vec<f64> = s.inversion_trace.iter().map(|r| r.total).collect();
    let smooth: Vec<f64> = totals.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    let ok = smooth.windows(2).filter(|p| p[1] <= p[0]).count();
    assert!(ok as f64 >= 0.95 * (smooth.len() - 1) as f64, "{ok} of {}", smooth.len() - 1);
}

#[test]
fn fits_are_seed_deterministic() {
    let fx = fixture();
    let cfg = small_cfg(5, 3);
    let a = fit(&fx.targets, &fx.models, &cfg).unwrap();
    let b = fit(&fx.targets, &fx.models, &cfg).unwrap();
    assert_eq!(a, b);
    let c = fit(&fx.targets, &fx.models, &FitConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.w_init, c.w_init);
}

#[test]
fn duplicated_views_follow_the_single_view_fit() {
    let fx = fixture();
    let cfg = small_cfg(8, 3);
    let single = fit(&fx.targets, &fx.models, &cfg).unwrap();
    let (_, targets) = duplicated(&fx, &fx.truth, 3);
    let multi = fit_multi(&targets, &fx.models, &cfg).unwrap();
    for (a, b) in multi.w.data.iter().zip(&single.w.data) {
        assert!((a - b).abs() < 1e-9);
    }
    for (a, b) in multi.inversion_trace.iter().zip(&single.inversion_trace) {
        assert!((a.total - b.total).abs() < 1e-9 * b.total.max(1.0));
    }
}

#[test]
fn multi_fit_contracts() {
    let fx = fixture();
    let cfg = small_cfg(1, 0);
    assert!(matches!(fit_multi(&fx.targets, &fx.models, &cfg), Err(Error::Contract { .. })));
    let mut other = fx.targets[0].clone();
    other.image = Image::new(16, 16, vec![0.5; 3 * 256]).unwrap();
    let targets = vec![fx.targets[0].clone(), other];
    assert!(matches!(fit_multi(&targets, &fx.models, &cfg), Err(Error::Contract { .. })));
}

#[test]
fn multi_fit_shares_latent_and_identity() {
    let fx = Rc::new(build_fixture(&small_synth(&[0.0, 0.4]), &BankConfig::default()).unwrap());
    let cfg = FitConfig {
        per_image_expression: true,
        ..small_cfg(3, 0)
    };
    let s = fit_multi(&fx.targets, &fx.models, &cfg).unwrap();
    assert_eq!(s.n_images(), 2);
    assert!(s.per_image.iter().all(|p| p.expression.is_some()));
    assert_ne!(s.per_image[0].camera, s.per_image[1].camera);
    assert_ne!(s.per_image[0].expression, s.per_image[1].expression);
}

// ---- checkpoints and interpolation

#[test]
fn checkpoint_round_trip_is_exact() {
    let fx = fixture();
    let s = fit(&fx.targets, &fx.models, &small_cfg(3, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("fit.fmfs");
    save_state(&s, &p).unwrap();
    assert_eq!(load_state(&p).unwrap(), s);

    let mut bytes = std::fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&p, &bytes).unwrap();
    let err = load_state(&p).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn loss_csv_has_one_row_per_record() {
    let fx = fixture();
    let s = fit(&fx.targets, &fx.models, &small_cfg(3, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("loss.csv");
    write_loss_csv(&s, &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "stage,iter,landmark,photometric,identity,perceptual,w_reg,shape_reg,expr_reg,flip,chroma,total");
    assert_eq!(lines.len(), 1 + 4 + 3);
    assert!(lines[1].starts_with("inversion,0,"));
    assert!(lines[7].starts_with("tuning,2,"));
}

#[test]
fn interpolation_endpoints_and_range() {
    let fx = fixture();
    let a = inverted(&fx, 1);
    let mut b = a.clone();
    b.w.data.iter_mut().for_each(|v| *v += 1.0);
    b.coeffs.p_s.iter_mut().for_each(|v| *v *= -1.0);
    assert_eq!(interpolate_fit(&a, &b, 0.0).unwrap().w, a.w);
    assert_eq!(interpolate_fit(&a, &b, 1.0).unwrap().w, b.w);
    let mid = interpolate_fit(&a, &b, 0.5).unwrap();
    assert!((mid.w.data[0] - (a.w.data[0] + 0.5)).abs() < 1e-12);
    assert!(matches!(interpolate_fit(&a, &b, 1.5), Err(Error::Contract { .. })));
    let mut c = a.clone();
    c.coeffs.p_s.pop();
    assert!(matches!(interpolate_fit(&a, &c, 0.5), Err(Error::Contract { .. })));
}

#[test]
fn render_view_without_overrides_matches_targets() {
    let fx = fixture();
    let r = render_view(&fx.truth, &fx.models, &small_cfg(0, 0), 0, None, None).unwrap();
    for (a, b) in r.image.data.iter().zip(&fx.targets[0].image.data) {
        assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_loss_is_nonnegative(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = bank();
        let i0 = random_image(&mut rng, 32);
        let i1 = random_image(&mut rng, 32);
        let tf = b.target(&i0).unwrap();
        let tape = Tape::new();
        let r = tape.constant(&i1);
        let feats = b.features(r).unwrap();
        prop_assert!(loss_photometric(&i0, r, &full_mask(32)).unwrap().item() >= 0.0);
        prop_assert!(loss_perceptual(&tf, &feats).unwrap().item() >= 0.0);
        prop_assert!(loss_identity(&tf, *feats.last().unwrap()).unwrap().item() >= -1e-15);
        let albedo = albedo_from(8, |_, _, _| rng.random_range(0.0..1.0));
        let init = albedo_from(8, |_, _, _| rng.random_range(0.0..1.0));
        prop_assert!(loss_flip(tape.constant(&albedo)).unwrap().item() >= 0.0);
        prop_assert!(loss_chroma(tape.constant(&albedo), &init).unwrap().item() >= 0.0);
        let w = tape.constant(&albedo);
        prop_assert!(loss_w_reg(w, &init).item() >= 0.0);
    }

    #[test]
    fn losses_vanish_against_their_own_source(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = bank();
        let i0 = random_image(&mut rng, 32);
        let tf = b.target(&i0).unwrap();
        let tape = Tape::new();
        let r = tape.constant(&i0);
        let feats = b.features(r).unwrap();
        prop_assert!(loss_photometric(&i0, r, &full_mask(32)).unwrap().item() < 1e-6);
        prop_assert!(loss_perceptual(&tf, &feats).unwrap().item() < 1e-6);
        prop_assert!(loss_identity(&tf, *feats.last().unwrap()).unwrap().item().abs() < 1e-6);
        let a = albedo_from(8, |_, _, _| rng.random_range(0.05..1.0));
        prop_assert!(loss_chroma(tape.constant(&a), &a).unwrap().item() < 1e-6);
    }

    #[test]
    fn inversion_total_is_the_weighted_sum(weights in proptest::collection::vec(0.0f64..50.0, 7)) {
        let fx = fixture();
        let s = perturbed(&fx, 9);
        let mut cfg = small_cfg(0, 0);
        cfg.weights = LossWeights {
            landmark: weights[0],
            photometric: weights[1],
            identity: weights[2],
            perceptual: weights[3],
            w_reg: weights[4],
            shape_reg: weights[5],
            expr_reg: weights[6],
            ..cfg.weights
        };
        let rec = total_inversion_loss(&s, &fx.targets, &fx.models, &cfg).unwrap();
        let c = rec.components();
        let dot: f64 = weights.iter().zip(&c[..7]).map(|(w, c)| w * c).sum();
        prop_assert!((rec.total - dot).abs() <= 1e-12 * dot.abs().max(1.0));
    }
}

#[test]
fn image_tensor_helper_keeps_layout() {
    let fx = fixture();
    let t = image_tensor(&fx.targets[0].image);
    assert_eq!(t.shape(), &[3, 32, 32]);
}
