//! End-to-end acceptance checks, one line per criterion:
//!
//! 1. gradient suite against central differences
//! 2. single-view synthetic round trip
//! 3. joint multi-view fit against single-view fits
//! 4. shading oracles
//! 5. shape reconstruction and augmentation exactness
//! 6. published hyperparameters
//! 7. stage contracts between inversion and tuning
//! 8. augmentation throughput
//! 9. determinism of criteria 2 and 3
//!
//! Runs as a single test so the timed criteria do not share the CPU.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use facefit::cli::{self, AugmentConfig, Manifest, Overrides, RunConfig, SynthRun};
use facefit::fitting::{self, BankConfig, FitConfig, FitState, Preset, Stage};
use facefit::geometry::{self, Vec3};
use facefit::gradcheck::{self, GradcheckConfig, Scope};
use facefit::io::{load_image, save_png16};
use facefit::reflectance::{self, augment_albedo, histogram_match, psnr, MaskParams, SkinToneTarget, UvRect};
use facefit::render::{self, shade_diffuse, shade_specular, Lighting};
use facefit::shape;
use facefit::synth::{build_fixture, load_fixture, SynthConfig};
use facefit::{Tape, Tensor, Var};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

// 1

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let items = gradcheck::run(Scope::Full, &GradcheckConfig::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let worst = items.iter().map(|i| i.report.max_rel_err).fold(0.0, f64::max);
    let failing: Vec<&str> = items.iter().filter(|i| !i.passed()).map(|i| i.name.as_str()).collect();
    let chain = items.iter().any(|i| i.name == "inversion objective") && items.iter().any(|i| i.name == "tuning objective");
    check(
        failing.is_empty() && chain && secs <= 60.0,
        format!("{} items, worst rel err {worst:.2e}, {secs:.1} s, failing {failing:?}", items.len()),
    )
}

// 2, 3, 7, 9

struct RoundTrip {
    fixture: PathBuf,
    out: PathBuf,
    outcome: cli::FitOutcome,
    secs: f64,
}

fn synth_and_fit(name: &str, synth: SynthConfig, out_name: &str) -> RoundTrip {
    let root = scratch(name);
    let fixture = root.join("fixture");
    let s = cli::cmd_synth(&SynthRun {
        synth,
        bank: BankConfig::default(),
        output: fixture.clone(),
    })
    .unwrap();
    fit_from(&fixture, &s.run_config, &root.join(out_name))
}

fn fit_from(fixture: &Path, run_config: &Path, out: &Path) -> RoundTrip {
    let mut cfg = RunConfig::load(run_config).unwrap();
    Overrides {
        preset: Some(Preset::MainText),
        out: Some(out.to_path_buf()),
        ..Overrides::default()
    }
    .apply(&mut cfg);
    let t = Instant::now();
    let outcome = cli::cmd_fit(&cfg).unwrap();
    RoundTrip {
        fixture: fixture.to_path_buf(),
        out: out.to_path_buf(),
        outcome,
        secs: t.elapsed().as_secs_f64(),
    }
}

fn single_view_round_trip(rt: &RoundTrip) -> Outcome {
    let (_, truth, _) = load_fixture(&rt.fixture, &BankConfig::default()).unwrap();
    let o = &rt.outcome;
    let p_err = l2(&o.state.coeffs.p_s, &truth.coeffs.p_s) / l2(&truth.coeffs.p_s, &vec![0.0; truth.coeffs.p_s.len()]);
    check(
        o.psnr[0] >= 30.0 && o.landmark_error[0] <= 1.0 && p_err <= 0.15 && rt.secs <= 300.0,
        format!(
            "psnr {:.2} dB, landmark error {:.3} px, p_s rel err {:.3}, {:.1} s",
            o.psnr[0], o.landmark_error[0], p_err, rt.secs
        ),
    )
}

fn multi_view_superiority(rt: &RoundTrip) -> Outcome {
    let (models, truth, targets) = load_fixture(&rt.fixture, &BankConfig::default()).unwrap();
    let joint = l2(&rt.outcome.state.w.data, &truth.w.data);
    let cfg = RunConfig::load(&rt.out.join(cli::CONFIG_FILE)).unwrap().fit;
    let singles: Vec<f64> = (0..targets.len())
        .map(|i| {
            let s = fitting::fit(&targets[i..i + 1], &models, &cfg).unwrap();
            l2(&s.w.data, &truth.w.data)
        })
        .collect();
    let worst = singles.iter().cloned().fold(0.0, f64::max);
    let min_psnr = rt.outcome.psnr.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        rt.outcome.psnr.len() == 3 && joint < worst && min_psnr >= 28.0,
        format!(
            "joint W err {joint:.3} vs single {singles:.3?}, per-view psnr {:.2?} dB, {:.1} s",
            rt.outcome.psnr, rt.secs
        ),
    )
}

fn same_scene(a: &FitState, b: &FitState) -> bool {
    a.w == b.w && a.coeffs == b.coeffs && a.per_image == b.per_image
}

fn stage_contracts(rt: &RoundTrip) -> Outcome {
    let (models, _, targets) = load_fixture(&rt.fixture, &BankConfig::default()).unwrap();
    let cfg = RunConfig::load(&rt.out.join(cli::CONFIG_FILE)).unwrap().fit;
    let inverted = fitting::fit_inversion(&targets, &models, &cfg).unwrap();
    let tuned = fitting::fit_tuning(inverted.clone(), &targets, &models, &cfg).unwrap();

    let frozen = same_scene(&inverted, &tuned) && same_scene(&tuned, &rt.outcome.state);
    let band = tuned.offsets.band();
    let outside_zero = (0..tuned.offsets.levels)
        .filter(|l| !band.contains(l))
        .all(|l| tuned.offsets.row(l).iter().all(|&v| v == 0.0));
    let moved = tuned.offsets.band_values().iter().any(|&v| v != 0.0);
    let render = |s: &FitState| {
        let r = fitting::render_view(s, &models, &cfg, 0, None, None).unwrap();
        psnr(&r.image.data, &targets[0].image.data)
    };
    let (p_inv, p_tune) = (render(&inverted), render(&tuned));
    check(
        frozen && outside_zero && moved && tuned.stage == Stage::Tuned && p_tune >= p_inv,
        format!(
            "frozen {frozen}, offsets outside band zero {outside_zero}, band moved {moved}, psnr {p_inv:.2} -> {p_tune:.2} dB"
        ),
    )
}

fn determinism(first: &[&RoundTrip]) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (k, rt) in first.iter().enumerate() {
        let again = fit_from(&rt.fixture, &rt.fixture.join("run.toml"), &rt.out.with_extension("rerun"));
        let a = Manifest::load(&rt.out.join(cli::MANIFEST_FILE)).unwrap();
        let b = Manifest::load(&again.out.join(cli::MANIFEST_FILE)).unwrap();
        let same = a.outputs == b.outputs && a.mismatches(&rt.out).unwrap().is_empty();
        ok &= same;
        notes.push(format!("criterion {}: {} files identical {same}", k + 2, a.outputs.len()));
    }
    check(ok, notes.join(", "))
}

// 4

fn rows<'t>(tape: &'t Tape, data: Vec<f64>, c: usize) -> Var<'t> {
    let p = data.len() / c;
    tape.constant(&Tensor::new(vec![p, c], data))
}

fn lights<'t>(tape: &'t Tape, l: &[(Vec3, [f64; 3])], ambient: f64, s: f64) -> render::LightingVars<'t> {
    Lighting::new(ambient, l, s).unwrap().vars(tape, false).unwrap()
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    geometry::normalized([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..-0.2)])
}

fn shading_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tape = Tape::new();
    let mut worst_mirror = 0.0f64;
    let mut worst_swap = 0.0f64;
    let mut worst_orth = 0.0f64;
    for _ in 0..200 {
        let (l, v) = (unit(&mut rng), unit(&mut rng));
        let c = [rng.random_range(0.1..2.0), rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)];
        let s = rng.random_range(1.0..80.0);
        let a_s = rng.random_range(0.0..1.0);
        let h = geometry::normalized(geometry::add(l, v));
        let u = shade_specular(rows(&tape, vec![a_s], 1), rows(&tape, h.to_vec(), 3), rows(&tape, v.to_vec(), 3), &lights(&tape, &[(l, c)], 1.0, s)).unwrap();
        for k in 0..3 {
            worst_mirror = worst_mirror.max((u.data()[k] - a_s * c[k]).abs());
        }

        let n = unit(&mut rng);
        let x = shade_specular(rows(&tape, vec![a_s], 1), rows(&tape, n.to_vec(), 3), rows(&tape, v.to_vec(), 3), &lights(&tape, &[(l, c)], 1.0, s)).unwrap();
        let y = shade_specular(rows(&tape, vec![a_s], 1), rows(&tape, n.to_vec(), 3), rows(&tape, l.to_vec(), 3), &lights(&tape, &[(v, c)], 1.0, s)).unwrap();
        worst_swap = worst_swap.max(l2(&x.data(), &y.data()));

        let perp = geometry::normalized(geometry::cross(n, unit(&mut rng)));
        let d = shade_diffuse(rows(&tape, vec![0.7, 0.5, 0.4], 3), rows(&tape, n.to_vec(), 3), &lights(&tape, &[(perp, c)], 0.9, s));
        worst_orth = worst_orth.max(d.data().iter().map(|x| x.abs()).fold(0.0, f64::max));
    }

    // superposition of whole renders
    let fx = build_fixture(
        &SynthConfig {
            resolution: 64,
            map_resolution: 32,
            levels: 4,
            dim: 8,
            corpus_samples: 12,
            subdivisions: 3,
            ..SynthConfig::default()
        },
        &BankConfig::default(),
    )
    .unwrap();
    let a = ([-0.4, -0.2, -1.0], [1.0, 0.9, 0.8]);
    let b = ([0.5, 0.1, -0.8], [0.3, 0.4, 0.6]);
    let linear = |ls: &[(Vec3, [f64; 3])]| -> Vec<f64> {
        let tape = Tape::new();
        let gen = reflectance::generate(&fx.models.generator, tape.constant(&fx.truth.w.tensor()), None).unwrap();
        let cam = &fx.truth.per_image[0].camera;
        let out = render::render(
            tape.constant(&fx.truth.positions(&fx.models, 0).unwrap()),
            &fx.models.shape.mesh,
            &gen.maps,
            cam,
            &cam.vars(&tape, false),
            &lights(&tape, ls, 0.8, 20.0),
            &FitConfig::default().render_settings(),
        )
        .unwrap();
        out.linear.data().to_vec()
    };
    let both = linear(&[a, b]);
    let (ra, rb) = (linear(&[a]), linear(&[b]));
    let worst_sum = both.iter().zip(ra.iter().zip(&rb)).map(|(x, (y, z))| (x - (y + z)).abs()).fold(0.0, f64::max);
    check(
        worst_mirror <= 1e-12 && worst_orth <= 1e-12 && worst_sum <= 1e-12 && worst_swap <= 1e-12,
        format!("mirror {worst_mirror:.1e}, orthogonal diffuse {worst_orth:.1e}, superposition {worst_sum:.1e}, swap {worst_swap:.1e}"),
    )
}

// 5

/// Exact 1-D earth mover's distance between two empirical distributions.
fn emd(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut pts: Vec<f64> = a.iter().chain(&b).cloned().collect();
    pts.sort_by(f64::total_cmp);
    let cdf = |s: &[f64], x: f64| s.partition_point(|&v| v <= x) as f64 / s.len() as f64;
    pts.windows(2).map(|w| (cdf(&a, w[0]) - cdf(&b, w[0])).abs() * (w[1] - w[0])).sum()
}

fn exactness() -> Outcome {
    let model = shape::synthetic::synthetic_shape_model(&shape::synthetic::SyntheticShapeConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_shape = 0.0f64;
    for _ in 0..3 {
        let p_s: Vec<f64> = model.id_eig.iter().map(|e| e.sqrt() * rng.random_range(-2.0..2.0)).collect();
        let p_e: Vec<f64> = model.expr_eig.iter().map(|e| e.sqrt() * rng.random_range(-2.0..2.0)).collect();
        let tape = Tape::new();
        let s = shape::reconstruct_shape(&model, tape.constant(&Tensor::new(vec![p_s.len()], p_s.clone())), tape.constant(&Tensor::new(vec![p_e.len()], p_e.clone()))).unwrap();
        let (ks, ke) = (p_s.len(), p_e.len());
        for r in 0..model.mean.len() {
            let mut v = model.mean[r];
            for k in 0..ks {
                v += model.id_basis[r * ks + k] * p_s[k];
            }
            for k in 0..ke {
                v += model.expr_basis[r * ke + k] * p_e[k];
            }
            worst_shape = worst_shape.max((s.data()[r] - v).abs());
        }
    }

    let src = reflectance::synthetic::synthetic_corpus(&reflectance::synthetic::CorpusConfig {
        resolution: 64,
        n_samples: 1,
        seed: 3,
    })
    .unwrap()
    .remove(0)
    .albedo;
    let tgt = reflectance::synthetic::skin_tone_target(9, 48, 2).unwrap();
    let rect = UvRect::FOREHEAD;
    let none = augment_albedo(&src, &tgt, &rect, &MaskParams { d_lo: -2.0, d_hi: -1.0 }).unwrap();
    let all = augment_albedo(&src, &tgt, &rect, &MaskParams { d_lo: 10.0, d_hi: 11.0 }).unwrap();
    let matched = histogram_match(&src, &tgt.albedo).unwrap();
    let identity = none == src;
    let pure = all == matched;
    let (ns, nt) = (64 * 64, 48 * 48);
    let worst_emd = (0..3)
        .map(|c| emd(&matched[c * ns..(c + 1) * ns], &tgt.albedo[c * nt..(c + 1) * nt]))
        .fold(0.0, f64::max);
    check(
        worst_shape <= 1e-12 && identity && pure && worst_emd <= 2.0 / 255.0,
        format!(
            "shape vs naive product {worst_shape:.1e}, M=0 identical {identity}, M=1 equals match {pure}, EMD {:.3}/255",
            worst_emd * 255.0
        ),
    )
}

// 6

fn hyperparameters() -> Outcome {
    let c = FitConfig::default();
    let w = c.weights;
    let got = w.as_array();
    let table = [100.0, 0.5, 1.0, 25.0, 5e-2, 5e-4, 5e-4, 2.0, 0.5, 0.8, 0.35];
    let sup = FitConfig::with_preset(Preset::Supplemental);
    check(
        got == table && (c.lr_inv, c.lr_tune) == (1e-2, 8e-4) && (c.iters_inv, c.iters_tune) == (200, 20) && (sup.iters_inv, sup.iters_tune) == (250, 30),
        format!("weights {got:?}, lr {} / {}, iterations {}/{} and {}/{}", c.lr_inv, c.lr_tune, c.iters_inv, c.iters_tune, sup.iters_inv, sup.iters_tune),
    )
}

// 8

fn throughput() -> Outcome {
    let dir = scratch("throughput");
    let src = reflectance::synthetic::synthetic_corpus(&reflectance::synthetic::CorpusConfig {
        resolution: 1024,
        n_samples: 1,
        seed: 8,
    })
    .unwrap()
    .remove(0)
    .albedo;
    let tgt = SkinToneTarget::new(reflectance::synthetic::skin_tone_target(3, 1024, 1).unwrap().albedo, 3).unwrap();
    let (pa, pt) = (dir.join("albedo.png"), dir.join("target.png"));
    save_png16(&pa, 3, 1024, 1024, &src).unwrap();
    save_png16(&pt, 3, 1024, 1024, &tgt.albedo).unwrap();
    let mut cfg = AugmentConfig::new(&pa, &pt, &dir.join("out"));
    cfg.mst = Some(3);
    let t = Instant::now();
    let o = cli::cmd_augment(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let written = load_image(&dir.join("out").join("albedo.png")).unwrap();
    check(
        secs <= 2.5 && o.albedo.len() == 3 * 1024 * 1024 && written.width == 1024,
        format!("1024x1024 in {secs:.2} s including file I/O"),
    )
}

#[test]
fn acceptance() {
    let mut lines = Vec::new();
    let mut run = |k: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &res {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        let line = format!("criterion {k} {tag} {name}: {detail}");
        writeln!(std::io::stdout().lock(), "{line}").unwrap();
        lines.push((res.is_ok(), line));
    };

    run(1, "gradient suite", &mut gradient_suite);
    let mut single = None;
    let mut multi = None;
    run(2, "single-view round trip", &mut || {
        let rt = synth_and_fit("single", SynthConfig::default(), "fit");
        let out = single_view_round_trip(&rt);
        single = Some(rt);
        out
    });
    run(3, "multi-view superiority", &mut || {
        let rt = synth_and_fit("multi", SynthConfig::three_view(), "fit");
        let out = multi_view_superiority(&rt);
        multi = Some(rt);
        out
    });
    run(4, "shading oracles", &mut shading_oracles);
    run(5, "shape and augmentation exactness", &mut exactness);
    run(6, "hyperparameters", &mut hyperparameters);
    run(7, "stage contracts", &mut || stage_contracts(single.as_ref().ok_or("criterion 2 did not finish")?));
    run(8, "augmentation throughput", &mut throughput);
    run(9, "determinism", &mut || {
        let (a, b) = (single.as_ref().ok_or("criterion 2 did not finish")?, multi.as_ref().ok_or("criterion 3 did not finish")?);
        determinism(&[a, b])
    });

    let failed: Vec<&String> = lines.iter().filter(|(ok, _)| !ok).map(|(_, l)| l).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}
