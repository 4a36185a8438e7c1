//! Finite-difference verification of every differentiable piece: tape ops,
//! shading and geometry stages, losses, and the full render-to-loss chain.
//!
//! Each item is checked on [`DRAWS`] independent random inputs and reported
//! as the worst relative error over them.

use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fitting::{self, losses, BankConfig, FeatureBank, FitConfig, FitState, Stage};
use crate::reflectance::{self, synthetic::CorpusConfig, PyramidGenerator, TuneOffsets};
use crate::render::{self, Camera, Lighting, RenderSettings};
use crate::shape::synthetic::{synthetic_shape_model, SyntheticShapeConfig};
use crate::shape::{self, PcaShapeModel};
use crate::synth::{build_fixture, SynthConfig};
use crate::tensor::fd::{self, FdReport};
use crate::tensor::{ConvFilters, SparseRows, Tape, Tensor, Var};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Random inputs per item.
pub const DRAWS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Shading,
    Losses,
    /// Everything above plus the fitting objectives end to end.
    Full,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ops" => Ok(Scope::Ops),
            "shading" => Ok(Scope::Shading),
            "losses" => Ok(Scope::Losses),
            "full" => Ok(Scope::Full),
            "" => Err(Error::Config("empty gradcheck scope; expected ops, shading, losses or full".into())),
            other => Err(Error::Config(format!("unknown gradcheck scope {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradItem {
    pub name: String,
    pub report: FdReport,
}

impl GradItem {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err <= TOLERANCE
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    /// Target side for the end-to-end chain.
    pub resolution: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { resolution: 64, seed: 0 }
    }
}

pub fn run(scope: Scope, cfg: &GradcheckConfig) -> Result<Vec<GradItem>> {
    let mut items = Vec::new();
    if matches!(scope, Scope::Ops | Scope::Full) {
        items.extend(run_cases(&op_cases(), cfg.seed)?);
    }
    if matches!(scope, Scope::Shading | Scope::Full) {
        items.extend(shading_items(cfg.seed)?);
    }
    if matches!(scope, Scope::Losses | Scope::Full) {
        items.extend(loss_items(cfg.seed)?);
    }
    if scope == Scope::Full {
        items.extend(chain_items(cfg)?);
    }
    Ok(items)
}

type Case = for<'t> fn(&'t Tape, &mut ChaCha8Rng) -> Result<(Var<'t>, Vec<Var<'t>>)>;

fn run_cases(cases: &[(&str, Case)], seed: u64) -> Result<Vec<GradItem>> {
    cases
        .iter()
        .enumerate()
        .map(|(k, (name, case))| {
            let mut report = FdReport {
                max_rel_err: 0.0,
                checked: 0,
            };
            for d in 0..DRAWS {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 8 | d));
                let tape = Tape::new();
                let (root, params) = case(&tape, &mut rng)?;
                report = report.merge(fd::check(&tape, root, &params, 48)?);
            }
            Ok(GradItem {
                name: name.to_string(),
                report,
            })
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values at least 0.1 away from zero, either sign.
fn away(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                let m = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

fn p<'t>(tape: &'t Tape, rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Var<'t> {
    tape.param(&uniform(rng, shape, lo, hi))
}

/// Scalar root touching every output element with a distinct weight.
fn weighted<'t>(v: Var<'t>, rng: &mut ChaCha8Rng) -> Var<'t> {
    let w = uniform(rng, &v.shape(), 0.5, 1.5);
    (v * v.tape().constant(&w)).sum()
}

fn unary<'t>(
    tape: &'t Tape,
    rng: &mut ChaCha8Rng,
    input: Tensor,
    f: impl FnOnce(Var<'t>) -> Result<Var<'t>>,
) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let a = tape.param(&input);
    let out = f(a)?;
    Ok((weighted(out, rng), vec![a]))
}

fn op_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("add", |t, r| {
            let (a, b) = (p(t, r, &[4, 3], -1.0, 1.0), p(t, r, &[3], -1.0, 1.0));
            Ok((weighted(a + b, r), vec![a, b]))
        }),
        ("sub", |t, r| {
            let (a, b) = (p(t, r, &[4, 3], -1.0, 1.0), p(t, r, &[4, 3], -1.0, 1.0));
            Ok((weighted(a - b, r), vec![a, b]))
        }),
        ("mul", |t, r| {
            let (a, b) = (p(t, r, &[4, 3], -1.0, 1.0), p(t, r, &[], -2.0, 2.0));
            Ok((weighted(a * b, r), vec![a, b]))
        }),
        ("div", |t, r| {
            let (a, b) = (p(t, r, &[5], -1.0, 1.0), p(t, r, &[5], 0.5, 2.0));
            Ok((weighted(a.div(b)?, r), vec![a, b]))
        }),
        ("max0", |t, r| {
            let x = away(r, &[12]);
            unary(t, r, x, |a| Ok(a.max0()))
        }),
        ("exp", |t, r| {
            let x = uniform(r, &[8], -2.0, 2.0);
            unary(t, r, x, |a| Ok(a.exp()))
        }),
        ("log", |t, r| {
            let x = uniform(r, &[8], 0.2, 3.0);
            unary(t, r, x, |a| a.log())
        }),
        ("abs", |t, r| {
            let x = away(r, &[12]);
            unary(t, r, x, |a| Ok(a.abs()))
        }),
        ("pow_scalar", |t, r| {
            let x = uniform(r, &[8], 0.3, 2.0);
            unary(t, r, x, |a| a.pow_scalar(2.7))
        }),
        ("square", |t, r| {
            let x = uniform(r, &[8], -2.0, 2.0);
            unary(t, r, x, |a| Ok(a.square()))
        }),
        ("softplus", |t, r| {
            let x = uniform(r, &[8], -4.0, 4.0);
            unary(t, r, x, |a| Ok(a.softplus()))
        }),
        ("affine", |t, r| {
            let x = uniform(r, &[8], -2.0, 2.0);
            unary(t, r, x, |a| Ok(a.affine(-1.7, 0.3)))
        }),
        ("max_scalar", |t, r| {
            let x = Tensor::new(vec![12], away(r, &[12]).data().iter().map(|v| v + 0.2).collect());
            unary(t, r, x, |a| Ok(a.max_scalar(0.2)))
        }),
        ("soft_clamp01", |t, r| {
            let x = uniform(r, &[16], -0.2, 1.2);
            unary(t, r, x, |a| Ok(a.soft_clamp01(0.05)))
        }),
        ("soft_cap1", |t, r| {
            let x = uniform(r, &[16], 0.5, 1.3);
            unary(t, r, x, |a| Ok(a.soft_cap1(0.05)))
        }),
        ("sum_axes", |t, r| {
            let x = uniform(r, &[2, 3, 4], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.sum_axes(&[1])))
        }),
        ("mean_axes", |t, r| {
            let x = uniform(r, &[2, 3, 4], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.mean_axes(&[0, 2])))
        }),
        ("sum", |t, r| {
            let x = uniform(r, &[3, 4], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.sum()))
        }),
        ("mean", |t, r| {
            let x = uniform(r, &[3, 4], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.mean()))
        }),
        ("sum_last", |t, r| {
            let x = uniform(r, &[4, 3], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.sum_last()))
        }),
        ("norm2", |t, r| {
            let x = away(r, &[7]);
            unary(t, r, x, |a| Ok(a.norm2()))
        }),
        ("matvec", |t, r| {
            let (m, x) = (p(t, r, &[4, 5], -1.0, 1.0), p(t, r, &[5], -1.0, 1.0));
            Ok((weighted(Var::matvec(m, x), r), vec![m, x]))
        }),
        ("normalize3", |t, r| {
            let x = away(r, &[6, 3]);
            unary(t, r, x, |a| a.normalize3())
        }),
        ("cross3", |t, r| {
            let (a, b) = (p(t, r, &[6, 3], -1.0, 1.0), p(t, r, &[6, 3], -1.0, 1.0));
            Ok((weighted(a.cross3(b), r), vec![a, b]))
        }),
        ("dot3", |t, r| {
            let (a, b) = (p(t, r, &[6, 3], -1.0, 1.0), p(t, r, &[6, 3], -1.0, 1.0));
            Ok((weighted(a.dot3(b), r), vec![a, b]))
        }),
        ("expand_last", |t, r| {
            let x = uniform(r, &[5], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.expand_last(3)))
        }),
        ("sparse_combine", |t, r| {
            let mut rows = SparseRows::new(6);
            for _ in 0..4 {
                let e: Vec<(usize, f64)> = (0..3).map(|_| (r.random_range(0..6), r.random_range(-1.0..1.0))).collect();
                rows.push_row(e);
            }
            let x = uniform(r, &[6, 3], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.sparse(Rc::new(rows))))
        }),
        ("transpose2", |t, r| {
            let x = uniform(r, &[3, 5], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.transpose2()))
        }),
        ("reshape", |t, r| {
            let x = uniform(r, &[3, 4], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.reshape(&[2, 6])))
        }),
        ("narrow", |t, r| {
            let x = uniform(r, &[12], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.narrow(3, &[2, 3])))
        }),
        ("slice_last", |t, r| {
            let x = uniform(r, &[4, 3], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.slice_last(1, 2)))
        }),
        ("concat", |t, r| {
            let (a, b) = (p(t, r, &[2, 3], -1.0, 1.0), p(t, r, &[3, 3], -1.0, 1.0));
            Ok((weighted(Var::concat(&[a, b]), r), vec![a, b]))
        }),
        ("bilinear_sample", |t, r| {
            let (tex, uv) = (p(t, r, &[2, 5, 5], 0.0, 1.0), p(t, r, &[6, 2], 0.1, 0.9));
            Ok((weighted(Var::bilinear_sample(tex, uv), r), vec![tex, uv]))
        }),
        ("upsample2x", |t, r| {
            let x = uniform(r, &[2, 3, 3], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.upsample2x()))
        }),
        ("conv2d", |t, r| {
            let filters = ConvFilters {
                out_ch: 2,
                in_ch: 3,
                size: 3,
                weights: uniform(r, &[54], -1.0, 1.0).into_data(),
            };
            let x = uniform(r, &[3, 6, 6], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.conv2d(Rc::new(filters))))
        }),
        ("max_pool2", |t, r| {
            let x = uniform(r, &[2, 6, 6], -1.0, 1.0);
            unary(t, r, x, |a| Ok(a.max_pool2()))
        }),
        ("rotate", |t, r| {
            let (pts, rv) = (p(t, r, &[5, 3], -1.0, 1.0), p(t, r, &[3], -1.5, 1.5));
            Ok((weighted(Var::rotate(pts, rv), r), vec![pts, rv]))
        }),
        ("project", |t, r| {
            let mut x = uniform(r, &[5, 3], -1.0, 1.0);
            for i in 0..5 {
                x.data_mut()[3 * i + 2] = r.random_range(2.0..4.0);
            }
            unary(t, r, x, |a| a.project(60.0, 16.0, 16.0, 0.1))
        }),
        ("pow_tensor", |t, r| {
            let (b, e) = (p(t, r, &[6], 0.3, 1.0), p(t, r, &[], 5.0, 20.0));
            Ok((weighted(b.pow_tensor(e)?, r), vec![b, e]))
        }),
        ("composite", |t, r| {
            let x = uniform(r, &[4, 3], 0.0, 1.0);
            let pixels = Rc::new(vec![0, 5, 7, 11]);
            unary(t, r, x, |a| Ok(a.composite(pixels, [0.1, 0.2, 0.3], 3, 4)))
        }),
    ]
}

struct ShadingScene {
    model: PcaShapeModel,
    generator: PyramidGenerator,
}

fn shading_scene() -> Result<ShadingScene> {
    let model = synthetic_shape_model(&SyntheticShapeConfig {
        subdivisions: 3,
        n_id: 4,
        n_expr: 2,
        seed: 3,
    })?;
    let corpus = reflectance::synthetic::synthetic_corpus(&CorpusConfig {
        resolution: 16,
        n_samples: 8,
        seed: 4,
    })?;
    Ok(ShadingScene {
        model,
        generator: reflectance::fit_generator(&corpus, 3, 5)?,
    })
}

fn random_lighting(rng: &mut ChaCha8Rng) -> Result<Lighting> {
    let mut dir = || [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), -1.0];
    let (d0, d1) = (dir(), dir());
    Lighting::new(0.9, &[(d0, [0.8, 0.7, 0.6]), (d1, [0.3, 0.3, 0.4])], rng.random_range(8.0..30.0))
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, min_z: f64) -> Tensor {
    let mut d = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let v = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(min_z..1.0)];
        let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        d.extend(v.iter().map(|x| x / l));
    }
    Tensor::new(vec![n, 3], d)
}

/// Random coefficients within two standard deviations.
fn random_coeffs<'t>(tape: &'t Tape, rng: &mut ChaCha8Rng, eig: &[f64]) -> Var<'t> {
    tape.param(&Tensor::vector(eig.iter().map(|e| 2.0 * e.sqrt() * rng.random_range(-1.0..1.0)).collect()))
}

type SceneCase = for<'t> fn(&'t Tape, &mut ChaCha8Rng, &ShadingScene) -> Result<(Var<'t>, Vec<Var<'t>>)>;

fn shading_items(seed: u64) -> Result<Vec<GradItem>> {
    let scene = shading_scene()?;
    let cases: Vec<(&str, SceneCase)> = vec![
        ("reconstruct_shape", |t, r, s| {
            let (ps, pe) = (random_coeffs(t, r, &s.model.id_eig), random_coeffs(t, r, &s.model.expr_eig));
            Ok((weighted(shape::reconstruct_shape(&s.model, ps, pe)?, r), vec![ps, pe]))
        }),
        ("vertex_normals", |t, r, s| {
            let ps = random_coeffs(t, r, &s.model.id_eig);
            let pe = t.constant(&Tensor::zeros(&[s.model.n_expr()]));
            let pos = shape::reconstruct_shape(&s.model, ps, pe)?;
            let (n, _) = shape::vertex_normals(pos, &s.model.mesh)?;
            Ok((weighted(n, r), vec![ps]))
        }),
        ("smooth_normals", |t, r, s| {
            let ps = random_coeffs(t, r, &s.model.id_eig);
            let pe = t.constant(&Tensor::zeros(&[s.model.n_expr()]));
            let pos = shape::reconstruct_shape(&s.model, ps, pe)?;
            let (n, _) = shape::vertex_normals(pos, &s.model.mesh)?;
            Ok((weighted(shape::smooth_normals(n, &s.model.mesh, 2)?, r), vec![ps]))
        }),
        ("project_landmarks", |t, r, s| {
            let ps = random_coeffs(t, r, &s.model.id_eig);
            let pe = t.constant(&Tensor::zeros(&[s.model.n_expr()]));
            let pos = shape::reconstruct_shape(&s.model, ps, pe)?;
            let cam = Camera::orbit(48, 48, 65.0, 4.0, r.random_range(-0.4..0.4));
            let cv = cam.vars(t, true);
            let lm = shape::project_landmarks(pos, &s.model.landmarks, &cam, &cv)?;
            Ok((weighted(lm, r), vec![ps, cv.rotation, cv.translation]))
        }),
        ("shade_diffuse", |t, r, _| {
            let light = random_lighting(r)?.vars(t, true)?;
            let albedo = p(t, r, &[20, 3], 0.1, 0.9);
            let normals = t.param(&unit_rows(r, 20, 0.6));
            let out = render::shade_diffuse(albedo, normals, &light);
            let mut params = vec![albedo, normals];
            params.extend(light.leaves());
            Ok((weighted(out, r), params))
        }),
        ("shade_diffuse_unclamped", |t, r, _| {
            let light = random_lighting(r)?.vars(t, true)?;
            let albedo = p(t, r, &[20, 3], 0.1, 0.9);
            let normals = t.param(&unit_rows(r, 20, -0.5));
            let out = render::shade_diffuse_with(albedo, normals, &light, false);
            let mut params = vec![albedo, normals];
            params.extend(light.leaves());
            Ok((weighted(out, r), params))
        }),
        ("shade_specular", |t, r, _| {
            let light = random_lighting(r)?.vars(t, true)?;
            let spec = p(t, r, &[20, 1], 0.1, 0.9);
            let normals = t.param(&unit_rows(r, 20, 0.8));
            let view = t.param(&unit_rows(r, 20, 0.8));
            let out = render::shade_specular(spec, normals, view, &light)?;
            let mut params = vec![spec, normals, view];
            params.extend(light.leaves());
            Ok((weighted(out, r), params))
        }),
        ("tangent_to_object", |t, r, _| {
            let detail = t.param(&unit_rows(r, 10, 0.6));
            let tan = p(t, r, &[10, 3], -1.0, 1.0);
            let bit = p(t, r, &[10, 3], -1.0, 1.0);
            let nrm = t.param(&unit_rows(r, 10, 0.3));
            let out = render::tangent_to_object(detail, tan, bit, nrm)?;
            Ok((weighted(out, r), vec![detail, tan, bit, nrm]))
        }),
        ("generate", |t, r, s| {
            let g = &s.generator;
            let w = p(t, r, &[g.n_levels(), g.dim], -1.0, 1.0);
            let band = TuneOffsets::zeros(g.n_levels(), g.dim).band().len();
            let o = p(t, r, &[band, g.dim], -0.3, 0.3);
            let out = reflectance::generate(g, w, Some(o))?;
            let root = weighted(out.maps.albedo, r) + weighted(out.maps.specular, r) + weighted(out.maps.normals, r);
            Ok((root, vec![w, o]))
        }),
        ("render", |t, r, s| {
            let g = &s.generator;
            let w = p(t, r, &[g.n_levels(), g.dim], -0.5, 0.5);
            let maps = reflectance::generate(g, w, None)?.maps;
            let ps = random_coeffs(t, r, &s.model.id_eig);
            let pe = random_coeffs(t, r, &s.model.expr_eig);
            let pos = shape::reconstruct_shape(&s.model, ps, pe)?;
            let cam = Camera::orbit(40, 40, 56.0, 4.0, r.random_range(-0.4..0.4));
            let cv = cam.vars(t, true);
            let light = random_lighting(r)?.vars(t, true)?;
            let out = render::render(pos, &s.model.mesh, &maps, &cam, &cv, &light, &RenderSettings::default())?;
            let mut params = vec![w, ps, pe, cv.rotation, cv.translation];
            params.extend(light.leaves());
            Ok((weighted(out.image, r), params))
        }),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(k, (name, case))| {
            let mut report = FdReport {
                max_rel_err: 0.0,
                checked: 0,
            };
            for d in 0..DRAWS {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5100 + ((k as u64) << 4 | d)));
                let tape = Tape::new();
                let (root, params) = case(&tape, &mut rng, &scene)?;
                report = report.merge(fd::check(&tape, root, &params, 24)?);
            }
            Ok(GradItem {
                name: name.to_string(),
                report,
            })
        })
        .collect()
}

fn image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
    uniform(rng, &[3, side, side], 0.05, 0.95)
}

fn loss_items(seed: u64) -> Result<Vec<GradItem>> {
    let cases: Vec<(&str, Case)> = vec![
        ("landmark", |t, r| {
            let target: Vec<[f64; 2]> = (0..68).map(|_| [r.random_range(0.0..64.0), r.random_range(0.0..64.0)]).collect();
            let pred = Tensor::new(vec![68, 2], target.iter().flatten().map(|v| v + r.random_range(-3.0..3.0)).collect());
            let pv = t.param(&pred);
            Ok((losses::loss_landmark(pv, &target, 90.5), vec![pv]))
        }),
        ("photometric", |t, r| {
            let target = image(r, 8);
            let mask = Tensor::new(vec![8, 8], (0..64).map(|_| if r.random_bool(0.8) { 1.0 } else { 0.0 }).collect());
            let rv = t.param(&image(r, 8));
            Ok((losses::loss_photometric(&target, rv, &mask)?, vec![rv]))
        }),
        ("identity", |t, r| {
            let bank = FeatureBank::new(&BankConfig::default())?;
            let tf = bank.target(&image(r, 32))?;
            let rv = t.param(&image(r, 32));
            let feats = bank.features(rv)?;
            Ok((losses::loss_identity(&tf, *feats.last().unwrap())?, vec![rv]))
        }),
        ("perceptual", |t, r| {
            let bank = FeatureBank::new(&BankConfig::default())?;
            let tf = bank.target(&image(r, 32))?;
            let rv = t.param(&image(r, 32));
            let feats = bank.features(rv)?;
            Ok((losses::loss_perceptual(&tf, &feats)?, vec![rv]))
        }),
        ("w_reg", |t, r| {
            let w0 = uniform(r, &[4, 6], -1.0, 1.0);
            let w = p(t, r, &[4, 6], -1.0, 1.0);
            Ok((losses::loss_w_reg(w, &w0), vec![w]))
        }),
        ("shape_reg", |t, r| {
            let eig: Vec<f64> = (0..6).map(|k| 0.5f64.powi(k)).collect();
            let c = p(t, r, &[6], -1.0, 1.0);
            Ok((shape::shape_regularizer(c, &eig), vec![c]))
        }),
        ("flip", |t, r| {
            let a = t.param(&image(r, 8));
            Ok((losses::loss_flip(a)?, vec![a]))
        }),
        ("chroma", |t, r| {
            let a0 = image(r, 8);
            let a = t.param(&image(r, 8));
            Ok((losses::loss_chroma(a, &a0)?, vec![a]))
        }),
    ];
    run_cases(&cases, seed ^ 0xA000)
}

/// The inversion and tuning objectives on a small fixture, from several
/// states away from the optimum.
fn chain_items(cfg: &GradcheckConfig) -> Result<Vec<GradItem>> {
    let fx = build_fixture(
        &SynthConfig {
            resolution: cfg.resolution,
            map_resolution: 32,
            levels: 4,
            dim: 8,
            corpus_samples: 12,
            subdivisions: 3,
            seed: cfg.seed,
            ..SynthConfig::default()
        },
        &BankConfig::default(),
    )?;
    let fit_cfg = FitConfig {
        resolution: cfg.resolution,
        ..FitConfig::default()
    };
    let empty = FdReport {
        max_rel_err: 0.0,
        checked: 0,
    };
    let (mut inv, mut tune) = (empty, empty);
    for d in 0..DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xC000 + d));
        let s = perturb(&fx.truth, &fx.models.shape.id_eig, &mut rng)?;
        inv = inv.merge(fitting::objective_gradcheck(&s, &fx.targets, &fx.models, &fit_cfg, false, 12)?);
        tune = tune.merge(fitting::objective_gradcheck(&s, &fx.targets, &fx.models, &fit_cfg, true, 24)?);
    }
    Ok(vec![
        GradItem {
            name: "inversion objective".into(),
            report: inv,
        },
        GradItem {
            name: "tuning objective".into(),
            report: tune,
        },
    ])
}

fn perturb(truth: &FitState, eig: &[f64], rng: &mut ChaCha8Rng) -> Result<FitState> {
    let mut s = truth.clone();
    s.stage = Stage::Inverted;
    for v in s.w.data.iter_mut() {
        *v += 0.3 * rng.random_range(-1.0..1.0);
    }
    for (p, e) in s.coeffs.p_s.iter_mut().zip(eig) {
        *p += 0.5 * e.sqrt() * rng.random_range(-1.0..1.0);
    }
    let band = s.offsets.band();
    for l in band {
        let row: Vec<f64> = (0..s.offsets.dim).map(|_| rng.random_range(-0.2..0.2)).collect();
        s.offsets.set_row(l, &row)?;
    }
    let cam = &mut s.per_image[0].camera;
    cam.rotation[1] += rng.random_range(-0.05..0.05);
    cam.translation[0] += rng.random_range(-0.05..0.05);
    s.per_image[0].lighting.ambient_raw += rng.random_range(-0.1..0.1);
    Ok(s)
}
