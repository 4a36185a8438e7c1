//! Two-stage fitting. Inversion optimizes the generator latent together
//! with shape, per-image pose and lighting; tuning then freezes all of
//! that and adjusts offsets on the generator's middle levels.

mod adam;
mod features;
mod init;
mod io;
pub mod losses;

pub use adam::{adam_step, AdamMoments, BETA1, BETA2, EPSILON};
pub use features::{BankConfig, FeatureBank, TargetFeatures};
pub use init::{init_camera, init_latent, POSE_LANDMARKS};
pub use io::{load_state, save_state, write_loss_csv};

use crate::error::{Error, Result};
use crate::io::Image;
use crate::reflectance::{self, LatentW, PyramidGenerator, ReflectanceMaps, TuneOffsets};
use crate::render::{self, Camera, Lighting, RenderSettings};
use crate::shape::{self, PcaShapeModel, ShapeCoeffs, N_LANDMARKS};
use crate::tensor::{fd, Tape, Tensor, Var};

/// Weights of the inversion (`landmark` .. `expr_reg`) and tuning
/// (`tune_perceptual` .. `chroma`) objectives.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub landmark: f64,
    pub photometric: f64,
    pub identity: f64,
    pub perceptual: f64,
    pub w_reg: f64,
    pub shape_reg: f64,
    pub expr_reg: f64,
    pub tune_perceptual: f64,
    pub tune_photometric: f64,
    pub flip: f64,
    pub chroma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            landmark: 100.0,
            photometric: 0.5,
            identity: 1.0,
            perceptual: 25.0,
            w_reg: 5e-2,
            shape_reg: 5e-4,
            expr_reg: 5e-4,
            tune_perceptual: 2.0,
            tune_photometric: 0.5,
            flip: 0.8,
            chroma: 0.35,
        }
    }
}

impl LossWeights {
    /// All eleven weights in objective order.
    pub fn as_array(&self) -> [f64; 11] {
        [
            self.landmark,
            self.photometric,
            self.identity,
            self.perceptual,
            self.w_reg,
            self.shape_reg,
            self.expr_reg,
            self.tune_perceptual,
            self.tune_photometric,
            self.flip,
            self.chroma,
        ]
    }
}

/// Iteration schedules. The main text and the supplemental tables give
/// different counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    MainText,
    Supplemental,
}

impl Preset {
    pub fn iterations(self) -> (usize, usize) {
        match self {
            Preset::MainText => (200, 20),
            Preset::Supplemental => (250, 30),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::MainText => "main-text",
            Preset::Supplemental => "supplemental",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub weights: LossWeights,
    pub lr_inv: f64,
    pub lr_tune: f64,
    pub iters_inv: usize,
    pub iters_tune: usize,
    /// Side of the square render; targets must have this size.
    pub resolution: usize,
    /// Clamp `N . l` at zero in the diffuse term.
    pub clamp_diffuse: bool,
    /// One expression vector per image instead of a shared one.
    pub per_image_expression: bool,
    pub enable_tuning: bool,
    /// Random latents averaged into the starting `W`.
    pub init_samples: usize,
    pub seed: u64,
    /// Focal length as a multiple of the image width.
    pub focal_factor: f64,
    pub bank: BankConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        let (iters_inv, iters_tune) = Preset::MainText.iterations();
        FitConfig {
            weights: LossWeights::default(),
            lr_inv: 1e-2,
            lr_tune: 8e-4,
            iters_inv,
            iters_tune,
            resolution: 128,
            clamp_diffuse: true,
            per_image_expression: false,
            enable_tuning: true,
            init_samples: 1000,
            seed: 0,
            focal_factor: 1.4,
            bank: BankConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn with_preset(preset: Preset) -> Self {
        let mut cfg = FitConfig::default();
        cfg.apply_preset(preset);
        cfg
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        (self.iters_inv, self.iters_tune) = preset.iterations();
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.as_array().iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        for (name, lr) in [("lr_inv", self.lr_inv), ("lr_tune", self.lr_tune)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} = {lr} must be positive")));
            }
        }
        if self.resolution < 8 {
            return Err(Error::Config(format!("resolution {} below 8", self.resolution)));
        }
        if self.init_samples == 0 {
            return Err(Error::Config("init_samples must be at least 1".into()));
        }
        if !(self.focal_factor > 0.0 && self.focal_factor.is_finite()) {
            return Err(Error::Config("focal_factor must be positive".into()));
        }
        Ok(())
    }

    pub fn focal(&self, width: usize) -> f64 {
        self.focal_factor * width as f64
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            clamp_diffuse: self.clamp_diffuse,
            ..RenderSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initialized,
    Inverted,
    Tuned,
}

/// Scene parameters owned by a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageParams {
    pub camera: Camera,
    pub lighting: Lighting,
    /// Present when expressions are fitted per image.
    pub expression: Option<Vec<f64>>,
}

/// Loss values at one iteration. Terms not in the running objective are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossRecord {
    pub iter: usize,
    pub landmark: f64,
    pub photometric: f64,
    pub identity: f64,
    pub perceptual: f64,
    pub w_reg: f64,
    pub shape_reg: f64,
    pub expr_reg: f64,
    pub flip: f64,
    pub chroma: f64,
    pub total: f64,
}

impl LossRecord {
    pub const COLUMNS: [&'static str; 9] = [
        "landmark",
        "photometric",
        "identity",
        "perceptual",
        "w_reg",
        "shape_reg",
        "expr_reg",
        "flip",
        "chroma",
    ];

    pub fn components(&self) -> [f64; 9] {
        [
            self.landmark,
            self.photometric,
            self.identity,
            self.perceptual,
            self.w_reg,
            self.shape_reg,
            self.expr_reg,
            self.flip,
            self.chroma,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub w: LatentW,
    pub w_init: LatentW,
    pub coeffs: ShapeCoeffs,
    pub per_image: Vec<ImageParams>,
    pub offsets: TuneOffsets,
    /// Albedo at the start of tuning, `3 x R x R`.
    pub albedo_init: Option<Vec<f64>>,
    pub stage: Stage,
    /// One record per evaluation plus a final one after the last step.
    pub inversion_trace: Vec<LossRecord>,
    pub tuning_trace: Vec<LossRecord>,
}

impl FitState {
    /// A state at explicit parameters, ready for inversion, with `W_init`
    /// set to `w`.
    pub fn at(models: &Models, w: LatentW, coeffs: ShapeCoeffs, per_image: Vec<ImageParams>) -> Result<Self> {
        let gen = &models.generator;
        if w.levels != gen.n_levels() || w.dim != gen.dim || w.data.len() != w.levels * w.dim {
            return Err(Error::contract("fit state", "latent does not match the generator"));
        }
        if coeffs.p_s.len() != models.shape.n_id() || coeffs.p_e.len() != models.shape.n_expr() {
            return Err(Error::contract("fit state", "coefficients do not match the shape model"));
        }
        if per_image.is_empty() {
            return Err(Error::contract("fit state", "no images"));
        }
        let per_expr = per_image[0].expression.is_some();
        for p in &per_image {
            p.camera.validate()?;
            if p.expression.is_some() != per_expr {
                return Err(Error::contract("fit state", "mixed shared and per-image expressions"));
            }
            if p.expression.as_ref().is_some_and(|e| e.len() != models.shape.n_expr()) {
                return Err(Error::contract("fit state", "per-image expression length"));
            }
        }
        Ok(FitState {
            offsets: TuneOffsets::zeros(w.levels, w.dim),
            w_init: w.clone(),
            w,
            coeffs,
            per_image,
            albedo_init: None,
            stage: Stage::Initialized,
            inversion_trace: Vec::new(),
            tuning_trace: Vec::new(),
        })
    }

    pub fn n_images(&self) -> usize {
        self.per_image.len()
    }

    /// Expression used for image `i`.
    pub fn expression(&self, i: usize) -> &[f64] {
        self.per_image[i].expression.as_deref().unwrap_or(&self.coeffs.p_e)
    }

    pub fn maps(&self, models: &Models) -> Result<ReflectanceMaps> {
        let offsets = (!self.offsets.is_zero()).then_some(&self.offsets);
        models.generator.generate_maps(&self.w, offsets)
    }

    /// Model-space vertex positions for image `i`.
    pub fn positions(&self, models: &Models, i: usize) -> Result<Tensor> {
        models.shape.reconstruct(&ShapeCoeffs {
            p_s: self.coeffs.p_s.clone(),
            p_e: self.expression(i).to_vec(),
        })
    }
}

/// Everything a fit needs besides the targets.
#[derive(Debug, Clone)]
pub struct Models {
    pub shape: PcaShapeModel,
    pub generator: PyramidGenerator,
    pub bank: FeatureBank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTarget {
    pub image: Image,
    pub landmarks: Vec<[f64; 2]>,
}

struct Prepared {
    image: Tensor,
    features: TargetFeatures,
    landmarks: Vec<[f64; 2]>,
}

fn prepare(targets: &[FitTarget], models: &Models, cfg: &FitConfig) -> Result<Vec<Prepared>> {
    if targets.is_empty() {
        return Err(Error::contract("fit", "no targets"));
    }
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let im = &t.image;
            if im.width != cfg.resolution || im.height != cfg.resolution {
                return Err(Error::contract(
                    "fit",
                    format!(
                        "target {i} is {}x{}, the fit renders at {r}x{r}",
                        im.width,
                        im.height,
                        r = cfg.resolution
                    ),
                ));
            }
            if t.landmarks.len() != N_LANDMARKS || t.landmarks.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::contract("fit", format!("target {i} needs {N_LANDMARKS} finite landmarks")));
            }
            let image = Tensor::new(vec![3, im.height, im.width], im.data.clone());
            Ok(Prepared {
                features: models.bank.target(&image)?,
                image,
                landmarks: t.landmarks.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    Inversion,
    Tuning,
}

struct Evaluation<'t> {
    total: Var<'t>,
    record: LossRecord,
    /// Trainable leaves in packing order.
    leaves: Vec<Var<'t>>,
    /// Leaves from this index on belong to single images.
    per_image_from: usize,
}

fn sqrt_all(v: &[f64]) -> Vec<f64> {
    v.iter().map(|e| e.sqrt()).collect()
}

/// Coefficients are optimized in whitened units `alpha = p / sqrt(eig)`.
fn whitened_coeffs<'t>(tape: &'t Tape, p: &[f64], eig: &[f64], trainable: bool) -> (Var<'t>, Option<Var<'t>>) {
    if !trainable {
        return (tape.constant(&Tensor::vector(p.to_vec())), None);
    }
    let sd = sqrt_all(eig);
    let alpha = tape.param(&Tensor::vector(p.iter().zip(&sd).map(|(p, s)| p / s).collect()));
    (alpha * tape.constant(&Tensor::vector(sd)), Some(alpha))
}

fn build<'t>(
    tape: &'t Tape,
    state: &FitState,
    prep: &[Prepared],
    models: &Models,
    cfg: &FitConfig,
    objective: Objective,
) -> Result<Evaluation<'t>> {
    let inv = objective == Objective::Inversion;
    let wts = &cfg.weights;
    let shape = &models.shape;
    let mut leaves = Vec::new();

    let w = if inv { tape.param(&state.w.tensor()) } else { tape.constant(&state.w.tensor()) };
    if inv {
        leaves.push(w);
    }
    let (p_s, alpha_s) = whitened_coeffs(tape, &state.coeffs.p_s, &shape.id_eig, inv);
    leaves.extend(alpha_s);
    let per_expr = state.per_image[0].expression.is_some();
    let shared_e = (!per_expr).then(|| whitened_coeffs(tape, &state.coeffs.p_e, &shape.expr_eig, inv));
    if let Some((_, Some(a))) = shared_e {
        leaves.push(a);
    }

    let offsets = match objective {
        Objective::Tuning => {
            let band = state.offsets.band();
            let o = tape.param(&Tensor::new(vec![band.len(), state.offsets.dim], state.offsets.band_values()));
            leaves.push(o);
            Some(o)
        }
        Objective::Inversion if !state.offsets.is_zero() => {
            let band = state.offsets.band();
            Some(tape.constant(&Tensor::new(vec![band.len(), state.offsets.dim], state.offsets.band_values())))
        }
        Objective::Inversion => None,
    };
    let gen = reflectance::generate(&models.generator, w, offsets)?;

    let mut rec = LossRecord::default();
    let shared = if inv {
        let lw = losses::loss_w_reg(w, &state.w_init.tensor());
        let ls = shape::shape_regularizer(p_s, &shape.id_eig);
        rec.w_reg = lw.item();
        rec.shape_reg = ls.item();
        let mut reg = lw.scale(wts.w_reg) + ls.scale(wts.shape_reg);
        if let Some((p_e, _)) = shared_e {
            let le = shape::shape_regularizer(p_e, &shape.expr_eig);
            rec.expr_reg = le.item();
            reg = reg + le.scale(wts.expr_reg);
        }
        reg
    } else {
        let albedo_init = state
            .albedo_init
            .as_ref()
            .ok_or_else(|| Error::contract("fit_tuning", "no albedo snapshot"))?;
        let r = models.generator.resolution;
        let lf = losses::loss_flip(gen.maps.albedo)?;
        let lk = losses::loss_chroma(gen.maps.albedo, &Tensor::new(vec![3, r, r], albedo_init.clone()))?;
        rec.flip = lf.item();
        rec.chroma = lk.item();
        lf.scale(wts.flip) + lk.scale(wts.chroma)
    };

    let shared_positions = match shared_e {
        Some((p_e, _)) => Some(shape::reconstruct_shape(shape, p_s, p_e)?),
        None => None,
    };
    let settings = cfg.render_settings();
    let n = prep.len() as f64;
    let per_image_from = leaves.len();
    let mut batch = tape.scalar(0.0);
    for (params, target) in state.per_image.iter().zip(prep) {
        let cam = &params.camera;
        let cv = cam.vars(tape, inv);
        let lv = params.lighting.vars(tape, inv)?;
        if inv {
            leaves.push(cv.rotation);
            leaves.push(cv.translation);
        }
        let mut image_term = tape.scalar(0.0);
        let positions = match (shared_positions, &params.expression) {
            (Some(p), _) => p,
            (None, Some(e)) => {
                let (p_e, alpha_e) = whitened_coeffs(tape, e, &shape.expr_eig, inv);
                leaves.extend(alpha_e);
                if inv {
                    let le = shape::shape_regularizer(p_e, &shape.expr_eig);
                    rec.expr_reg += le.item() / n;
                    image_term = image_term + le.scale(wts.expr_reg);
                }
                shape::reconstruct_shape(shape, p_s, p_e)?
            }
            (None, None) => unreachable!("expression layout checked when the state was built"),
        };
        if inv {
            leaves.extend(lv.leaves());
        }
        let out = render::render(positions, &shape.mesh, &gen.maps, cam, &cv, &lv, &settings)?;
        let mask = Tensor::new(
            vec![cam.height, cam.width],
            out.fragments.mask().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        );
        let ph = losses::loss_photometric(&target.image, out.image, &mask)?;
        let feats = models.bank.features(out.image)?;
        let per = losses::loss_perceptual(&target.features, &feats)?;
        rec.photometric += ph.item() / n;
        rec.perceptual += per.item() / n;
        if inv {
            let lm = shape::project_landmarks(positions, &shape.landmarks, cam, &cv)?;
            let lan = losses::loss_landmark(lm, &target.landmarks, cam.diagonal());
            let id = losses::loss_identity(&target.features, *feats.last().expect("bank has levels"))?;
            rec.landmark += lan.item() / n;
            rec.identity += id.item() / n;
            image_term = image_term
                + lan.scale(wts.landmark)
                + ph.scale(wts.photometric)
                + id.scale(wts.identity)
                + per.scale(wts.perceptual);
        } else {
            image_term = image_term + per.scale(wts.tune_perceptual) + ph.scale(wts.tune_photometric);
        }
        batch = batch + image_term;
    }
    let total = batch.scale(1.0 / n) + shared;
    rec.total = total.item();
    if !rec.total.is_finite() {
        return Err(Error::domain("fit", "loss is not finite; the fit diverged"));
    }
    Ok(Evaluation {
        total,
        record: rec,
        leaves,
        per_image_from,
    })
}

/// Writes optimized values back in the packing order of [`build`].
fn unpack(state: &mut FitState, models: &Models, objective: Objective, values: &[f64]) -> Result<()> {
    let mut rest = values;
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        head.to_vec()
    };
    let shape = &models.shape;
    let unwhiten = |a: Vec<f64>, eig: &[f64]| a.iter().zip(eig).map(|(a, e)| a * e.sqrt()).collect::<Vec<_>>();
    match objective {
        Objective::Tuning => {
            let band = state.offsets.band();
            let d = state.offsets.dim;
            let vals = take(band.len() * d);
            for (k, l) in band.enumerate() {
                state.offsets.set_row(l, &vals[k * d..(k + 1) * d])?;
            }
        }
        Objective::Inversion => {
            state.w.data = take(state.w.data.len());
            state.coeffs.p_s = unwhiten(take(shape.n_id()), &shape.id_eig);
            if state.per_image[0].expression.is_none() {
                state.coeffs.p_e = unwhiten(take(shape.n_expr()), &shape.expr_eig);
            }
            for p in state.per_image.iter_mut() {
                let r = take(3);
                let t = take(3);
                p.camera.rotation = [r[0], r[1], r[2]];
                p.camera.translation = [t[0], t[1], t[2]];
                if p.expression.is_some() {
                    p.expression = Some(unwhiten(take(shape.n_expr()), &shape.expr_eig));
                }
                let l = &mut p.lighting;
                let nl = l.lights.len();
                l.ambient_raw = take(1)[0];
                let dirs = take(3 * nl);
                let raw = take(3 * nl);
                for (j, light) in l.lights.iter_mut().enumerate() {
                    light.direction = [dirs[3 * j], dirs[3 * j + 1], dirs[3 * j + 2]];
                    light.intensity_raw = [raw[3 * j], raw[3 * j + 1], raw[3 * j + 2]];
                }
                l.log_shininess = take(1)[0];
            }
        }
    }
    debug_assert!(rest.is_empty());
    Ok(())
}

/// Runs `iters` Adam steps of one objective from the current state.
fn optimize(
    state: &mut FitState,
    prep: &[Prepared],
    models: &Models,
    cfg: &FitConfig,
    objective: Objective,
) -> Result<Vec<LossRecord>> {
    let (iters, lr) = match objective {
        Objective::Inversion => (cfg.iters_inv, cfg.lr_inv),
        Objective::Tuning => (cfg.iters_tune, cfg.lr_tune),
    };
    let n = prep.len() as f64;
    let mut trace = Vec::with_capacity(iters + 1);
    let mut moments: Option<AdamMoments> = None;
    for it in 0..=iters {
        let tape = Tape::new();
        let ev = build(&tape, state, prep, models, cfg, objective)?;
        trace.push(LossRecord { iter: it, ..ev.record });
        if it == iters {
            break;
        }
        tape.backward(ev.total);
        let mut params = Vec::new();
        let mut grads = Vec::new();
        for (k, leaf) in ev.leaves.iter().enumerate() {
            params.extend_from_slice(&leaf.data());
            let g = tape.grad_or_zeros(*leaf);
            // The batch mean divides per-image gradients by N; undo that so
            // a view's own parameters move as they would in a single fit.
            let scale = if k >= ev.per_image_from && objective == Objective::Inversion { n } else { 1.0 };
            grads.extend(g.data().iter().map(|v| v * scale));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::domain("fit", format!("non-finite gradient at iteration {it}")));
        }
        let m = moments.get_or_insert_with(|| AdamMoments::zeros(params.len()));
        adam_step(&mut params, &grads, m, lr, it as u32 + 1);
        unpack(state, models, objective, &params)?;
    }
    Ok(trace)
}

/// Starting point: averaged random latent, zero shape, pose from
/// landmarks, one frontal white light.
pub fn initial_state(targets: &[FitTarget], models: &Models, cfg: &FitConfig) -> Result<FitState> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::contract("fit", "no targets"));
    }
    let w = init_latent(&models.generator, cfg.init_samples, cfg.seed);
    let n_expr = models.shape.n_expr();
    let per_image = targets
        .iter()
        .map(|t| {
            let (wd, ht) = (t.image.width, t.image.height);
            Ok(ImageParams {
                camera: init_camera(&models.shape, &t.landmarks, wd, ht, cfg.focal(wd))?,
                lighting: Lighting::frontal_white(),
                expression: cfg.per_image_expression.then(|| vec![0.0; n_expr]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FitState::at(models, w, ShapeCoeffs::zeros(&models.shape), per_image)
}

fn check_images(state: &FitState, targets: &[FitTarget]) -> Result<()> {
    if state.n_images() != targets.len() {
        return Err(Error::contract(
            "fit",
            format!("state has {} views, {} targets given", state.n_images(), targets.len()),
        ));
    }
    Ok(())
}

/// Inversion steps from an existing state. `W_init` is left untouched.
pub fn invert(state: &mut FitState, targets: &[FitTarget], models: &Models, cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    check_images(state, targets)?;
    if state.stage == Stage::Tuned {
        return Err(Error::contract("invert", "the generator has already been tuned"));
    }
    let prep = prepare(targets, models, cfg)?;
    let trace = optimize(state, &prep, models, cfg, Objective::Inversion)?;
    state.inversion_trace.extend(trace);
    state.stage = Stage::Inverted;
    Ok(())
}

pub fn fit_inversion(targets: &[FitTarget], models: &Models, cfg: &FitConfig) -> Result<FitState> {
    let mut state = initial_state(targets, models, cfg)?;
    invert(&mut state, targets, models, cfg)?;
    Ok(state)
}

/// Tuning of the middle-level offsets with everything else frozen.
pub fn fit_tuning(mut state: FitState, targets: &[FitTarget], models: &Models, cfg: &FitConfig) -> Result<FitState> {
    cfg.validate()?;
    check_images(&state, targets)?;
    match state.stage {
        Stage::Inverted => {}
        Stage::Initialized => return Err(Error::contract("fit_tuning", "inversion has not run")),
        Stage::Tuned => return Err(Error::contract("fit_tuning", "state is already tuned")),
    }
    let prep = prepare(targets, models, cfg)?;
    state.albedo_init = Some(state.maps(models)?.albedo);
    let trace = optimize(&mut state, &prep, models, cfg, Objective::Tuning)?;
    state.tuning_trace = trace;
    state.stage = Stage::Tuned;
    Ok(state)
}

/// Inversion, then tuning when enabled, for any number of views.
pub fn fit(targets: &[FitTarget], models: &Models, cfg: &FitConfig) -> Result<FitState> {
    let state = fit_inversion(targets, models, cfg)?;
    if cfg.enable_tuning && cfg.iters_tune > 0 {
        fit_tuning(state, targets, models, cfg)
    } else {
        Ok(state)
    }
}

/// Joint fit of several views of one subject: shared latent and identity,
/// per-view pose and lighting.
pub fn fit_multi(targets: &[FitTarget], models: &Models, cfg: &FitConfig) -> Result<FitState> {
    if targets.len() < 2 {
        return Err(Error::contract("fit_multi", "needs at least two views"));
    }
    let (w0, h0) = (targets[0].image.width, targets[0].image.height);
    if let Some(i) = targets.iter().position(|t| t.image.width != w0 || t.image.height != h0) {
        return Err(Error::contract("fit_multi", format!("view {i} differs in size from view 0")));
    }
    fit(targets, models, cfg)
}

fn evaluate(
    state: &FitState,
    targets: &[FitTarget],
    models: &Models,
    cfg: &FitConfig,
    objective: Objective,
) -> Result<LossRecord> {
    check_images(state, targets)?;
    let prep = prepare(targets, models, cfg)?;
    let tape = Tape::new();
    Ok(build(&tape, state, &prep, models, cfg, objective)?.record)
}

/// Inversion objective at the current state, batch-averaged.
pub fn total_inversion_loss(state: &FitState, targets: &[FitTarget], models: &Models, cfg: &FitConfig) -> Result<LossRecord> {
    evaluate(state, targets, models, cfg, Objective::Inversion)
}

/// Tuning objective at the current state; requires a finished inversion.
pub fn total_tuning_loss(state: &FitState, targets: &[FitTarget], models: &Models, cfg: &FitConfig) -> Result<LossRecord> {
    if state.stage == Stage::Initialized {
        return Err(Error::contract("total_tuning_loss", "inversion has not run"));
    }
    let mut s = state.clone();
    if s.albedo_init.is_none() {
        s.albedo_init = Some(s.maps(models)?.albedo);
    }
    evaluate(&s, targets, models, cfg, Objective::Tuning)
}

/// Finite-difference check of an objective's gradient with respect to every
/// trainable leaf, probing at most `max_per_param` entries of each.
pub fn objective_gradcheck(
    state: &FitState,
    targets: &[FitTarget],
    models: &Models,
    cfg: &FitConfig,
    tuning: bool,
    max_per_param: usize,
) -> Result<fd::FdReport> {
    check_images(state, targets)?;
    let mut s = state.clone();
    let objective = if tuning {
        if s.albedo_init.is_none() {
            s.albedo_init = Some(s.maps(models)?.albedo);
        }
        Objective::Tuning
    } else {
        Objective::Inversion
    };
    let prep = prepare(targets, models, cfg)?;
    let tape = Tape::new();
    let ev = build(&tape, &s, &prep, models, cfg, objective)?;
    fd::check(&tape, ev.total, &ev.leaves, max_per_param)
}

/// Linear blend of two fits of the same models: latent, offsets and shape
/// coefficients interpolate, scene parameters come from `a`.
pub fn interpolate_fit(a: &FitState, b: &FitState, t: f64) -> Result<FitState> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::contract("interpolate_fit", format!("t = {t} outside [0, 1]")));
    }
    let same = a.w.levels == b.w.levels
        && a.w.dim == b.w.dim
        && a.coeffs.p_s.len() == b.coeffs.p_s.len()
        && a.coeffs.p_e.len() == b.coeffs.p_e.len();
    if !same {
        return Err(Error::contract("interpolate_fit", "fits come from different models"));
    }
    let lerp = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(x, y)| (1.0 - t) * x + t * y).collect::<Vec<_>>();
    let mut out = a.clone();
    out.w.data = lerp(&a.w.data, &b.w.data);
    out.offsets.data = lerp(&a.offsets.data, &b.offsets.data);
    out.coeffs = ShapeCoeffs {
        p_s: lerp(&a.coeffs.p_s, &b.coeffs.p_s),
        p_e: lerp(&a.coeffs.p_e, &b.coeffs.p_e),
    };
    out.inversion_trace.clear();
    out.tuning_trace.clear();
    Ok(out)
}

/// Linear and displayed renders of image `i` of `state`.
#[derive(Debug, Clone)]
pub struct StateRender {
    pub image: Image,
    /// Composite before the tone clamp, same layout as `image`.
    pub linear: Vec<f64>,
    pub covered: Vec<bool>,
}

/// Renders view `i` of a state, optionally under another camera or
/// lighting.
pub fn render_view(
    state: &FitState,
    models: &Models,
    cfg: &FitConfig,
    i: usize,
    camera: Option<&Camera>,
    lighting: Option<&Lighting>,
) -> Result<StateRender> {
    if i >= state.n_images() {
        return Err(Error::contract("render_view", format!("view {i} of {}", state.n_images())));
    }
    let p = &state.per_image[i];
    let cam = camera.unwrap_or(&p.camera);
    let light = lighting.unwrap_or(&p.lighting);
    let tape = Tape::new();
    let w = tape.constant(&state.w.tensor());
    let band = state.offsets.band();
    let offsets = (!state.offsets.is_zero())
        .then(|| tape.constant(&Tensor::new(vec![band.len(), state.offsets.dim], state.offsets.band_values())));
    let gen = reflectance::generate(&models.generator, w, offsets)?;
    let positions = tape.constant(&state.positions(models, i)?);
    let out = render::render(
        positions,
        &models.shape.mesh,
        &gen.maps,
        cam,
        &cam.vars(&tape, false),
        &light.vars(&tape, false)?,
        &cfg.render_settings(),
    )?;
    Ok(StateRender {
        image: Image::new(cam.width, cam.height, out.image.data().to_vec())?,
        linear: out.linear.data().to_vec(),
        covered: out.fragments.mask(),
    })
}

/// Pixel landmarks of view `i`.
pub fn state_landmarks(state: &FitState, models: &Models, i: usize) -> Result<Vec<[f64; 2]>> {
    let tape = Tape::new();
    let cam = &state.per_image[i].camera;
    let positions = tape.constant(&state.positions(models, i)?);
    let lm = shape::project_landmarks(positions, &models.shape.landmarks, cam, &cam.vars(&tape, false))?;
    Ok(lm.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

#[cfg(test)]
mod tests;
