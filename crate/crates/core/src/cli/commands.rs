use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{config_hash, resolve, to_toml, Rebase, RunConfig, RunPaths};
use super::manifest::{Manifest, CONFIG_FILE};
use super::{AtStage, CommandResult};
use crate::error::{Error, Result};
use crate::fitting::{self, BankConfig, FeatureBank, FitConfig, FitState, FitTarget, Models};
use crate::geometry;
use crate::gradcheck::{self, GradItem, GradcheckConfig, Scope};
use crate::io::{load_image, load_landmarks, save_png16, Image};
use crate::reflectance::{
    self, blend_albedo, histogram_match, latent_pca, skin_mask, LatentW, MaskParams, SkinToneTarget, UvRect,
    LATENT_PCA_SAMPLES,
};
use crate::render::{Camera, Lighting};
use crate::shape::{self, write_obj};
use crate::synth::{build_fixture, write_fixture, Fixture, FixtureLayout, SynthConfig};
use crate::tensor::Tape;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the resolved configuration and a manifest over `files`.
fn finish<C: Serialize>(command: &str, seed: u64, cfg: &C, dir: &Path, files: &[PathBuf]) -> Result<Manifest> {
    write_text(&dir.join(CONFIG_FILE), &to_toml(cfg))?;
    let mut m = Manifest::new(command, seed, config_hash(cfg));
    m.record(dir, files)?;
    m.write(dir)?;
    Ok(m)
}

fn save_image(path: &Path, img: &Image) -> Result<PathBuf> {
    save_png16(path, 3, img.width, img.height, &img.data)?;
    Ok(path.to_path_buf())
}

pub fn load_models(shape_model: &Path, generator: &Path, bank: &BankConfig) -> Result<Models> {
    Ok(Models {
        shape: shape::load_shape_model(shape_model)?,
        generator: reflectance::load_generator(generator)?,
        bank: FeatureBank::new(bank)?,
    })
}

fn load_targets(paths: &RunPaths) -> Result<Vec<FitTarget>> {
    paths
        .targets
        .iter()
        .zip(&paths.landmarks)
        .map(|(t, l)| {
            Ok(FitTarget {
                image: load_image(t)?,
                landmarks: load_landmarks(l)?,
            })
        })
        .collect()
}

fn mean_landmark_error(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1])).sum::<f64>() / a.len() as f64
}

/// Writes maps, mesh, per-view renders, losses and the checkpoint of a
/// fitted state into `dir`.
fn write_fit_outputs(state: &FitState, models: &Models, cfg: &FitConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let maps_dir = dir.join("maps");
    reflectance::save_maps_png(&state.maps(models)?, &maps_dir)?;
    let mut files = vec![
        maps_dir.join("albedo.png"),
        maps_dir.join("specular.png"),
        maps_dir.join("normals.png"),
        maps_dir.join("maps.txt"),
    ];

    let positions = state.positions(models, 0)?;
    let tape = Tape::new();
    let (normals, _) = shape::vertex_normals(tape.constant(&positions), &models.shape.mesh)?;
    let obj = dir.join("mesh.obj");
    let mesh = &models.shape.mesh;
    write_obj(&obj, positions.data(), &normals.data(), &mesh.uv, &mesh.triangles)?;
    files.push(obj);

    for i in 0..state.n_images() {
        let r = fitting::render_view(state, models, cfg, i, None, None)?;
        files.push(save_image(&dir.join(format!("render_{i}.png")), &r.image)?);
    }
    let csv = dir.join("loss.csv");
    fitting::write_loss_csv(state, &csv)?;
    let ckpt = dir.join("fit.fmfs");
    fitting::save_state(state, &ckpt)?;
    files.extend([csv, ckpt]);
    Ok(files)
}

pub struct FitOutcome {
    pub state: FitState,
    /// Per view, re-render against target.
    pub psnr: Vec<f64>,
    /// Per view, mean pixel distance of projected to given landmarks.
    pub landmark_error: Vec<f64>,
    pub manifest: Manifest,
}

pub fn cmd_fit(cfg: &RunConfig) -> CommandResult<FitOutcome> {
    cfg.validate().at("configuration")?;
    let models = load_models(&cfg.paths.shape_model, &cfg.paths.generator, &cfg.fit.bank).at("loading models")?;
    let targets = load_targets(&cfg.paths).at("loading targets")?;
    let mut state = fitting::initial_state(&targets, &models, &cfg.fit).at("initialization")?;
    fitting::invert(&mut state, &targets, &models, &cfg.fit).at("inversion")?;
    if cfg.fit.enable_tuning && cfg.fit.iters_tune > 0 {
        state = fitting::fit_tuning(state, &targets, &models, &cfg.fit).at("tuning")?;
    }

    let dir = &cfg.paths.output;
    create_dir(dir).at("writing outputs")?;
    let files = write_fit_outputs(&state, &models, &cfg.fit, dir).at("writing outputs")?;
    let mut psnr = Vec::new();
    let mut landmark_error = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        let r = fitting::render_view(&state, &models, &cfg.fit, i, None, None).at("evaluation")?;
        psnr.push(reflectance::psnr(&r.image.data, &t.image.data));
        let lm = fitting::state_landmarks(&state, &models, i).at("evaluation")?;
        landmark_error.push(mean_landmark_error(&lm, &t.landmarks));
    }
    let manifest = finish("fit", cfg.seed, cfg, dir, &files).at("writing outputs")?;
    Ok(FitOutcome {
        state,
        psnr,
        landmark_error,
        manifest,
    })
}

/// Scene changes applied on top of a fitted view.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneOverrides {
    /// Turns the subject about its vertical axis, radians.
    pub yaw: Option<f64>,
    /// Replaces all lights with one light in this camera-space direction.
    pub light_direction: Option<[f64; 3]>,
    pub light_color: Option<[f64; 3]>,
    pub ambient: Option<f64>,
    pub shininess: Option<f64>,
    /// Multiplies every light intensity.
    pub light_scale: Option<f64>,
}

impl SceneOverrides {
    pub fn is_empty(&self) -> bool {
        *self == SceneOverrides::default()
    }

    pub fn camera(&self, cam: &Camera) -> Camera {
        let mut out = cam.clone();
        if let Some(yaw) = self.yaw {
            let r = geometry::mat_mul(&cam.rotation_matrix(), &geometry::rot_y(yaw));
            out.rotation = geometry::rotation_log(&r);
        }
        out
    }

    pub fn lighting(&self, l: &Lighting) -> Result<Lighting> {
        let rebuilt = self.light_direction.is_some()
            || self.light_color.is_some()
            || self.ambient.is_some()
            || self.shininess.is_some();
        // untouched lighting is passed through so renders stay bit-exact
        let out = if rebuilt {
            let mut lights: Vec<([f64; 3], [f64; 3])> =
                (0..l.n_lights()).map(|j| (l.lights[j].direction, l.intensity(j))).collect();
            if self.light_direction.is_some() || self.light_color.is_some() {
                let dir = self.light_direction.unwrap_or(lights[0].0);
                let color = self.light_color.unwrap_or(lights[0].1);
                lights = vec![(dir, color)];
            }
            Lighting::new(
                self.ambient.unwrap_or_else(|| l.ambient()),
                &lights,
                self.shininess.unwrap_or_else(|| l.shininess()),
            )?
        } else {
            l.clone()
        };
        match self.light_scale {
            Some(a) if a >= 0.0 && a.is_finite() => Ok(out.scaled(a)),
            Some(a) => Err(Error::Config(format!("light_scale {a} must be finite and nonnegative"))),
            None => Ok(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub checkpoint: PathBuf,
    pub shape_model: PathBuf,
    pub generator: PathBuf,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub view: usize,
    #[serde(default)]
    pub scene: SceneOverrides,
    pub output: PathBuf,
}

impl RenderConfig {
    /// Takes models and render settings from the `config.toml` that `fit`
    /// left next to the checkpoint.
    /// Reads the fit configuration stored next to `checkpoint`. The
    /// checkpoint itself is validated first.
    pub fn beside_checkpoint(checkpoint: &Path, output: &Path) -> Result<Self> {
        fitting::load_state(checkpoint)?;
        let dir = checkpoint.parent().unwrap_or(Path::new("."));
        let run = RunConfig::load(&dir.join(CONFIG_FILE))?;
        Ok(RenderConfig {
            checkpoint: checkpoint.to_path_buf(),
            shape_model: run.paths.shape_model,
            generator: run.paths.generator,
            fit: run.fit,
            view: 0,
            scene: SceneOverrides::default(),
            output: output.to_path_buf(),
        })
    }
}

pub struct RenderOutcome {
    pub image: Image,
    pub manifest: Manifest,
}

pub fn cmd_render(cfg: &RenderConfig) -> CommandResult<RenderOutcome> {
    let state = fitting::load_state(&cfg.checkpoint).at("loading checkpoint")?;
    let models = load_models(&cfg.shape_model, &cfg.generator, &cfg.fit.bank).at("loading models")?;
    if cfg.view >= state.n_images() {
        return Err(Error::Config(format!("view {} of {}", cfg.view, state.n_images()))).at("configuration");
    }
    let p = &state.per_image[cfg.view];
    let cam = cfg.scene.camera(&p.camera);
    let light = cfg.scene.lighting(&p.lighting).at("configuration")?;
    let r = fitting::render_view(&state, &models, &cfg.fit, cfg.view, Some(&cam), Some(&light)).at("rendering")?;
    create_dir(&cfg.output).at("writing outputs")?;
    let file = save_image(&cfg.output.join("render.png"), &r.image).at("writing outputs")?;
    let manifest = finish("render", cfg.fit.seed, cfg, &cfg.output, &[file]).at("writing outputs")?;
    Ok(RenderOutcome {
        image: r.image,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub albedo: PathBuf,
    /// Reference albedo whose tone is transferred.
    pub target: PathBuf,
    #[serde(default = "forehead")]
    pub rect: UvRect,
    #[serde(default)]
    pub mask: MaskParams,
    /// Skin-tone scale bin of the reference, recorded with the output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mst: Option<u8>,
    pub output: PathBuf,
}

fn forehead() -> UvRect {
    UvRect::FOREHEAD
}

impl AugmentConfig {
    pub fn new(albedo: &Path, target: &Path, output: &Path) -> Self {
        AugmentConfig {
            albedo: albedo.to_path_buf(),
            target: target.to_path_buf(),
            rect: UvRect::FOREHEAD,
            mask: MaskParams::default(),
            mst: None,
            output: output.to_path_buf(),
        }
    }
}

pub struct AugmentOutcome {
    pub albedo: Vec<f64>,
    pub mask: Vec<f64>,
    pub manifest: Manifest,
}

fn load_albedo(path: &Path) -> Result<Image> {
    let img = load_image(path)?;
    if img.width != img.height {
        return Err(Error::format("albedo", path, format!("{}x{} is not square", img.width, img.height)));
    }
    Ok(img)
}

pub fn cmd_augment(cfg: &AugmentConfig) -> CommandResult<AugmentOutcome> {
    let src = load_albedo(&cfg.albedo).at("loading albedo")?;
    let tgt = load_albedo(&cfg.target).at("loading target")?;
    if let Some(label) = cfg.mst {
        SkinToneTarget::new(tgt.data.clone(), label).at("configuration")?;
    }
    let mask = skin_mask(&src.data, &cfg.rect, &cfg.mask).at("skin mask")?;
    let matched = histogram_match(&src.data, &tgt.data).at("histogram matching")?;
    let albedo = blend_albedo(&src.data, &matched, &mask).at("blending")?;

    create_dir(&cfg.output).at("writing outputs")?;
    let r = src.width;
    let files = [cfg.output.join("albedo.png"), cfg.output.join("mask.png")];
    save_png16(&files[0], 3, r, r, &albedo).at("writing outputs")?;
    save_png16(&files[1], 1, r, r, &mask).at("writing outputs")?;
    let manifest = finish("augment", 0, cfg, &cfg.output, &files).at("writing outputs")?;
    Ok(AugmentOutcome { albedo, mask, manifest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRun {
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub bank: BankConfig,
    pub output: PathBuf,
}

pub struct SynthOutcome {
    pub fixture: Fixture,
    /// Ready-made `fit` configuration for the fixture.
    pub run_config: PathBuf,
    pub manifest: Manifest,
}

pub fn cmd_synth(cfg: &SynthRun) -> CommandResult<SynthOutcome> {
    let fixture = build_fixture(&cfg.synth, &cfg.bank).at("building fixture")?;
    let dir = &cfg.output;
    let mut files = write_fixture(&fixture, dir).at("writing fixture")?;

    let n = fixture.targets.len();
    let lay = FixtureLayout::new(Path::new(""));
    let run = RunConfig {
        seed: 0,
        preset: None,
        paths: RunPaths {
            shape_model: lay.shape(),
            generator: lay.generator(),
            targets: (0..n).map(|i| lay.target(i)).collect(),
            landmarks: (0..n).map(|i| lay.landmarks(i)).collect(),
            output: PathBuf::from("fit"),
        },
        fit: FitConfig {
            resolution: cfg.synth.resolution,
            focal_factor: cfg.synth.focal_factor,
            bank: cfg.bank,
            ..FitConfig::default()
        },
    };
    let run_path = dir.join("run.toml");
    write_text(&run_path, &to_toml(&run)).at("writing fixture")?;
    files.push(run_path.clone());
    let manifest = finish("synth", cfg.synth.seed, cfg, dir, &files).at("writing fixture")?;
    Ok(SynthOutcome {
        fixture,
        run_config: run_path,
        manifest,
    })
}

pub struct GradcheckOutcome {
    pub items: Vec<GradItem>,
    pub passed: bool,
}

/// Runs the finite-difference suite over `scope`; with `out`, also writes
/// a CSV report and a manifest there.
pub fn cmd_gradcheck(scope: &str, cfg: &GradcheckConfig, out: Option<&Path>) -> CommandResult<GradcheckOutcome> {
    let scope: Scope = scope.parse().at("configuration")?;
    let items = gradcheck::run(scope, cfg).at("gradient check")?;
    let passed = items.iter().all(GradItem::passed);
    if let Some(dir) = out {
        create_dir(dir).at("writing outputs")?;
        let mut csv = String::from("item,max_rel_err,checked,passed\n");
        for it in &items {
            csv.push_str(&format!("{},{:e},{},{}\n", it.name, it.report.max_rel_err, it.report.checked, it.passed()));
        }
        let path = dir.join("gradcheck.csv");
        write_text(&path, &csv).at("writing outputs")?;
        #[derive(Serialize)]
        struct Record<'a> {
            scope: &'a str,
            resolution: usize,
            seed: u64,
        }
        let rec = Record {
            scope: match scope {
                Scope::Ops => "ops",
                Scope::Shading => "shading",
                Scope::Losses => "losses",
                Scope::Full => "full",
            },
            resolution: cfg.resolution,
            seed: cfg.seed,
        };
        finish("gradcheck", cfg.seed, &rec, dir, &[path]).at("writing outputs")?;
    }
    Ok(GradcheckOutcome { items, passed })
}

fn default_steps() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateConfig {
    pub a: PathBuf,
    pub b: PathBuf,
    pub shape_model: PathBuf,
    pub generator: PathBuf,
    #[serde(default)]
    pub fit: FitConfig,
    /// Blend weights `0, 1/(n-1), ..., 1`.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub view: usize,
    pub output: PathBuf,
}

/// Renders the blend between two fits under the scene of the first.
pub fn cmd_interpolate(cfg: &InterpolateConfig) -> CommandResult<Manifest> {
    if cfg.steps < 2 {
        return Err(Error::Config(format!("steps = {} needs at least 2", cfg.steps))).at("configuration");
    }
    let a = fitting::load_state(&cfg.a).at("loading checkpoint")?;
    let b = fitting::load_state(&cfg.b).at("loading checkpoint")?;
    let models = load_models(&cfg.shape_model, &cfg.generator, &cfg.fit.bank).at("loading models")?;
    create_dir(&cfg.output).at("writing outputs")?;
    let mut files = Vec::new();
    for k in 0..cfg.steps {
        let t = k as f64 / (cfg.steps - 1) as f64;
        let s = fitting::interpolate_fit(&a, &b, t).at("interpolation")?;
        let r = fitting::render_view(&s, &models, &cfg.fit, cfg.view, None, None).at("rendering")?;
        files.push(save_image(&cfg.output.join(format!("interp_{k:02}.png")), &r.image).at("writing outputs")?);
        let maps = s.maps(&models).at("rendering")?;
        let p = cfg.output.join(format!("interp_{k:02}_albedo.png"));
        save_png16(&p, 3, maps.resolution, maps.resolution, &maps.albedo).at("writing outputs")?;
        files.push(p);
    }
    finish("interpolate", cfg.fit.seed, cfg, &cfg.output, &files).at("writing outputs")
}

fn default_samples() -> usize {
    LATENT_PCA_SAMPLES
}

fn default_components() -> usize {
    3
}

fn default_sigmas() -> Vec<f64> {
    vec![-2.0, -1.0, 1.0, 2.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentPcaConfig {
    pub generator: PathBuf,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Leading components rendered as albedo sweeps.
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    pub output: PathBuf,
}

impl LatentPcaConfig {
    pub fn new(generator: &Path, output: &Path) -> Self {
        LatentPcaConfig {
            generator: generator.to_path_buf(),
            samples: default_samples(),
            seed: 0,
            components: default_components(),
            sigmas: default_sigmas(),
            output: output.to_path_buf(),
        }
    }
}

/// Principal latent directions plus albedo sweeps along the leading ones,
/// starting from the mean latent in every level.
pub fn cmd_latent_pca(cfg: &LatentPcaConfig) -> CommandResult<Manifest> {
    let gen = reflectance::load_generator(&cfg.generator).at("loading generator")?;
    let pcs = latent_pca(&gen, cfg.samples, cfg.seed).at("latent analysis")?;
    if cfg.components > pcs.dim {
        return Err(Error::Config(format!("{} components of a {}-dim latent", cfg.components, pcs.dim)))
            .at("configuration");
    }
    create_dir(&cfg.output).at("writing outputs")?;
    let mut csv = String::from("component,explained_variance");
    for j in 0..pcs.dim {
        csv.push_str(&format!(",d{j}"));
    }
    csv.push('\n');
    for k in 0..pcs.dim {
        csv.push_str(&format!("{k},{:?}", pcs.explained_variance[k]));
        for v in pcs.component(k) {
            csv.push_str(&format!(",{v:?}"));
        }
        csv.push('\n');
    }
    let csv_path = cfg.output.join("components.csv");
    write_text(&csv_path, &csv).at("writing outputs")?;
    let mut files = vec![csv_path];

    let levels = gen.n_levels();
    let mut base = LatentW::zeros(levels, gen.dim);
    for l in 0..levels {
        base.data[l * gen.dim..(l + 1) * gen.dim].copy_from_slice(&pcs.mean);
    }
    for k in 0..cfg.components {
        for &s in &cfg.sigmas {
            let w = pcs.edit(&base, k, s, 0..levels).at("latent edit")?;
            let maps = gen.generate_maps(&w, None).at("latent edit")?;
            let p = cfg.output.join(format!("pc{k}_{s:+.1}.png"));
            save_png16(&p, 3, maps.resolution, maps.resolution, &maps.albedo).at("writing outputs")?;
            files.push(p);
        }
    }
    finish("latent-pca", cfg.seed, cfg, &cfg.output, &files).at("writing outputs")
}

impl Rebase for RenderConfig {
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.checkpoint, &mut self.shape_model, &mut self.generator, &mut self.output] {
            *p = resolve(base, p);
        }
    }
}

impl Rebase for AugmentConfig {
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.albedo, &mut self.target, &mut self.output] {
            *p = resolve(base, p);
        }
    }
}

impl Rebase for SynthRun {
    fn rebase(&mut self, base: &Path) {
        self.output = resolve(base, &self.output);
    }
}

impl Rebase for InterpolateConfig {
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.a, &mut self.b, &mut self.shape_model, &mut self.generator, &mut self.output] {
            *p = resolve(base, p);
        }
    }
}

impl Rebase for LatentPcaConfig {
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.generator, &mut self.output] {
            *p = resolve(base, p);
        }
    }
}
