use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use facefit::cli::{self, CommandError, Overrides, RunConfig, RunPaths};
use facefit::fitting::{FitConfig, Preset};
use facefit::gradcheck::GradcheckConfig;
use facefit::reflectance::UvRect;
use facefit::synth::SynthConfig;
use facefit::Error;

#[derive(Parser)]
#[command(name = "facefit", version, about = "Fit, render and edit facial reflectance and shape")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration for the command; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Render (and target) side in pixels.
    #[arg(long, global = true)]
    res: Option<usize>,
    #[arg(long, global = true)]
    iters_inv: Option<usize>,
    #[arg(long, global = true)]
    iters_tune: Option<usize>,
    #[arg(long, global = true)]
    no_tuning: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Recover reflectance, shape and scene from one or more images.
    Fit {
        #[arg(long)]
        shape: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Target image; repeat for multiple views.
        #[arg(long = "target")]
        targets: Vec<PathBuf>,
        /// Landmark file per target, same order.
        #[arg(long = "landmarks")]
        landmarks: Vec<PathBuf>,
    },
    /// Re-render a fitted checkpoint, optionally under a new camera or light.
    Render {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        view: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        yaw: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        light_dir: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        light_color: Option<Vec<f64>>,
        #[arg(long)]
        ambient: Option<f64>,
        #[arg(long)]
        shininess: Option<f64>,
        #[arg(long)]
        light_scale: Option<f64>,
    },
    /// Transfer a reference skin tone onto an albedo map.
    Augment {
        #[arg(long)]
        albedo: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Texture rectangle sampling the source tone: u0,v0,u1,v1.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        rect: Option<Vec<f64>>,
        #[arg(long)]
        mst: Option<u8>,
    },
    /// Write a synthetic shape model, generator, ground truth and targets.
    Synth {
        /// View yaws in radians, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        yaws: Option<Vec<f64>>,
        #[arg(long)]
        three_view: bool,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Finite-difference check of gradients: ops, shading, losses or full.
    Gradcheck { scope: String },
    /// Render blends between two fits.
    Interpolate {
        #[arg(long)]
        a: Option<PathBuf>,
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Principal directions of the latent prior with albedo sweeps.
    LatentPca {
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        components: Option<usize>,
    },
}

fn usage(msg: impl Into<String>) -> CommandError {
    CommandError {
        stage: "arguments",
        source: Error::Config(msg.into()),
    }
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T, CommandError> {
    v.ok_or_else(|| usage(format!("--{flag} is required without --config")))
}

fn load<T: serde::de::DeserializeOwned + cli::Rebase>(path: &Path) -> Result<T, CommandError> {
    cli::load_config(path).map_err(|source| CommandError {
        stage: "configuration",
        source,
    })
}

fn abs(p: PathBuf) -> PathBuf {
    std::path::absolute(&p).unwrap_or(p)
}

fn run(cli: Cli) -> Result<(), CommandError> {
    let c = cli.common;
    let out = c.out.clone().map(abs);
    match cli.cmd {
        Cmd::Fit {
            shape,
            generator,
            targets,
            landmarks,
        } => {
            let mut cfg = match &c.config {
                Some(p) => load::<RunConfig>(p)?,
                None => RunConfig {
                    seed: 0,
                    preset: None,
                    paths: RunPaths {
                        shape_model: abs(need(shape, "shape")?),
                        generator: abs(need(generator, "generator")?),
                        targets: targets.into_iter().map(abs).collect(),
                        landmarks: landmarks.into_iter().map(abs).collect(),
                        output: need(out.clone(), "out")?,
                    },
                    fit: FitConfig::default(),
                },
            };
            Overrides {
                seed: c.seed,
                out,
                preset: c.preset,
                res: c.res,
                iters_inv: c.iters_inv,
                iters_tune: c.iters_tune,
                no_tuning: c.no_tuning,
            }
            .apply(&mut cfg);
            let o = cli::cmd_fit(&cfg)?;
            for (i, (p, l)) in o.psnr.iter().zip(&o.landmark_error).enumerate() {
                println!("view {i}: psnr {p:.2} dB, landmark error {l:.3} px");
            }
            println!("wrote {}", cfg.paths.output.display());
        }
        Cmd::Render {
            checkpoint,
            view,
            yaw,
            light_dir,
            light_color,
            ambient,
            shininess,
            light_scale,
        } => {
            let mut cfg = match &c.config {
                Some(p) => load::<cli::RenderConfig>(p)?,
                None => {
                    let ck = abs(need(checkpoint.clone(), "checkpoint")?);
                    let o = need(out.clone(), "out")?;
                    cli::RenderConfig::beside_checkpoint(&ck, &o).map_err(|source| CommandError {
                        stage: "configuration",
                        source,
                    })?
                }
            };
            if let Some(ck) = checkpoint {
                cfg.checkpoint = abs(ck);
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Some(v) = view {
                cfg.view = v;
            }
            let triple = |v: Option<Vec<f64>>, flag| -> Result<Option<[f64; 3]>, CommandError> {
                match v {
                    Some(v) if v.len() == 3 => Ok(Some([v[0], v[1], v[2]])),
                    Some(_) => Err(usage(format!("--{flag} takes three comma-separated numbers"))),
                    None => Ok(None),
                }
            };
            let (light_dir, light_color) = (triple(light_dir, "light-dir")?, triple(light_color, "light-color")?);
            let s = &mut cfg.scene;
            s.yaw = yaw.or(s.yaw);
            s.light_direction = light_dir.or(s.light_direction);
            s.light_color = light_color.or(s.light_color);
            s.ambient = ambient.or(s.ambient);
            s.shininess = shininess.or(s.shininess);
            s.light_scale = light_scale.or(s.light_scale);
            cli::cmd_render(&cfg)?;
            println!("wrote {}", cfg.output.join("render.png").display());
        }
        Cmd::Augment {
            albedo,
            target,
            rect,
            mst,
        } => {
            let mut cfg = match &c.config {
                Some(p) => load::<cli::AugmentConfig>(p)?,
                None => cli::AugmentConfig::new(
                    &abs(need(albedo.clone(), "albedo")?),
                    &abs(need(target.clone(), "target")?),
                    &need(out.clone(), "out")?,
                ),
            };
            if let Some(a) = albedo {
                cfg.albedo = abs(a);
            }
            if let Some(t) = target {
                cfg.target = abs(t);
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Some(r) = rect {
                if r.len() != 4 {
                    return Err(usage("--rect takes u0,v0,u1,v1"));
                }
                cfg.rect = UvRect {
                    u0: r[0],
                    v0: r[1],
                    u1: r[2],
                    v1: r[3],
                };
            }
            cfg.mst = mst.or(cfg.mst);
            let start = std::time::Instant::now();
            cli::cmd_augment(&cfg)?;
            println!("augmented in {:.2} s, wrote {}", start.elapsed().as_secs_f64(), cfg.output.display());
        }
        Cmd::Synth {
            yaws,
            three_view,
            levels,
            dim,
        } => {
            let mut cfg = match &c.config {
                Some(p) => load::<cli::SynthRun>(p)?,
                None => cli::SynthRun {
                    synth: SynthConfig::default(),
                    bank: Default::default(),
                    output: need(out.clone(), "out")?,
                },
            };
            if let Some(o) = out {
                cfg.output = o;
            }
            let s = &mut cfg.synth;
            if three_view {
                s.yaws = SynthConfig::THREE_VIEW_YAWS.to_vec();
            }
            if let Some(y) = yaws {
                s.yaws = y;
            }
            s.seed = c.seed.unwrap_or(s.seed);
            s.resolution = c.res.unwrap_or(s.resolution);
            s.levels = levels.unwrap_or(s.levels);
            s.dim = dim.unwrap_or(s.dim);
            let o = cli::cmd_synth(&cfg)?;
            println!("wrote {} ({} views), fit with --config {}", cfg.output.display(), o.fixture.targets.len(), o.run_config.display());
        }
        Cmd::Gradcheck { scope } => {
            let defaults = GradcheckConfig::default();
            let cfg = GradcheckConfig {
                resolution: c.res.unwrap_or(defaults.resolution),
                seed: c.seed.unwrap_or(defaults.seed),
            };
            let start = std::time::Instant::now();
            let o = cli::cmd_gradcheck(&scope, &cfg, out.as_deref())?;
            for it in &o.items {
                let verdict = if it.passed() { "ok" } else { "FAIL" };
                println!("{:<28} {:>10.3e} {:>6}  {verdict}", it.name, it.report.max_rel_err, it.report.checked);
            }
            println!("{} items in {:.1} s", o.items.len(), start.elapsed().as_secs_f64());
            if !o.passed {
                return Err(CommandError {
                    stage: "gradient check",
                    source: Error::Domain {
                        op: "gradcheck",
                        msg: "relative error above tolerance".into(),
                    },
                });
            }
        }
        Cmd::Interpolate { a, b, steps } => {
            let mut cfg = match &c.config {
                Some(p) => load::<cli::InterpolateConfig>(p)?,
                None => {
                    let a = abs(need(a.clone(), "a")?);
                    let r = cli::RenderConfig::beside_checkpoint(&a, Path::new("")).map_err(|source| CommandError {
                        stage: "configuration",
                        source,
                    })?;
                    cli::InterpolateConfig {
                        a,
                        b: abs(need(b.clone(), "b")?),
                        shape_model: r.shape_model,
                        generator: r.generator,
                        fit: r.fit,
                        steps: 5,
                        view: 0,
                        output: need(out.clone(), "out")?,
                    }
                }
            };
            if let Some(o) = out {
                cfg.output = o;
            }
            cfg.steps = steps.unwrap_or(cfg.steps);
            cli::cmd_interpolate(&cfg)?;
            println!("wrote {}", cfg.output.display());
        }
        Cmd::LatentPca {
            generator,
            samples,
            components,
        } => {
            let mut cfg = match &c.config {
                Some(p) => load::<cli::LatentPcaConfig>(p)?,
                None => cli::LatentPcaConfig::new(&abs(need(generator.clone(), "generator")?), &need(out.clone(), "out")?),
            };
            if let Some(g) = generator {
                cfg.generator = abs(g);
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            cfg.samples = samples.unwrap_or(cfg.samples);
            cfg.components = components.unwrap_or(cfg.components);
            cli::cmd_latent_pca(&cfg)?;
            println!("wrote {}", cfg.output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("facefit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
