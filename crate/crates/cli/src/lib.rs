//! Subcommands of the `hfield` binary.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hybrid_field::checkpoint::{load_checkpoint, read_header, save_checkpoint};
use hybrid_field::data::{generate_synthetic, Camera, SceneDataset, Split, SyntheticSceneSpec};
use hybrid_field::encoding::EncoderKind;
use hybrid_field::eval::{evaluate, render_image, AppearanceProtocol};
use hybrid_field::gradcheck::{micro_model, micro_render, run_gradcheck, FaultInjection, GradcheckConfig};
use hybrid_field::optim::{OptimError, Trainer};
use hybrid_field::{Appearance, RadianceField, Real, SceneBounds, Vec3};
use serde::{Deserialize, Serialize};

use config::{Overrides, Precision, Preset, RunConfig, DESK_SMALL_SCENE, RESOLVED_CONFIG_FILE};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "hfield", version, about = "Hybrid hash-grid / plane radiance fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene spec into a dataset directory.
    Synth(SynthArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Render one novel view.
    Render(RenderArgs),
    /// Finite-difference check of every gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec (TOML); the bundled desk-small scene when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_rays: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Foreground hash table size.
    #[arg(long)]
    pub hash_table_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Resolve and validate the config, print the parameter breakdown, stop.
    #[arg(long)]
    pub dry_run: bool,
}

impl TrainArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset,
            output: self.out.clone(),
            dataset: self.dataset.clone(),
            seed: self.seed,
            threads: self.threads,
            iterations: self.iterations,
            batch_rays: self.batch_rays,
            learning_rate: self.lr,
            encoder: self.encoder,
            precision: self.precision,
            hash_table_size: self.hash_table_size,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split '{other}' (train, test)")),
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the dataset the checkpoint was trained on.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long)]
    pub appearance: Option<AppearanceProtocol>,
    /// Output directory; defaults to `eval-<split>` beside the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub no_images: bool,
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| format!("expected x,y,z, got '{s}'"))
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub eye: [f64; 3],
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub target: [f64; 3],
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,0,1")]
    pub up: [f64; 3],
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    /// Horizontal field of view in degrees.
    #[arg(long, default_value_t = 50.0)]
    pub fov: f64,
    /// Training image whose embedding to use; the mean embedding otherwise.
    #[arg(long)]
    pub appearance_id: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Scale the analytic gradient of matching tensors (`name=factor`).
    #[arg(long, hide = true)]
    pub inject: Option<String>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let text = match &a.spec {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(|e| invalid(format!("{e:#}")))?,
        None => DESK_SMALL_SCENE.to_string(),
    };
    let mut spec = SyntheticSceneSpec::from_toml(&text).map_err(invalid)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate().map_err(invalid)?;
    println!("seed {}", spec.seed);
    let ds = write_dataset(&spec, &a.out)?;
    let train = ds.split_indices(Split::Train).len();
    let test = ds.split_indices(Split::Test).len();
    println!("{} views at {}x{} ({train} train / {test} test) -> {}", ds.cameras.len(), spec.width, spec.height, a.out.display());
    Ok(())
}

const SCENE_FILE: &str = "scene.toml";

fn write_dataset(spec: &SyntheticSceneSpec, dir: &Path) -> Result<SceneDataset> {
    let ds = generate_synthetic(spec).map_err(|e| match e {
        hybrid_field::data::DataError::Spec(m) => CliError::Validation(m),
        other => CliError::Runtime(other.into()),
    })?;
    ds.save(dir).with_context(|| format!("writing dataset to {}", dir.display()))?;
    fs::write(dir.join(SCENE_FILE), spec.to_toml()).context("writing scene spec")?;
    Ok(ds)
}

/// Loads `cfg.dataset`, or renders `cfg.scene` into `<output>/dataset`
/// unless an identical render is already there.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<(SceneDataset, PathBuf)> {
    if let Some(dir) = &cfg.dataset {
        let ds = SceneDataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        return Ok((ds, dir.clone()));
    }
    let dir = cfg.output.join("dataset");
    let spec_text = cfg.scene.to_toml();
    if fs::read_to_string(dir.join(SCENE_FILE)).is_ok_and(|t| t == spec_text) {
        if let Ok(ds) = SceneDataset::load(&dir) {
            return Ok((ds, dir));
        }
    }
    let ds = write_dataset(&cfg.scene, &dir)?;
    Ok((ds, dir))
}

/// One line of `metrics.jsonl`; wall time is kept out so logs of equal
/// seeds compare byte for byte.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: u64,
    pub loss: f64,
    pub train_psnr: f64,
}

pub fn read_metrics(path: &Path) -> anyhow::Result<Vec<LogLine>> {
    let text = fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    run: RunConfig,
    dataset: PathBuf,
    wall_ms: u64,
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::resolve(a.config.as_deref(), &a.overrides()).map_err(invalid)?;
    println!("seed {}", cfg.seed);
    if let Some(r) = &a.resume {
        read_header(r).map_err(|e| invalid(format!("{}: {e}", r.display())))?;
    }
    if a.dry_run {
        print!("{}", cfg.to_toml());
        println!("\nparameters (appearance rows for the scene's training views):");
        let rows = cfg.scene.cameras().iter().filter(|c| c.split == Split::Train).count();
        print!("{}", cfg.model.param_breakdown(rows).to_text());
        return Ok(());
    }
    match cfg.precision {
        Precision::F32 => train_as::<f32>(&cfg, a.resume.as_deref()),
        Precision::F64 => train_as::<f64>(&cfg, a.resume.as_deref()),
    }
}

fn train_as<T: Real>(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    fs::write(cfg.output.join(RESOLVED_CONFIG_FILE), cfg.to_toml()).context("writing resolved config")?;
    let (ds, ds_dir) = prepare_dataset(cfg)?;
    let bounds = ds.bounds;
    let rows = ds.appearance_count();

    let metrics_path = cfg.output.join(METRICS_FILE);
    let (mut trainer, model) = match resume {
        Some(path) => {
            let ck = load_checkpoint::<T>(path).with_context(|| format!("loading {}", path.display()))?;
            let adam = ck.adam.ok_or_else(|| invalid("checkpoint carries no optimizer state"))?;
            let prior = serde_json::from_value::<CheckpointMeta>(ck.header.meta.clone()).map(|m| m.wall_ms).unwrap_or(0);
            // keep the log consistent with the checkpoint's step
            let kept: Vec<LogLine> = read_metrics(&metrics_path).unwrap_or_default().into_iter().filter(|l| l.step <= adam.step).collect();
            write_metrics(&metrics_path, &kept, false)?;
            let mut t = Trainer::resume(ck.field, adam, cfg.train.clone(), &ds).map_err(optim_err)?;
            t.prior_ms = prior;
            println!("resumed at step {}", t.step_count());
            (t, ck.header.model)
        }
        None => {
            let field = RadianceField::<T>::new(&cfg.model, &bounds.cast(), rows, cfg.seed);
            write_metrics(&metrics_path, &[], false)?;
            (Trainer::new(field, cfg.train.clone(), &ds).map_err(optim_err)?, cfg.model.clone())
        }
    };
    println!("parameters:");
    print!("{}", model.param_breakdown(rows).to_text());

    let ckpt_dir = cfg.output.join("checkpoints");
    let mut log = fs::OpenOptions::new().append(true).open(&metrics_path).context("opening metrics log")?;
    let every = (cfg.train.iterations / 20).max(1) as u64;
    let started = Instant::now();
    let save = |t: &Trainer<T>, path: &Path, wall_ms: u64| -> anyhow::Result<()> {
        let meta = CheckpointMeta { run: cfg.clone(), dataset: ds_dir.clone(), wall_ms };
        save_checkpoint(path, &model, &bounds, &t.field, Some(&t.adam), serde_json::to_value(meta)?)?;
        Ok(())
    };
    let result = trainer.run(&ds, |t, m| {
        let line = LogLine { step: m.step, loss: m.loss, train_psnr: m.train_psnr };
        let io = |e: std::io::Error| OptimError::Callback(e.to_string());
        writeln!(log, "{}", serde_json::to_string(&line).expect("log line serializes")).map_err(io)?;
        if m.step % every == 0 || m.step as usize == t.config.iterations {
            println!("step {:>6}  loss {:.6}  train psnr {:6.2}  {:>8} ms", m.step, m.loss, m.train_psnr, m.wall_ms);
        }
        if t.config.checkpoint_every > 0 && m.step % t.config.checkpoint_every as u64 == 0 {
            fs::create_dir_all(&ckpt_dir).map_err(io)?;
            save(t, &ckpt_dir.join(format!("step_{:07}.ckpt", m.step)), m.wall_ms).map_err(|e| OptimError::Callback(e.to_string()))?;
        }
        Ok(())
    });
    if let Err(OptimError::NonFinite { step, dump }) = &result {
        let path = cfg.output.join(format!("nonfinite_step{step}.json"));
        fs::write(&path, dump).context("writing non-finite dump")?;
        return Err(CliError::Runtime(anyhow::anyhow!("non-finite loss or gradient at step {step}; dump in {}", path.display())));
    }
    result.map_err(optim_err)?;
    let wall = trainer.prior_ms + started.elapsed().as_millis() as u64;
    let final_path = cfg.output.join(FINAL_CHECKPOINT);
    save(&trainer, &final_path, wall)?;
    println!("trained {} steps in {:.1} s -> {}", trainer.step_count(), wall as f64 / 1e3, final_path.display());
    Ok(())
}

fn write_metrics(path: &Path, lines: &[LogLine], append: bool) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path).context("writing metrics log")?;
    for l in lines {
        writeln!(f, "{}", serde_json::to_string(l).expect("log line serializes")).context("writing metrics log")?;
    }
    Ok(())
}

fn optim_err(e: OptimError) -> CliError {
    match e {
        OptimError::Config(m) => CliError::Validation(m),
        other => CliError::Runtime(other.into()),
    }
}

fn checkpoint_meta(path: &Path) -> Result<(String, Option<CheckpointMeta>)> {
    let (header, _, _) = read_header(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok((header.dtype.clone(), serde_json::from_value(header.meta).ok()))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (dtype, meta) = checkpoint_meta(&a.checkpoint)?;
    let dataset = a.dataset.clone().or_else(|| meta.as_ref().map(|m| m.dataset.clone())).ok_or_else(|| invalid("--dataset is required for this checkpoint"))?;
    let ds = SceneDataset::load(&dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    let run = meta.map(|m| m.run);
    let split = a.split.or(run.as_ref().map(|r| r.eval.split)).unwrap_or(Split::Test);
    let protocol = a.appearance.or(run.as_ref().map(|r| r.eval.appearance)).unwrap_or(AppearanceProtocol::Mean);
    let render = run.as_ref().map(|r| r.train.render.clone()).unwrap_or_default();
    let name = if split == Split::Test { "test" } else { "train" };
    let out = a.out.clone().unwrap_or_else(|| a.checkpoint.parent().unwrap_or(Path::new(".")).join(format!("eval-{name}")));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let (report, images) = if dtype == "f64" {
        let ck = load_checkpoint::<f64>(&a.checkpoint).context("loading checkpoint")?;
        evaluate(&ck.field, &ds, split, protocol, &render, a.threads).context("evaluating")?
    } else {
        let ck = load_checkpoint::<f32>(&a.checkpoint).context("loading checkpoint")?;
        evaluate(&ck.field, &ds, split, protocol, &render, a.threads).context("evaluating")?
    };
    fs::write(out.join("metrics.csv"), report.to_csv()).context("writing metrics.csv")?;
    if !a.no_images {
        for (v, img) in report.views.iter().zip(&images) {
            let stem = Path::new(&v.image).file_stem().map_or_else(|| format!("view_{}", v.view), |s| s.to_string_lossy().into_owned());
            img.save_png(&out.join(format!("{stem}.png"))).context("writing render")?;
        }
    }
    for v in &report.views {
        println!("{:<16} psnr {:6.2}  ssim {:.4}", v.image, v.psnr, v.ssim);
    }
    println!("mean             psnr {:6.2}  ssim {:.4}  ({} views, {name})", report.mean_psnr, report.mean_ssim, report.views.len());
    Ok(())
}

pub fn cmd_render(a: &RenderArgs) -> Result<()> {
    let (dtype, meta) = checkpoint_meta(&a.checkpoint)?;
    if a.width == 0 || a.height == 0 || !(a.fov > 0.0 && a.fov < 180.0) {
        return Err(invalid("width and height must be positive and fov in (0, 180)"));
    }
    let cam = Camera::look_at(Vec3::from(a.eye), Vec3::from(a.target), Vec3::from(a.up), a.width, a.height, a.fov);
    cam.validate().map_err(invalid)?;
    let render = meta.map(|m| m.run.train.render).unwrap_or_default();
    let img = if dtype == "f64" {
        render_with::<f64>(&a.checkpoint, &cam, a.appearance_id, &render, a.threads)?
    } else {
        render_with::<f32>(&a.checkpoint, &cam, a.appearance_id, &render, a.threads)?
    };
    img.save_png(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{}x{} view -> {}", a.width, a.height, a.out.display());
    Ok(())
}

fn render_with<T: Real>(
    path: &Path,
    cam: &Camera,
    id: Option<usize>,
    render: &hybrid_field::RenderConfig,
    threads: usize,
) -> Result<hybrid_field::data::Image> {
    let ck = load_checkpoint::<T>(path).context("loading checkpoint")?;
    let bounds: SceneBounds<T> = ck.header.bounds.cast();
    let mean = ck.field.appearance.mean();
    let app = match id {
        Some(i) if i >= ck.field.appearance.count() => {
            return Err(invalid(format!("appearance id {i} out of range ({} rows)", ck.field.appearance.count())))
        }
        Some(i) => Appearance::Image(i),
        None => Appearance::Vector(&mean),
    };
    let mut img = render_image(&ck.field, cam, &bounds, app, render, threads).context("rendering")?;
    img.quantize();
    Ok(img)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let fault = match &a.inject {
        Some(s) => {
            let (name, factor) = s.split_once('=').ok_or_else(|| invalid("--inject expects name=factor"))?;
            Some(FaultInjection { tensor: name.into(), factor: factor.parse().map_err(|_| invalid("bad --inject factor"))? })
        }
        None => None,
    };
    println!("seed {}", a.seed);
    let cfg = GradcheckConfig { tolerance: a.tolerance, seed: a.seed, ..GradcheckConfig::default() };
    let bounds = SceneBounds::new(Vec3::new(0.0, 0.0, 0.5), 1.0);
    let started = Instant::now();
    let report = run_gradcheck(&micro_model(), &bounds, &micro_render(), 3, &cfg, fault.as_ref());
    print!("{}", report.to_text());
    println!("finished in {:.2} s", started.elapsed().as_secs_f64());
    if let Some(p) = &a.json {
        fs::write(p, serde_json::to_string_pretty(&report).context("serializing report")?).context("writing report")?;
    }
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        let w = report.worst().expect("a failing report has entries");
        Err(CliError::Check(format!("gradient check failed: worst {} / {} rel err {:.3e}", w.suite, w.name, w.max_rel_err)))
    }
}
