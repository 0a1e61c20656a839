//! The `fvsrn` command line.
//!
//! Every training-type subcommand writes its outputs under `--out` with fixed
//! names (`model.fvsrn`, `loss.csv`, `metrics.csv`, `manifest.json`). When
//! `--out` names a `.fvsrn` file, the checkpoint goes there and the other
//! files are written next to it.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fvsrn_core::camera::Camera;
use fvsrn_core::fourier::FourierMode;
use fvsrn_core::fused::{FusedEvaluator, FusedPlan};
use fvsrn_core::metrics::{psnr_images, psnr_volumes, ssim};
use fvsrn_core::model::{
    FvsrnModel, GridConfig, GridPrecision, Head, ModelConfig, TimeEncoding, WeightPrecision,
};
use fvsrn_core::render::{render_image, ModelSource, RenderSettings, Source};
use fvsrn_core::synth::{synth_field, SynthKind, SynthParams};
use fvsrn_core::tf::TransferFunction;
use fvsrn_core::train::{
    evaluate_views, train_screen, train_temporal, train_world, ScreenTrainConfig,
    TemporalTrainConfig, ViewMetrics, WorldTarget, WorldTrainConfig,
};
use fvsrn_core::volume::{equal_memory_resolution, ScalarVolume};
use serde::{Deserialize, Serialize};

use crate::bench::bench_compare;
use crate::checkpoint::{self, SaveOptions};
use crate::error::{Error, IoContext, Result};
use crate::imageio::{read_image, write_image};
use crate::service::{self, AppState, Session};
use crate::vraw::{read_volume, write_volume, VolumeDtype};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const THREADS_ENV: &str = "FVSRN_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "fvsrn",
    version,
    about = "Compress, train and render neural volume representations"
)]
pub struct Cli {
    /// Worker threads (defaults to $FVSRN_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single worker and fixed reduction order: bit-reproducible output.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic volume (or a sequence of them).
    MakeSynthetic(MakeSynthetic),
    /// Train on position/value pairs.
    TrainWorld(TrainWorld),
    /// Train a color model from rendered images.
    TrainScreen(TrainScreen),
    /// Train a keyframe model on a volume sequence.
    TrainTemporal(TrainTemporal),
    /// Render a model or a volume to PNG/PFM.
    Render(Render),
    /// Compare renders of a model against its ground truth.
    Evaluate(Evaluate),
    /// Naive vs fused evaluator throughput.
    Benchmark(Benchmark),
    /// Re-save a checkpoint with an 8-bit grid.
    Quantize(Quantize),
    /// PSNR (and SSIM for images) between two volumes or images.
    Metrics(Metrics),
    /// Grid / network / encoding sweeps.
    Ablate(Ablate),
    /// Start the HTTP render service.
    Serve(Serve),
}

#[derive(Debug, Args)]
pub struct MakeSynthetic {
    #[arg(long)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 64)]
    pub res: usize,
    #[arg(long, default_value = "f32")]
    pub dtype: VolumeDtype,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Timestep for moving_blobs.
    #[arg(long)]
    pub t: Option<f32>,
    /// Write timesteps 0..frames; `--out` must then contain `{t}`.
    #[arg(long)]
    pub frames: Option<u32>,
    /// JSON file with generator parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub out: String,
}

/// Flags shared by the trainers.
#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f32>,
    /// Transfer function JSON, or a preset name (ramp, two_peaks).
    #[arg(long)]
    pub tf: Option<String>,
    /// Views rendered for metrics.csv (0 skips evaluation).
    #[arg(long)]
    pub eval_views: Option<usize>,
    #[arg(long)]
    pub eval_res: Option<usize>,
    #[arg(long)]
    pub weights: Option<WeightPrecision>,
    #[arg(long)]
    pub grid: Option<GridPrecision>,
}

#[derive(Debug, Args)]
pub struct TrainWorld {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub adaptive: bool,
    /// Train the color head against tf(volume) instead of the density.
    #[arg(long)]
    pub color: bool,
    #[command(flatten)]
    pub common: TrainFlags,
}

#[derive(Debug, Args)]
pub struct TrainScreen {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[command(flatten)]
    pub common: TrainFlags,
}

#[derive(Debug, Args)]
pub struct TrainTemporal {
    /// Volume path pattern with a `{t}` placeholder.
    #[arg(long)]
    pub volumes: String,
    /// Comma-separated training timesteps.
    #[arg(long, value_delimiter = ',')]
    pub train_times: Option<Vec<u32>>,
    /// Comma-separated keyframe timesteps.
    #[arg(long, value_delimiter = ',')]
    pub keyframes: Option<Vec<u32>>,
    #[arg(long)]
    pub time_encoding: Option<TimeEncoding>,
    #[command(flatten)]
    pub common: TrainFlags,
}

#[derive(Debug, Args)]
pub struct Render {
    #[arg(long, conflicts_with = "volume", required_unless_present = "volume")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub volume: Option<PathBuf>,
    #[arg(long)]
    pub tf: Option<String>,
    /// Camera JSON {eye, target, up, fov_y_deg}; otherwise an orbit camera.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0, allow_hyphen_values = true)]
    pub azimuth: f32,
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    pub elevation: f32,
    #[arg(long, default_value_t = 2.2)]
    pub distance: f32,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 1.0)]
    pub stepsize_voxels: f32,
    #[arg(long)]
    pub t: Option<f32>,
    /// Use the layer-by-layer evaluator.
    #[arg(long)]
    pub naive: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    #[arg(long)]
    pub model: PathBuf,
    /// Ground-truth volume, or a pattern with `{t}` for temporal models.
    #[arg(long)]
    pub volume: String,
    #[arg(long)]
    pub tf: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    #[arg(long, default_value_t = 1.0)]
    pub stepsize_voxels: f32,
    /// Timesteps to score for temporal models (volume PSNR per timestep).
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<u32>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Benchmark {
    /// Checkpoint to time; the default configuration otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "4096,16384,65536")]
    pub batches: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Quantize {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "f16")]
    pub weights: WeightPrecision,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Metrics {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct Ablate {
    /// Target volume; a synthetic field when absent.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    #[arg(long, default_value = "gaussians")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 64)]
    pub res: usize,
    /// Grid resolutions, e.g. "R=0,8,16,32" (0 disables the grid).
    #[arg(long, default_value = "R=32")]
    pub grid: String,
    /// Grid feature counts, e.g. "F=4,16".
    #[arg(long, default_value = "F=16")]
    pub features: String,
    #[arg(long, default_value = "l=4")]
    pub layers: String,
    #[arg(long, default_value = "c=32")]
    pub channels: String,
    /// Fourier modes, e.g. "nerf,off".
    #[arg(long, value_delimiter = ',', default_value = "nerf")]
    pub fourier: Vec<FourierMode>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long)]
    pub tf: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    #[arg(long, default_value_t = 128)]
    pub eval_res: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also score the equal-memory low-pass baseline per grid setting.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Serve {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

/// JSON run configuration read by the trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub world: WorldTrainConfig,
    pub screen: ScreenTrainConfig,
    pub temporal: TemporalTrainConfig,
    pub tf: Option<TransferFunction>,
    pub save: SaveOptions,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub views: usize,
    pub resolution: usize,
    pub stepsize_voxels: f32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            views: 8,
            resolution: 128,
            stepsize_voxels: 1.0,
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    versions: Versions,
    threads: usize,
    deterministic: bool,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

#[derive(Debug, Serialize)]
struct Versions {
    fvsrn: &'static str,
    rustc_target: &'static str,
}

/// Paths of the fixed output files.
struct OutDir {
    model: PathBuf,
    dir: PathBuf,
}

impl OutDir {
    fn new(out: &Path) -> Result<Self> {
        let (dir, model) = if out.extension().is_some_and(|e| e == "fvsrn") {
            let dir = out
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            (dir.to_path_buf(), out.to_path_buf())
        } else {
            (out.to_path_buf(), out.join("model.fvsrn"))
        };
        fs::create_dir_all(&dir).at(&dir)?;
        Ok(Self { model, dir })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

struct Ctx {
    argv: Vec<String>,
    threads: usize,
    deterministic: bool,
}

impl Ctx {
    fn manifest(
        &self,
        out: &OutDir,
        command: &str,
        config: &impl Serialize,
        inputs: &[&str],
        outputs: &[&Path],
        summary: serde_json::Value,
    ) -> Result<()> {
        let manifest = Manifest {
            command,
            argv: self.argv.clone(),
            versions: Versions {
                fvsrn: env!("CARGO_PKG_VERSION"),
                rustc_target: std::env::consts::ARCH,
            },
            threads: self.threads,
            deterministic: self.deterministic,
            config: serde_json::to_value(config)?,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            summary,
        };
        let path = out.file("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).at(&path)
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = if cli.deterministic {
        1
    } else {
        cli.threads
            .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    };
    let ctx = Ctx {
        argv: argv
            .iter()
            .map(|s| s.to_string_lossy().into_owned())
            .collect(),
        threads,
        deterministic: cli.deterministic,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| dispatch(&ctx, cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<()> {
    match command {
        Command::MakeSynthetic(a) => make_synthetic(a),
        Command::TrainWorld(a) => cmd_train_world(ctx, a),
        Command::TrainScreen(a) => cmd_train_screen(ctx, a),
        Command::TrainTemporal(a) => cmd_train_temporal(ctx, a),
        Command::Render(a) => cmd_render(a),
        Command::Evaluate(a) => cmd_evaluate(ctx, a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Ablate(a) => cmd_ablate(ctx, a),
        Command::Serve(a) => cmd_serve(ctx, a),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).at(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// A preset name or a JSON control-point file.
pub fn load_tf(spec: &str) -> Result<TransferFunction> {
    if let Some(tf) = service::tf_presets().remove(spec) {
        return Ok(tf);
    }
    read_json(Path::new(spec))
}

fn frame_path(pattern: &str, t: u32) -> PathBuf {
    PathBuf::from(pattern.replace("{t}", &t.to_string()))
}

fn make_synthetic(a: MakeSynthetic) -> Result<()> {
    let mut params: SynthParams = match &a.params {
        Some(p) => read_json(p)?,
        None => SynthParams::default(),
    };
    params.seed = a.seed;
    match a.frames {
        Some(frames) => {
            if !a.out.contains("{t}") {
                return Err(Error::Core(fvsrn_core::Error::InvalidConfig(
                    "--frames needs an --out pattern containing {t}".into(),
                )));
            }
            for t in 0..frames {
                let v = synth_field(a.kind, a.res, &params, Some(t as f32))?;
                write_volume(&v, &frame_path(&a.out, t), a.dtype)?;
            }
        }
        None => {
            let v = synth_field(a.kind, a.res, &params, a.t)?;
            write_volume(&v, Path::new(&a.out), a.dtype)?;
        }
    }
    Ok(())
}

fn load_config(flags: &TrainFlags) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &flags.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(tf) = &flags.tf {
        cfg.tf = Some(load_tf(tf)?);
    }
    if let Some(v) = flags.eval_views {
        cfg.eval.views = v;
    }
    if let Some(v) = flags.eval_res {
        cfg.eval.resolution = v;
    }
    if let Some(w) = flags.weights {
        cfg.save.weights = w;
    }
    if let Some(g) = flags.grid {
        cfg.save.grid = g;
    }
    if let Some(seed) = flags.seed {
        cfg.model.seed = seed;
        cfg.world.seed = seed;
        cfg.screen.seed = seed;
        cfg.temporal.world.seed = seed;
    }
    if let Some(e) = flags.epochs {
        cfg.world.epochs = e;
        cfg.screen.epochs = e;
        cfg.temporal.world.epochs = e;
    }
    if let Some(lr) = flags.lr {
        cfg.world.lr = lr;
        cfg.screen.lr = lr;
        cfg.temporal.world.lr = lr;
    }
    Ok(cfg)
}

fn progress_printer(total: usize) -> impl FnMut(usize, f32) {
    let step = (total / 10).max(1);
    move |epoch, loss| {
        if (epoch + 1) % step == 0 || epoch + 1 == total {
            eprintln!("epoch {:>5}/{total}  loss {loss:.6}", epoch + 1);
        }
    }
}

fn write_loss(path: &Path, trace: &[f32]) -> Result<()> {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    fs::write(path, s).at(path)
}

fn write_view_metrics(path: &Path, m: &ViewMetrics) -> Result<()> {
    let mut s = String::from("view,psnr,ssim\n");
    for (i, v) in m.views.iter().enumerate() {
        s.push_str(&format!("{i},{},{}\n", v.psnr, v.ssim));
    }
    s.push_str(&format!("mean,{},{}\n", m.mean.psnr, m.mean.ssim));
    fs::write(path, s).at(path)
}

fn eval_settings(volume: &ScalarVolume, stepsize_voxels: f32) -> RenderSettings {
    RenderSettings::default().with_voxel_stepsize(stepsize_voxels, volume.max_dim())
}

/// Renders the model against the ground truth from `cfg.views` orbit views.
fn score_views(
    model: &FvsrnModel,
    volume: &ScalarVolume,
    tf: &TransferFunction,
    time: Option<f32>,
    cfg: &EvalConfig,
) -> Result<ViewMetrics> {
    let plan = FusedPlan::for_model(model)?;
    let fused = FusedEvaluator::new(&plan, model.mlp())?;
    let candidate = Source::Model(ModelSource {
        model,
        tf: (model.head() == Head::Density).then_some(tf),
        time,
        fused: Some(&fused),
    });
    let reference = Source::Volume { volume, tf };
    Ok(evaluate_views(
        &candidate,
        &reference,
        cfg.views,
        cfg.resolution,
        &eval_settings(volume, cfg.stepsize_voxels),
    )?)
}

struct Trained<'a> {
    model: &'a FvsrnModel,
    trace: &'a [f32],
    metrics: Option<ViewMetrics>,
    volume_dims: [usize; 3],
}

fn finish_training(
    ctx: &Ctx,
    command: &str,
    out: &OutDir,
    cfg: &RunConfig,
    inputs: &[&str],
    run: Trained<'_>,
) -> Result<()> {
    let Trained {
        model,
        trace,
        metrics,
        volume_dims,
    } = run;
    let save = SaveOptions {
        volume_dims: Some(volume_dims),
        ..cfg.save
    };
    checkpoint::save(model, &out.model, &save)?;
    let loss = out.file("loss.csv");
    write_loss(&loss, trace)?;
    let mut outputs = vec![out.model.as_path(), loss.as_path()];
    let metrics_path = out.file("metrics.csv");
    if let Some(m) = &metrics {
        write_view_metrics(&metrics_path, m)?;
        outputs.push(&metrics_path);
        eprintln!("mean psnr {:.2} dB, ssim {:.4}", m.mean.psnr, m.mean.ssim);
    }
    let footprint = model.memory_footprint(save.weights, save.grid);
    let summary = serde_json::json!({
        "final_loss": trace.last(),
        "memory": footprint,
        "mean": metrics.as_ref().map(|m| m.mean),
    });
    ctx.manifest(out, command, cfg, inputs, &outputs, summary)
}

fn cmd_train_world(ctx: &Ctx, a: TrainWorld) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.samples {
        cfg.world.samples = n;
        cfg.world.batch = cfg.world.batch.min(n);
    }
    cfg.world.adaptive |= a.adaptive;
    if a.color {
        cfg.model.head = Head::Color;
    }
    let tf = cfg
        .tf
        .clone()
        .unwrap_or_else(|| TransferFunction::ramp(20.0));
    let volume = read_volume(&a.volume)?;
    let target = match cfg.model.head {
        Head::Density => WorldTarget::Density(&volume),
        Head::Color => WorldTarget::Color {
            volume: &volume,
            tf: &tf,
        },
    };
    let out = OutDir::new(&a.common.out)?;
    let mut model = FvsrnModel::new(cfg.model.clone())?;
    let trace = train_world(
        &mut model,
        &target,
        &cfg.world,
        &mut progress_printer(cfg.world.epochs),
    )?;
    let metrics = (cfg.eval.views > 0)
        .then(|| score_views(&model, &volume, &tf, None, &cfg.eval))
        .transpose()?;
    let input = a.volume.display().to_string();
    let run = Trained {
        model: &model,
        trace: &trace,
        metrics,
        volume_dims: volume.dims(),
    };
    finish_training(ctx, "train-world", &out, &cfg, &[&input], run)
}

fn cmd_train_screen(ctx: &Ctx, a: TrainScreen) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    cfg.model.head = Head::Color;
    if let Some(v) = a.views {
        cfg.screen.views = v;
    }
    if let Some(r) = a.resolution {
        cfg.screen.resolution = r;
    }
    let tf = cfg
        .tf
        .clone()
        .unwrap_or_else(|| TransferFunction::ramp(20.0));
    let volume = read_volume(&a.volume)?;
    let out = OutDir::new(&a.common.out)?;
    let mut model = FvsrnModel::new(cfg.model.clone())?;
    let trace = train_screen(
        &mut model,
        &volume,
        &tf,
        &cfg.screen,
        &mut progress_printer(cfg.screen.epochs),
    )?;
    let metrics = (cfg.eval.views > 0)
        .then(|| score_views(&model, &volume, &tf, None, &cfg.eval))
        .transpose()?;
    let input = a.volume.display().to_string();
    let run = Trained {
        model: &model,
        trace: &trace,
        metrics,
        volume_dims: volume.dims(),
    };
    finish_training(ctx, "train-screen", &out, &cfg, &[&input], run)
}

fn cmd_train_temporal(ctx: &Ctx, a: TrainTemporal) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(t) = a.train_times {
        cfg.temporal.train_times = t;
    }
    let mut temporal = cfg.model.temporal.clone().unwrap_or_default();
    if let Some(k) = a.keyframes {
        temporal.keyframes = k;
    }
    if let Some(e) = a.time_encoding {
        temporal.encoding = e;
    }
    if temporal.span == [0, 0] {
        let times = cfg.temporal.train_times.iter().chain(&temporal.keyframes);
        temporal.span = [
            *times.clone().min().unwrap_or(&0),
            *times.max().unwrap_or(&0),
        ];
    }
    cfg.model.temporal = Some(temporal);
    if cfg.model.grid.is_none() {
        cfg.model.grid = Some(GridConfig {
            resolution: 32,
            channels: 16,
        });
    }
    let out = OutDir::new(&a.common.out)?;
    let mut model = FvsrnModel::new(cfg.model.clone())?;
    let mut dims = [0; 3];
    let mut provider = |t: u32| {
        let v = read_volume(&frame_path(&a.volumes, t))
            .map_err(|e| fvsrn_core::Error::InvalidConfig(e.to_string()))?;
        dims = v.dims();
        Ok(v)
    };
    let trace = train_temporal(
        &mut model,
        &mut provider,
        &cfg.temporal,
        &mut progress_printer(cfg.temporal.world.epochs),
    )?;
    let run = Trained {
        model: &model,
        trace: &trace,
        metrics: None,
        volume_dims: dims,
    };
    finish_training(ctx, "train-temporal", &out, &cfg, &[&a.volumes], run)
}

fn camera_from_args(a: &Render) -> Result<Camera> {
    let camera = match &a.camera {
        Some(path) => {
            let spec: service::CameraSpec = read_json(path)?;
            Camera {
                eye: spec.eye,
                target: spec.target,
                up: spec.up,
                fov_y: spec.fov_y_deg.to_radians(),
                width: a.width,
                height: a.height,
            }
        }
        None => {
            let (az, el) = (a.azimuth.to_radians(), a.elevation.to_radians());
            let dir = [el.cos() * az.sin(), el.sin(), el.cos() * az.cos()];
            Camera::orbit(
                [0.5; 3],
                dir,
                a.distance,
                40f32.to_radians(),
                a.width,
                a.height,
            )
        }
    };
    camera.validate()?;
    Ok(camera)
}

fn cmd_render(a: Render) -> Result<()> {
    let camera = camera_from_args(&a)?;
    let tf = a.tf.as_deref().map(load_tf).transpose()?;
    let image = match (&a.model, &a.volume) {
        (Some(path), _) => {
            let (header, model) = checkpoint::load_with_header(path)?;
            let plan = FusedPlan::for_model(&model)?;
            let fused = FusedEvaluator::new(&plan, model.mlp())?;
            let default_tf = TransferFunction::ramp(20.0);
            let tf = match model.head() {
                Head::Density => Some(tf.as_ref().unwrap_or(&default_tf)),
                Head::Color => tf.as_ref(),
            };
            let source = ModelSource {
                model: &model,
                tf,
                time: a.t,
                fused: (!a.naive).then_some(&fused),
            };
            let res = header
                .volume_dims
                .map_or(service::DEFAULT_VOLUME_RESOLUTION, |d| {
                    d.into_iter().max().unwrap_or(1)
                });
            let settings = RenderSettings::default().with_voxel_stepsize(a.stepsize_voxels, res);
            render_image(&Source::Model(source), &camera, &settings)?
        }
        (None, Some(path)) => {
            let volume = read_volume(path)?;
            let tf = tf.unwrap_or_else(|| TransferFunction::ramp(20.0));
            let settings = eval_settings(&volume, a.stepsize_voxels);
            render_image(
                &Source::Volume {
                    volume: &volume,
                    tf: &tf,
                },
                &camera,
                &settings,
            )?
        }
        (None, None) => unreachable!("clap requires --model or --volume"),
    };
    write_image(&image, &a.out)
}

fn cmd_evaluate(ctx: &Ctx, a: Evaluate) -> Result<()> {
    let model = checkpoint::load(&a.model)?;
    let out = OutDir::new(&a.out)?;
    let metrics = out.file("metrics.csv");
    let cfg = EvalConfig {
        views: a.views,
        resolution: a.res,
        stepsize_voxels: a.stepsize_voxels,
    };
    let summary = if model.is_temporal() {
        let [lo, hi] = model.temporal_span().unwrap_or([0, 0]);
        let times = a.times.clone().unwrap_or_else(|| (lo..=hi).collect());
        let mut s = String::from("t,psnr\n");
        let mut scores = Vec::new();
        for t in times {
            let truth = read_volume(&frame_path(&a.volume, t))?;
            let decoded = model.decode_volume(truth.dims(), Some(t as f32))?;
            let p = psnr_volumes(&decoded, &truth)?;
            s.push_str(&format!("{t},{p}\n"));
            scores.push(p);
        }
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        s.push_str(&format!("mean,{mean}\n"));
        fs::write(&metrics, s).at(&metrics)?;
        serde_json::json!({ "mean_psnr": mean })
    } else {
        let volume = read_volume(Path::new(&a.volume))?;
        let tf =
            a.tf.as_deref()
                .map(load_tf)
                .transpose()?
                .unwrap_or_else(|| TransferFunction::ramp(20.0));
        let m = score_views(&model, &volume, &tf, None, &cfg)?;
        write_view_metrics(&metrics, &m)?;
        println!("psnr {:.3} ssim {:.5}", m.mean.psnr, m.mean.ssim);
        serde_json::json!({ "mean": m.mean })
    };
    ctx.manifest(
        &out,
        "evaluate",
        &cfg,
        &[&a.model.display().to_string(), &a.volume],
        &[&metrics],
        summary,
    )
}

fn cmd_benchmark(a: Benchmark) -> Result<()> {
    let model = match &a.model {
        Some(p) => checkpoint::load(p)?,
        None => FvsrnModel::new(ModelConfig::default())?,
    };
    let report = bench_compare(&model, &a.batches, a.runs)?;
    match &a.out {
        Some(path) => {
            let mut f = fs::File::create(path).at(path)?;
            report.write_csv(&mut f).at(path)?;
        }
        None => report
            .write_csv(std::io::stdout().lock())
            .map_err(|source| Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })?,
    }
    for &b in &a.batches {
        if let Some(s) = report.speedup(b) {
            eprintln!("batch {b}: fused speedup {s:.2}x");
        }
    }
    Ok(())
}

fn cmd_quantize(a: Quantize) -> Result<()> {
    let (header, model) = checkpoint::load_with_header(&a.model)?;
    let opts = SaveOptions {
        weights: a.weights,
        grid: GridPrecision::U8,
        volume_dims: header.volume_dims,
    };
    checkpoint::save(&model, &a.out, &opts)?;
    let before = model.memory_footprint(header.weight_precision, header.grid_precision);
    let after = model.memory_footprint(opts.weights, opts.grid);
    println!("total bytes {} -> {}", before.total, after.total);
    Ok(())
}

fn cmd_metrics(a: Metrics) -> Result<()> {
    let is_volume = |p: &Path| p.extension().is_some_and(|e| e == "vraw");
    if is_volume(&a.a) && is_volume(&a.b) {
        let p = psnr_volumes(&read_volume(&a.a)?, &read_volume(&a.b)?)?;
        println!("psnr {p:.3}");
    } else {
        let (x, y) = (read_image(&a.a)?, read_image(&a.b)?);
        println!("psnr {:.3} ssim {:.5}", psnr_images(&x, &y)?, ssim(&x, &y)?);
    }
    Ok(())
}

/// Parses "R=8,16,32" (the prefix is optional).
pub fn parse_sweep(spec: &str) -> Result<Vec<usize>> {
    let body = spec.split_once('=').map_or(spec, |(_, v)| v);
    body.split(',')
        .map(|v| {
            v.trim().parse().map_err(|_| {
                Error::Core(fvsrn_core::Error::InvalidConfig(format!(
                    "bad sweep value {v:?} in {spec:?}"
                )))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub resolution: usize,
    pub features: usize,
    pub layers: usize,
    pub channels: usize,
    pub fourier: FourierMode,
    pub network_bytes: usize,
    pub grid_bytes: usize,
    pub total_bytes: usize,
    pub final_loss: f32,
    pub psnr: f64,
    pub ssim: f64,
}

fn cmd_ablate(ctx: &Ctx, a: Ablate) -> Result<()> {
    let volume = match &a.volume {
        Some(p) => read_volume(p)?,
        None => synth_field(
            a.kind,
            a.res,
            &SynthParams {
                seed: a.seed,
                ..SynthParams::default()
            },
            None,
        )?,
    };
    let tf =
        a.tf.as_deref()
            .map(load_tf)
            .transpose()?
            .unwrap_or_else(|| TransferFunction::ramp(20.0));
    let (grids, features) = (parse_sweep(&a.grid)?, parse_sweep(&a.features)?);
    let (layers, channels) = (parse_sweep(&a.layers)?, parse_sweep(&a.channels)?);
    let eval = EvalConfig {
        views: a.views,
        resolution: a.eval_res,
        stepsize_voxels: 1.0,
    };
    let world = WorldTrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        ..WorldTrainConfig::default()
    };
    let out = OutDir::new(&a.out)?;
    let csv = out.file("ablation.csv");
    let mut file = fs::File::create(&csv).at(&csv)?;
    writeln!(file, "resolution,features,layers,channels,fourier,network_bytes,grid_bytes,total_bytes,final_loss,psnr,ssim").at(&csv)?;
    let mut rows = Vec::new();
    let mut configs = Vec::new();
    for &r in &grids {
        for &f in features
            .iter()
            .take(if r == 0 { 1 } else { features.len() })
        {
            for &l in &layers {
                for &c in &channels {
                    for &mode in &a.fourier {
                        configs.push((r, if r == 0 { 0 } else { f }, l, c, mode));
                    }
                }
            }
        }
    }
    for (r, f, l, c, mode) in configs {
        let mut cfg = ModelConfig {
            layers: l,
            channels: c,
            grid: (r > 0).then_some(GridConfig {
                resolution: r,
                channels: f,
            }),
            seed: a.seed,
            ..ModelConfig::default()
        };
        cfg.fourier.mode = mode;
        eprintln!("R={r} F={f} l={l} c={c} fourier={mode:?}");
        let mut model = FvsrnModel::new(cfg)?;
        let trace = train_world(
            &mut model,
            &WorldTarget::Density(&volume),
            &world,
            &mut progress_printer(a.epochs),
        )?;
        let m = score_views(&model, &volume, &tf, None, &eval)?;
        let mem = model.memory_footprint(WeightPrecision::F16, GridPrecision::F32);
        let row = AblationRow {
            resolution: r,
            features: f,
            layers: l,
            channels: c,
            fourier: mode,
            network_bytes: mem.network,
            grid_bytes: mem.grid,
            total_bytes: mem.total,
            final_loss: trace.last().copied().unwrap_or(f32::NAN),
            psnr: m.mean.psnr,
            ssim: m.mean.ssim,
        };
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.resolution,
            row.features,
            row.layers,
            row.channels,
            fourier_name(row.fourier),
            row.network_bytes,
            row.grid_bytes,
            row.total_bytes,
            row.final_loss,
            row.psnr,
            row.ssim
        )
        .at(&csv)?;
        rows.push(row);
    }
    let mut outputs = vec![csv.clone()];
    if a.baseline {
        let path = out.file("baseline.csv");
        let mut s = String::from("resolution,features,baseline_resolution,psnr,ssim\n");
        for &r in grids.iter().filter(|&&r| r > 0) {
            for &f in &features {
                let res = equal_memory_resolution(r, f).min(volume.max_dim());
                let low = volume.lowpass_downsample(res)?;
                let m = evaluate_views(
                    &Source::Volume {
                        volume: &low,
                        tf: &tf,
                    },
                    &Source::Volume {
                        volume: &volume,
                        tf: &tf,
                    },
                    eval.views,
                    eval.resolution,
                    &eval_settings(&volume, 1.0),
                )?;
                s.push_str(&format!("{r},{f},{res},{},{}\n", m.mean.psnr, m.mean.ssim));
            }
        }
        fs::write(&path, s).at(&path)?;
        outputs.push(path);
    }
    let outputs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    let config = serde_json::json!({
        "grid": grids, "features": features, "layers": layers, "channels": channels,
        "fourier": a.fourier, "epochs": a.epochs, "seed": a.seed, "world": world, "eval": eval,
    });
    ctx.manifest(
        &out,
        "ablate",
        &config,
        &[],
        &outputs,
        serde_json::to_value(&rows)?,
    )
}

fn fourier_name(mode: FourierMode) -> &'static str {
    match mode {
        FourierMode::Nerf => "nerf",
        FourierMode::Random => "random",
        FourierMode::Off => "off",
    }
}

fn cmd_serve(ctx: &Ctx, a: Serve) -> Result<()> {
    let state = AppState::default();
    if let Some(path) = &a.model {
        let (header, model) = checkpoint::load_with_header(path)?;
        state.load(Session::new(model, Some(&header))?);
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(ctx.threads.max(1))
        .enable_all()
        .build()
        .map_err(|source| Error::Io {
            path: PathBuf::from("<runtime>"),
            source,
        })?;
    runtime
        .block_on(service::serve(state, a.port))
        .map_err(|source| Error::Io {
            path: PathBuf::from(format!("0.0.0.0:{}", a.port)),
            source,
        })
}
