//! `svam` command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data or I/O
//! error, 3 non-finite loss during training, 4 failed gradient check.

pub mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::checks::{self, CheckOptions, Precision};
use crate::data::{self, Dataset, DatasetIndex};
use crate::error::{Error, Result};
use crate::fmt::g6;
use crate::imageio;
use crate::inference::{self, Pipeline};
use crate::metrics;
use crate::model::{self, build_model, ModelParams, Variant, WidthScale};
use crate::roi;
use crate::saliency::SaliencyMap;
use crate::training::{self, Stage};

pub use config::RunConfig;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_GRADCHECK: u8 = 4;

/// Environment variable holding the worker-thread count.
pub const THREADS_VAR: &str = "SVAM_THREADS";

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

#[derive(Parser, Debug)]
#[command(name = "svam", version, about = "Salient object detection: train, infer, evaluate, extract regions")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one training stage and write weights plus a per-step loss CSV.
    Train(TrainArgs),
    /// Predict saliency maps for an image or a directory of images.
    Infer(InferArgs),
    /// Score predicted maps against ground-truth masks.
    Eval(EvalArgs),
    /// Compare autodiff gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Extract regions of interest from a saliency map and cut patches.
    Roi(RoiArgs),
    /// Print the parameter table and feature-map shapes.
    Describe(DescribeArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    input_size: Option<usize>,
    /// Channel multiplier, e.g. `1/8` or `0.25`.
    #[arg(long)]
    width_scale: Option<String>,
}

impl ModelArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        if let Some(v) = self.input_size {
            cfg.set("input_size", v.to_string())?;
        }
        if let Some(v) = &self.width_scale {
            cfg.set("width_scale", v.clone())?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// `pretrain` or `e2e`.
    #[arg(long)]
    stage: Option<String>,
    /// Dataset root with `images/` and `masks/`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Train on this many generated scenes instead of `--data`.
    #[arg(long, conflicts_with = "data")]
    synthetic: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Starting weights, e.g. the output of the pre-training stage.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Weight file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss CSV to write (default: weight path with `.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    weights: PathBuf,
    /// `full` or `light`.
    #[arg(long, default_value = "full")]
    variant: String,
    /// Image file or directory of images.
    input: PathBuf,
    /// Output file, or directory when the input is a directory.
    #[arg(short, long)]
    output: PathBuf,
    /// Also write `<stem>_contour.png` overlays.
    #[arg(long)]
    contour: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    pred_dir: PathBuf,
    gt_dir: PathBuf,
    #[arg(long, default_value = "pr_curve.csv")]
    pr_csv: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "1/8")]
    width_scale: String,
    /// Arithmetic of the primitive gradients: `f64` or `f32`.
    #[arg(long, default_value = "f64")]
    precision: String,
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args, Debug)]
struct RoiArgs {
    /// Saliency map; resized to the image before thresholding.
    map: PathBuf,
    image: PathBuf,
    #[arg(long, default_value_t = roi::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = roi::DEFAULT_MIN_AREA)]
    min_area: usize,
    #[arg(long, default_value_t = roi::DEFAULT_PATCH)]
    patch: usize,
    /// Target side used to pick the super-resolution scale.
    #[arg(long, default_value_t = 256)]
    sr_target: usize,
    #[arg(long, default_value = "roi_patches")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DescribeArgs {
    #[command(flatten)]
    model: ModelArgs,
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Pretrain => "pretrain",
        Stage::E2e => "e2e",
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train(a: &TrainArgs) -> Result<u8> {
    let mut cfg = a.model.run_config()?;
    let flags = [
        ("stage", a.stage.clone()),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("data", a.data.as_ref().map(|p| p.display().to_string())),
        ("init", a.init.as_ref().map(|p| p.display().to_string())),
        ("out", a.out.as_ref().map(|p| p.display().to_string())),
        ("log", a.log.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    let stage = cfg
        .stage()?
        .ok_or_else(|| Error::Config("--stage (pretrain|e2e) is required".into()))?;
    let mut model = cfg.model_config()?;
    let tc = cfg.train_config(stage)?;

    let dataset = match (a.synthetic, cfg.path("data")) {
        (Some(n), _) => data::synthetic(n, model.input_size, tc.seed)?,
        (None, Some(root)) => Dataset::load(&DatasetIndex::discover(root)?, model.input_size)?,
        (None, None) => return Err(Error::Config("--data or --synthetic is required".into())),
    };

    let mut params: ModelParams = build_model(&model, tc.seed)?;
    match cfg.path("init") {
        Some(p) => {
            let loaded = training::import_weights(&p)?;
            let replaced = training::load_into(&mut params, &loaded)?;
            log::info!("loaded {} tensors from {}", replaced.len(), p.display());
            model.pretrained = true;
        }
        None if stage == Stage::E2e => {
            log::warn!("no pre-trained weights given (--init); end-to-end training starts from scratch")
        }
        None => {}
    }

    let (params, log) = training::run_stage(&params, &model, &dataset, &tc)?;
    let out = cfg
        .path("out")
        .unwrap_or_else(|| PathBuf::from(format!("svam_{}.weights", stage_name(stage))));
    let log_path = cfg.path("log").unwrap_or_else(|| out.with_extension("csv"));
    training::export_weights(&params, &out)?;
    write_text(&log_path, &log.to_csv())?;
    let last = log.epoch_means.last().copied().unwrap_or(f64::NAN);
    println!(
        "{}: {} steps over {} images, final epoch loss {}",
        stage_name(stage),
        log.steps.len(),
        dataset.len(),
        g6(last)
    );
    println!("weights: {}", out.display());
    println!("log: {}", log_path.display());
    Ok(0)
}

fn contour_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("png");
    out.with_file_name(format!("{stem}_contour.{ext}"))
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && imageio::is_image_path(&path) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", dir.display())));
    }
    Ok(files)
}

fn infer(a: &InferArgs) -> Result<u8> {
    let variant: Variant = a.variant.parse()?;
    let base = a.model.run_config()?.model_config()?;
    let loaded: ModelParams = training::import_weights(&a.weights)?;
    let cfg = model::heads_of(&base, &loaded)?;
    let pipeline: Pipeline = inference::decouple(&loaded, &cfg, variant)?;

    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        image_files(&a.input)?
            .into_iter()
            .map(|p| {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("map").to_owned();
                (p, a.output.join(format!("{stem}.png")))
            })
            .collect()
    } else {
        vec![(a.input.clone(), a.output.clone())]
    };
    for (src, dst) in &jobs {
        let overlay = a.contour.then(|| contour_path(dst));
        let s = inference::predict_file(&pipeline, src, dst, overlay.as_deref())?;
        println!("{}\t{:.4} s\tmean {:.4}", src.display(), s.seconds, s.mean_saliency);
    }
    Ok(0)
}

fn eval(a: &EvalArgs) -> Result<u8> {
    let report = metrics::evaluate_dataset(&a.pred_dir, &a.gt_dir)?;
    write_text(&a.pr_csv, &report.pr.to_csv())?;
    println!("{}", report.summary());
    println!("images={} best_threshold={}", report.n_images, report.best_threshold);
    Ok(0)
}

fn gradcheck(a: &GradcheckArgs) -> Result<u8> {
    let opts = CheckOptions {
        seed: a.seed,
        width_scale: a.width_scale.parse::<WidthScale>()?,
        precision: a.precision.parse::<Precision>()?,
        corrupt: a.corrupt.clone(),
    };
    let results = checks::run_all(&opts)?;
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{:<16} max_rel_err={:.3e} tol={:.0e} {verdict}",
            r.name, r.max_rel_error, r.tolerance
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(0)
    } else {
        eprintln!("gradcheck failed: {}", failed.join(", "));
        Ok(EXIT_GRADCHECK)
    }
}

fn load_map_at(path: &Path, w: u32, h: u32) -> Result<SaliencyMap> {
    let gray = imageio::read_gray(path)?;
    let (sw, sh) = gray.dimensions();
    let unit: Vec<f32> = gray.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    let data = imageio::resize_map(&unit, sw, sh, w, h);
    SaliencyMap::new(h as usize, w as usize, data.into_iter().map(|v| (v as f64).clamp(0.0, 1.0)).collect())
}

fn roi_cmd(a: &RoiArgs) -> Result<u8> {
    let image = imageio::read_rgb(&a.image)?;
    let (w, h) = image.dimensions();
    let map = load_map_at(&a.map, w, h)?;
    let rois = roi::extract_rois(&map, a.threshold, a.min_area)?;
    if rois.is_empty() {
        println!("no salient regions");
        return Ok(0);
    }
    println!("roi\tx0\ty0\twidth\theight\tarea\tsr_scale\tregion\tpatches");
    for (i, r) in rois.iter().enumerate() {
        let plan = roi::plan_patches(r, w as usize, h as usize, a.patch)?;
        let dir = a.out.join(format!("roi_{i:03}"));
        roi::crop_and_emit(&image, &plan, &dir)?;
        let g = plan.region;
        println!(
            "{i}\t{}\t{}\t{}\t{}\t{}\t{}x\t{}x{}+{}+{}\t{}",
            r.x0,
            r.y0,
            r.width,
            r.height,
            r.pixel_area,
            roi::sr_scale_for(r, a.sr_target),
            g.width,
            g.height,
            g.x0,
            g.y0,
            plan.patches.len()
        );
    }
    Ok(0)
}

fn describe(a: &DescribeArgs) -> Result<u8> {
    let cfg = a.model.run_config()?.model_config()?;
    print!("{}", model::describe(&cfg)?);
    Ok(0)
}

impl Cli {
    pub fn execute(&self) -> Result<u8> {
        match &self.command {
            Command::Train(a) => train(a),
            Command::Infer(a) => infer(a),
            Command::Eval(a) => eval(a),
            Command::Gradcheck(a) => gradcheck(a),
            Command::Roi(a) => roi_cmd(a),
            Command::Describe(a) => describe(a),
        }
    }
}

/// Sizes the global thread pool from [`THREADS_VAR`] when set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("{THREADS_VAR}: {e}")))
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, S>(args: I) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_CONFIG,
            };
        }
    };
    let result = init_threads().and_then(|()| cli.execute());
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run(std::env::args_os()))
}
