//! Command implementations: train, eval, sweep-t, convert, dump-maps.
//!
//! Every command parses and validates its configuration before any compute,
//! writes output files atomically, and maps failures onto two exit classes:
//! usage/config mistakes (exit 2) and runtime failures (exit 1).

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use proxyspike::ann::ann_forward;
use proxyspike::baselines::{convert, train_ann, train_surrogate};
use proxyspike::checkpoint::{atomic_write, Checkpoint};
use proxyspike::data::Dataset;
use proxyspike::metrics::{render_csv, write_csv, MetricsRow};
use proxyspike::snn::snn_forward;
use proxyspike::trainer::{evaluate, train, TrainOutcome};
use proxyspike::{Architecture, Error, Precision, ResetMode, Scalar, Tensor, TrainConfig};

use crate::config::{parse_t_list, Method, Overrides, RunConfig};
use crate::manifest::Manifest;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVAL_FILE: &str = "eval.json";
pub const SWEEP_FILE: &str = "sweep_t.csv";
pub const CONVERTED_FILE: &str = "converted.ckpt";
pub const REPORT_FILE: &str = "conversion_report.json";

// ===== errors and exit codes =====

/// A failed command, split by whose fault it is.
#[derive(Debug)]
pub enum CliError {
    /// The invocation or configuration was wrong (exit 2).
    Usage(String),
    /// The run itself failed (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::ArchParse { .. } | Error::ArchInvalid(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

// ===== command-line surface =====

/// Train spiking networks through a weight-sharing proxy; evaluate,
/// convert, sweep, and inspect them.
#[derive(Debug, Parser)]
#[command(name = "proxyspike", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoint.ckpt, metrics.csv, and manifest.json
    Train(TrainArgs),
    /// Score a checkpoint on one split, at any simulation length
    Eval(EvalArgs),
    /// Score a checkpoint across several simulation lengths
    SweepT(SweepArgs),
    /// Rescale trained ReLU weights into a spiking model (threshold 1, subtract reset)
    Convert(ConvertArgs),
    /// Dump paired spike-rate / activation maps for one input image
    DumpMaps(DumpMapsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file (key = value lines)
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    /// Override the training seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the simulation length T
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Override the firing threshold
    #[arg(long)]
    pub theta: Option<f64>,
    /// Override the training method (proxy | ann | surrogate)
    #[arg(long)]
    pub method: Option<String>,
    /// Override the numeric precision (f32 | f64)
    #[arg(long)]
    pub precision: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to score
    pub checkpoint: PathBuf,
    /// Config file describing the dataset
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for eval.json
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Split to score
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Simulation length (default: the checkpoint's training T)
    #[arg(long = "T")]
    pub t: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Checkpoint to score
    pub checkpoint: PathBuf,
    /// Config file describing the dataset
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for sweep_t.csv
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Split to score
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Comma-separated simulation lengths, e.g. 10,20,50 (no duplicates)
    #[arg(long = "t-list")]
    pub t_list: String,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Source checkpoint holding trained ReLU weights
    pub checkpoint: PathBuf,
    /// Config file describing the dataset (calibration uses the train split)
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for converted.ckpt and conversion_report.json
    #[arg(long)]
    pub out: PathBuf,
    /// Activation percentile for the layer scales (default from config)
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Cap on calibration samples (default from config)
    #[arg(long = "calibration-max")]
    pub calibration_max: Option<usize>,
    /// Simulation lengths to score the converted model at, e.g. 50,200
    #[arg(long = "eval-t")]
    pub eval_t: Option<String>,
}

#[derive(Debug, Args)]
pub struct DumpMapsArgs {
    /// Checkpoint to inspect
    pub checkpoint: PathBuf,
    /// Config file describing the dataset
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for the map files
    #[arg(long)]
    pub out: PathBuf,
    /// Which sample of the split to feed in
    #[arg(long = "image-index", default_value_t = 0)]
    pub image_index: usize,
    /// Comma-separated layer indices (default: every layer)
    #[arg(long)]
    pub layers: Option<String>,
    /// Split to draw the image from
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Simulation length (default: the checkpoint's training T)
    #[arg(long = "T")]
    pub t: Option<usize>,
}

/// Dispatch a parsed invocation.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::SweepT(args) => cmd_sweep_t(args),
        Command::Convert(args) => cmd_convert(args),
        Command::DumpMaps(args) => cmd_dump_maps(args),
    }
}

// ===== shared plumbing =====

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_file(path)?;
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn check_data_matches(data: &Dataset, arch: &Architecture) -> Result<(), CliError> {
    if data.dims() != arch.input || data.classes() != arch.classes {
        return Err(CliError::Usage(format!(
            "dataset provides {:?} images with {} classes, checkpoint architecture expects {:?} with {}",
            data.dims(),
            data.classes(),
            arch.input,
            arch.classes
        )));
    }
    Ok(())
}

/// Score a checkpoint on a split at simulation length `t`, honoring the
/// precision recorded in its header.
fn eval_checkpoint_row(ckpt: &Checkpoint, data: &Dataset, t: usize) -> Result<MetricsRow, CliError> {
    let cfg = TrainConfig {
        theta: ckpt.theta,
        t_max: t,
        reset: ckpt.reset,
        precision: ckpt.precision.parse::<Precision>()?,
        timing: false,
        ..TrainConfig::default()
    };
    let row = match cfg.precision {
        Precision::F32 => evaluate(data, &ckpt.params, &ckpt.arch, &cfg, 0)?,
        Precision::F64 => evaluate(data, &ckpt.params.cast::<f64>(), &ckpt.arch, &cfg, 0)?,
    };
    Ok(row)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

// ===== train =====

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let overrides = Overrides {
        seed: args.seed,
        t: args.t,
        theta: args.theta,
        method: args.method.clone(),
        precision: args.precision.clone(),
    };
    let cfg = load_config(&args.config, &overrides)?;
    if cfg.arch.is_empty() {
        return Err(CliError::Usage("config key \"arch\" is required to train".into()));
    }
    if cfg.method == Method::Convert {
        return Err(CliError::Usage(
            "method \"convert\" is handled by the convert subcommand; train accepts proxy, ann, or surrogate".into(),
        ));
    }
    let arch = cfg.architecture()?;
    let train_set = cfg.load_split("train")?;
    let test_set = cfg.load_split("test")?;
    println!(
        "training method={} arch={} on {} train / {} test samples (T={}, theta={})",
        cfg.method.as_str(),
        arch,
        train_set.len(),
        test_set.len(),
        cfg.train.t_max,
        cfg.train.theta
    );

    let outcome: TrainOutcome = match cfg.method {
        Method::Proxy => train(&cfg.train, &arch, &train_set, &test_set)?,
        Method::Ann => train_ann(&cfg.train, &arch, &train_set, &test_set)?,
        Method::Surrogate => train_surrogate(&cfg.surrogate(), &arch, &train_set, &test_set)?,
        Method::Convert => unreachable!("rejected above"),
    };

    ensure_dir(&args.out)?;
    let ckpt_path = args.out.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&ckpt_path)?;
    write_csv(&args.out.join(METRICS_FILE), &outcome.history)?;
    let wall = start.elapsed().as_secs_f64();
    Manifest::new("train", cfg.resolved(), cfg.train.seed, wall)
        .write(&args.out.join(MANIFEST_FILE))?;

    print!("{}", render_csv(&outcome.history));
    println!(
        "best epoch {} ({} parameters); wrote {}, {}, {}",
        outcome.best_epoch,
        outcome.checkpoint.params.scalar_count(),
        ckpt_path.display(),
        args.out.join(METRICS_FILE).display(),
        args.out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

// ===== eval =====

/// What `eval` prints and writes; deliberately free of wall-clock state so
/// a rerun produces byte-identical JSON.
#[derive(Debug, Serialize)]
struct EvalReport {
    checkpoint: String,
    split: String,
    t: usize,
    theta: f64,
    reset: String,
    precision: String,
    samples: usize,
    accuracy: f64,
    xent: f64,
    msse: f64,
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, &Overrides::default())?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let data = cfg.load_split(&args.split)?;
    check_data_matches(&data, &ckpt.arch)?;
    let t = args.t.unwrap_or(ckpt.t_max);
    let row = eval_checkpoint_row(&ckpt, &data, t)?;

    let report = EvalReport {
        checkpoint: args.checkpoint.display().to_string(),
        split: args.split.clone(),
        t,
        theta: ckpt.theta,
        reset: ckpt.reset.to_string(),
        precision: ckpt.precision.clone(),
        samples: data.len(),
        accuracy: row.accuracy,
        xent: row.xent,
        msse: row.msse,
    };
    ensure_dir(&args.out)?;
    let path = args.out.join(EVAL_FILE);
    write_json(&path, &report)?;
    println!(
        "split={} T={} samples={} accuracy={:.6} xent={:.6} msse={:.6}",
        report.split, report.t, report.samples, report.accuracy, report.xent, report.msse
    );
    println!("wrote {}", path.display());
    Ok(())
}

// ===== sweep-t =====

fn cmd_sweep_t(args: SweepArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, &Overrides::default())?;
    let ts = parse_t_list(&args.t_list)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let data = cfg.load_split(&args.split)?;
    check_data_matches(&data, &ckpt.arch)?;

    let mut csv = String::from("t,accuracy,xent,msse\n");
    for &t in &ts {
        let row = eval_checkpoint_row(&ckpt, &data, t)?;
        csv.push_str(&format!("{t},{:.6},{:.6},{:.6}\n", row.accuracy, row.xent, row.msse));
    }
    ensure_dir(&args.out)?;
    let path = args.out.join(SWEEP_FILE);
    atomic_write(&path, csv.as_bytes())?;
    print!("{csv}");
    println!("wrote {}", path.display());
    Ok(())
}

// ===== convert =====

fn cmd_convert(args: ConvertArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, &Overrides::default())?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let percentile = args.percentile.unwrap_or(cfg.percentile);
    let calibration_max = args.calibration_max.unwrap_or(cfg.calibration_max);
    if calibration_max == 0 {
        return Err(CliError::Usage("calibration-max must be at least 1".into()));
    }
    let eval_t = match &args.eval_t {
        Some(list) => parse_t_list(list)?,
        None => vec![cfg.train.t_max],
    };

    let train_split = cfg.load_split("train")?;
    check_data_matches(&train_split, &ckpt.arch)?;
    let calibration = train_split.take(calibration_max).with_split("calibration");
    let test_split = cfg.load_split("test")?;

    let precision = ckpt.precision.parse::<Precision>()?;
    let (params, mut report) = match precision {
        Precision::F32 => convert(&ckpt.params, &ckpt.arch, &calibration, percentile)?,
        Precision::F64 => {
            let (p64, report) = convert(&ckpt.params.cast::<f64>(), &ckpt.arch, &calibration, percentile)?;
            (p64.cast::<f32>(), report)
        }
    };

    // The converted model is defined for threshold 1 with subtract reset;
    // record the largest requested simulation length as its default T.
    let converted = Checkpoint {
        arch: ckpt.arch.clone(),
        theta: 1.0,
        t_max: *eval_t.last().expect("t list is non-empty"),
        reset: ResetMode::Subtract,
        precision: ckpt.precision.clone(),
        params,
    };
    for &t in &eval_t {
        let row = eval_checkpoint_row(&converted, &test_split, t)?;
        report.accuracy_per_t.push((t, row.accuracy));
    }

    ensure_dir(&args.out)?;
    let ckpt_path = args.out.join(CONVERTED_FILE);
    converted.save(&ckpt_path)?;
    let report_path = args.out.join(REPORT_FILE);
    write_json(&report_path, &report)?;

    for (i, scale) in report.scales.iter().enumerate() {
        println!("scale[{i}] = {scale:.6}");
    }
    for (t, acc) in &report.accuracy_per_t {
        println!("T={t}: accuracy {acc:.6}");
    }
    println!("wrote {}, {}", ckpt_path.display(), report_path.display());
    Ok(())
}

// ===== dump-maps =====

/// Interpret a step output shape as (channels, height, width); flat shapes
/// become a single row.
fn shape_chw(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [c, h, w] => (c, h, w),
        [n] => (1, 1, n),
        ref other => {
            let n: usize = other.iter().product();
            (1, 1, n)
        }
    }
}

/// Long-format CSV for one per-layer map.
fn map_csv(shape: &[usize], values: &[f64]) -> String {
    let (c, h, w) = shape_chw(shape);
    let mut out = String::from("channel,row,col,value\n");
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = values[(ci * h + y) * w + x];
                out.push_str(&format!("{ci},{y},{x},{v:.6}\n"));
            }
        }
    }
    out
}

/// ASCII PGM of one channel, normalized by its own maximum (an all-zero map
/// renders as all-zero pixels).
fn map_pgm(h: usize, w: usize, values: &[f64]) -> String {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P2\n{w} {h}\n255\n");
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| {
                let v = values[y * w + x];
                let px = if max > 0.0 { (255.0 * (v / max).clamp(0.0, 1.0)).round() } else { 0.0 };
                format!("{}", px as u8)
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Pearson correlation of two equal-length vectors; 0 when either side has
/// no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson needs equal-length vectors");
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Per-step spike-rate and activation maps for one image, as `f64` rows.
fn forward_maps<S: Scalar>(
    ckpt: &Checkpoint,
    image: &Tensor<S>,
    t: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), Error> {
    let params = ckpt.params.cast::<S>();
    let if_cfg = proxyspike::IfConfig::new(ckpt.theta, t, ckpt.reset)?;
    let out = snn_forward(&params, &ckpt.arch, image, &if_cfg, true)?;
    let rates = out.rates.expect("rates were requested");
    let mut acts: Vec<Tensor<S>> = Vec::new();
    ann_forward(&params, &ckpt.arch, image, None, Some(&mut acts))?;
    let to_f64 = |ts: Vec<Tensor<S>>| {
        ts.into_iter()
            .map(|m| m.as_slice().iter().map(|v| v.to_f64()).collect::<Vec<f64>>())
            .collect::<Vec<_>>()
    };
    Ok((to_f64(rates), to_f64(acts)))
}

fn cmd_dump_maps(args: DumpMapsArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, &Overrides::default())?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let data = cfg.load_split(&args.split)?;
    check_data_matches(&data, &ckpt.arch)?;
    if args.image_index >= data.len() {
        return Err(CliError::Usage(format!(
            "image index {} out of range; split {:?} has {} samples",
            args.image_index,
            args.split,
            data.len()
        )));
    }
    let n_steps = ckpt.arch.steps.len();
    let layers: Vec<usize> = match &args.layers {
        Some(list) => {
            let parsed = parse_t_list(list)
                .map_err(|e| CliError::Usage(format!("bad layer list: {e}")))?;
            for &i in &parsed {
                if i >= n_steps {
                    return Err(CliError::Usage(format!(
                        "layer index {i} out of range; architecture has {n_steps} layers (0..={})",
                        n_steps - 1
                    )));
                }
            }
            parsed
        }
        None => (0..n_steps).collect(),
    };
    let t = args.t.unwrap_or(ckpt.t_max);

    let precision = ckpt.precision.parse::<Precision>()?;
    let (rates, acts) = match precision {
        Precision::F32 => forward_maps::<f32>(&ckpt, &data.image(args.image_index), t)?,
        Precision::F64 => forward_maps::<f64>(&ckpt, &data.image(args.image_index), t)?,
    };

    ensure_dir(&args.out)?;
    let mut written = 0usize;
    for &layer in &layers {
        let shape = &ckpt.arch.shapes[layer];
        let (c, h, w) = shape_chw(shape);
        for (kind, values) in [("rate", &rates[layer]), ("act", &acts[layer])] {
            atomic_write(
                &args.out.join(format!("layer{layer}_{kind}.csv")),
                map_csv(shape, values).as_bytes(),
            )?;
            written += 1;
            for ci in 0..c {
                let channel = &values[ci * h * w..(ci + 1) * h * w];
                atomic_write(
                    &args.out.join(format!("layer{layer}_c{ci}_{kind}.pgm")),
                    map_pgm(h, w, channel).as_bytes(),
                )?;
                written += 1;
            }
        }
        println!(
            "layer {layer}: shape {shape:?}, rate/activation correlation {:.4}",
            pearson(&rates[layer], &acts[layer])
        );
    }
    println!("wrote {written} files to {}", args.out.display());
    Ok(())
}
