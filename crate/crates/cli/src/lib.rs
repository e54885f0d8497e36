//! Command implementations behind the `objdepth` binary.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use objdepth_core::gradcheck::{run_suite, GradCheckConfig};
use objdepth_core::io::{self, IoError, ReportDocument, ReportInputs};
use objdepth_core::metrics::{default_iou_thresholds, fitness};
use objdepth_core::synth::{generate, SynthConfig};
use objdepth_core::{
    evaluate, DepthBinSpec, DepthDecode, DepthPrediction, Detection, Error, EvalConfig, EvalReport,
    GroundTruthObject, ThresholdGrid, TransferKind, TransferSpec,
};

#[derive(Debug, Parser)]
#[command(
    name = "objdepth",
    version,
    about = "Object-level depth estimation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predictions against ground truth (Fitness, mAP, MALE).
    Evaluate(EvaluateArgs),
    /// Encode a depth in meters or decode a network output.
    Encode(EncodeArgs),
    /// Check every analytic gradient against finite differences.
    LossCheck(LossCheckArgs),
    /// Generate a synthetic ground-truth / prediction pair.
    Synth(SynthArgs),
    /// Emit the F1-Comb grid as CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EvalOptions {
    /// Number of depth bins K.
    #[arg(long = "bins", default_value_t = 7)]
    pub k: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dmin: f64,
    #[arg(long, default_value_t = 700.0)]
    pub dmax: f64,
    /// Logit scale for the softmax feeding interpolated decoding.
    #[arg(long, default_value_t = 3.0)]
    pub beta: f64,
    /// continuous | center | interp:<kind> | auto (continuous for regression
    /// outputs, center otherwise).
    #[arg(long, default_value = "auto")]
    pub decode: String,
    #[arg(long, default_value_t = 0.01)]
    pub grid_conf_step: f64,
    /// Comma-separated IoU thresholds (default 0.50, 0.55, ..., 0.95).
    #[arg(long, value_delimiter = ',')]
    pub iou_set: Option<Vec<f64>>,
    /// Worker threads for the grid (0 = available parallelism).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth JSONL.
    #[arg(required_unless_present = "from_report")]
    pub ground_truth: Option<PathBuf>,
    /// Prediction JSONL.
    #[arg(required_unless_present = "from_report")]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub options: EvalOptions,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rerun the evaluation described by an earlier report and check that
    /// the numbers agree.
    #[arg(long, conflicts_with_all = ["ground_truth", "predictions"])]
    pub from_report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Direction {
    Encode,
    Decode,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// direct | inverse | log | sigmoid | relu_like
    #[arg(long)]
    pub transfer: String,
    #[arg(long, allow_hyphen_values = true)]
    pub value: f64,
    #[arg(long, value_enum, default_value = "encode")]
    pub direction: Direction,
    #[arg(long, default_value_t = 0.0)]
    pub dmin: f64,
    #[arg(long, default_value_t = 700.0)]
    pub dmax: f64,
    /// Slope of the relu_like decoding.
    #[arg(long, default_value_t = 100.0)]
    pub a: f64,
    /// Offset of the relu_like decoding.
    #[arg(long, default_value_t = 350.0)]
    pub b: f64,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Write the reports as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML generator config; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output prefix: writes `<prefix>.gt.jsonl` and `<prefix>.pred.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub ground_truth: PathBuf,
    pub predictions: PathBuf,
    #[command(flatten)]
    pub options: EvalOptions,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input, or a failed check (exit 1).
    Input(anyhow::Error),
    /// Invalid configuration or configuration/input mismatch (exit 2).
    Config(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(e) | CliError::Config(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::VectorLength { .. } => CliError::Config(e.into()),
            other => CliError::Input(other.into()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) | Error::Invalid(_) => CliError::Config(e.into()),
            other => CliError::Input(other.into()),
        }
    }
}

fn input_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Input(e.into())
}

fn config_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Config(anyhow::anyhow!("{msg}"))
}

pub type CliResult<T> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Encode(args) => cmd_encode(args),
        Command::LossCheck(args) => cmd_loss_check(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

/// Decode mode as given on the command line; `None` means pick from the data.
fn parse_decode(s: &str) -> CliResult<Option<DepthDecode>> {
    if s == "auto" {
        return Ok(None);
    }
    Ok(Some(s.parse()?))
}

fn resolve_decode(requested: Option<DepthDecode>, detections: &[Detection]) -> DepthDecode {
    requested.unwrap_or_else(|| {
        let all_continuous = !detections.is_empty()
            && detections
                .iter()
                .all(|d| matches!(d.depth, DepthPrediction::Continuous(_)));
        if all_continuous {
            DepthDecode::Continuous
        } else {
            DepthDecode::BinCenter
        }
    })
}

/// Bins, grid and beta from the flags; the decode mode is resolved later.
fn base_config(opts: &EvalOptions) -> CliResult<(EvalConfig, Option<DepthDecode>)> {
    let bins = DepthBinSpec::new(opts.dmin, opts.dmax, opts.k)?;
    let iou = opts.iou_set.clone().unwrap_or_else(default_iou_thresholds);
    let grid = ThresholdGrid::with_conf_step(opts.grid_conf_step, iou)?;
    if !(opts.beta.is_finite() && opts.beta > 0.0) {
        return Err(config_err(format!("--beta {} must be > 0", opts.beta)));
    }
    let decode = parse_decode(&opts.decode)?;
    let cfg = EvalConfig {
        bins,
        grid,
        decode: DepthDecode::BinCenter,
        beta: opts.beta,
    };
    Ok((cfg, decode))
}

fn thread_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| config_err(format!("cannot build thread pool: {e}")))
}

fn load_inputs(
    gt: &Path,
    pred: &Path,
    bins: &DepthBinSpec,
) -> CliResult<(Vec<GroundTruthObject>, Vec<Detection>)> {
    let ground_truth = io::read_ground_truth(gt)?;
    let detections = io::read_predictions(pred, bins)?;
    log::info!(
        "read {} ground-truth objects and {} detections",
        ground_truth.len(),
        detections.len()
    );
    Ok((ground_truth, detections))
}

fn absolute(path: &Path) -> PathBuf {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Human-readable summary of a report.
pub fn render_table(doc: &ReportDocument) -> String {
    let r = &doc.results;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "objects     {} ground truth, {} detections",
        r.num_ground_truth, r.num_detections
    );
    let _ = writeln!(
        s,
        "decode      {} (K = {}, beta = {})",
        doc.config.decode, doc.config.bins.k, doc.config.beta
    );
    let _ = writeln!(
        s,
        "fitness     {:.4}  at t_c = {:.2}, t_iou = {:.2}",
        r.fitness, r.best_t_c, r.best_t_iou
    );
    let _ = writeln!(s, "mAP         {:.4}", r.map_2d);
    match r.male_m {
        Some(m) => {
            let _ = writeln!(s, "MALE        {m:.2} m");
        }
        None => {
            let _ = writeln!(s, "MALE        n/a (no depth-annotated true positive)");
        }
    }
    if !r.per_class_ap.is_empty() {
        let width = r
            .per_class_ap
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(5);
        let _ = writeln!(s, "\n{:<width$}  AP", "class");
        for (class, ap) in &r.per_class_ap {
            let _ = writeln!(s, "{class:<width$}  {ap:.4}");
        }
    }
    s
}

fn evaluate_in_pool(
    pool: &rayon::ThreadPool,
    dets: &[Detection],
    gts: &[GroundTruthObject],
    cfg: &EvalConfig,
) -> CliResult<EvalReport> {
    Ok(pool.install(|| evaluate(dets, gts, cfg))?)
}

pub fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let pool = thread_pool(args.options.threads)?;

    let doc = if let Some(report_path) = &args.from_report {
        let previous = io::read_report(report_path)?;
        let inputs = previous.inputs.clone().ok_or_else(|| {
            config_err(format!(
                "{}: report names no input files",
                report_path.display()
            ))
        })?;
        let cfg = previous.config.clone();
        let (gts, dets) = load_inputs(&inputs.ground_truth, &inputs.predictions, &cfg.bins)?;
        let results = evaluate_in_pool(&pool, &dets, &gts, &cfg)?;
        if results != previous.results {
            return Err(input_err(anyhow::anyhow!(
                "rerun of {} does not reproduce its results",
                report_path.display()
            )));
        }
        ReportDocument::new(cfg, Some(inputs), results)
    } else {
        let gt_path = args.ground_truth.as_deref().expect("required by clap");
        let pred_path = args.predictions.as_deref().expect("required by clap");
        let (mut cfg, decode) = base_config(&args.options)?;
        let (gts, dets) = load_inputs(gt_path, pred_path, &cfg.bins)?;
        cfg.decode = resolve_decode(decode, &dets);
        let results = evaluate_in_pool(&pool, &dets, &gts, &cfg)?;
        let inputs = ReportInputs {
            ground_truth: absolute(gt_path),
            predictions: absolute(pred_path),
        };
        ReportDocument::new(cfg, Some(inputs), results)
    };

    if let Some(out) = &args.out {
        io::write_report(&doc, out)?;
    }
    print!("{}", render_table(&doc));
    Ok(())
}

pub fn cmd_encode(args: EncodeArgs) -> CliResult<()> {
    let kind: TransferKind = args.transfer.parse()?;
    let spec = TransferSpec::new(kind, args.dmin, args.dmax, args.a, args.b)?;
    let v = match args.direction {
        Direction::Encode => spec.encode(args.value)?,
        Direction::Decode => spec.decode(args.value)?,
    };
    println!("{v}");
    Ok(())
}

pub fn cmd_loss_check(args: LossCheckArgs) -> CliResult<()> {
    if args.trials == 0 {
        return Err(config_err("--trials must be at least 1"));
    }
    let cfg = GradCheckConfig::default();
    let reports = run_suite(args.seed, args.trials, cfg);
    let width = reports
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(4)
        .max(4);
    println!(
        "{:<width$}  {:>7}  {:>7}  {:>12}  status",
        "name", "checked", "skipped", "max rel err"
    );
    for r in &reports {
        println!(
            "{:<width$}  {:>7}  {:>7}  {:>12.3e}  {}",
            r.name,
            r.entries_checked,
            r.entries_skipped,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&reports).map_err(input_err)?;
        std::fs::write(out, json + "\n")
            .with_context(|| out.display().to_string())
            .map_err(input_err)?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(input_err(anyhow::anyhow!(
            "{failed} gradient check(s) exceeded relative tolerance {:e}",
            cfg.rel_tolerance
        )));
    }
    Ok(())
}

pub fn load_synth_config(path: Option<&Path>) -> CliResult<SynthConfig> {
    let Some(path) = path else {
        return Ok(SynthConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input_err)?;
    toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

/// `<prefix>.gt.jsonl` and `<prefix>.pred.jsonl`.
pub fn synth_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".gt.jsonl"), with(".pred.jsonl"))
}

pub fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let mut cfg = load_synth_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let data = generate(&cfg)?;
    let (gt_path, pred_path) = synth_paths(&args.out);
    io::write_ground_truth(&gt_path, &data.ground_truth)?;
    io::write_predictions(&pred_path, &data.detections)?;
    println!(
        "wrote {} ground-truth objects to {} and {} detections to {}",
        data.ground_truth.len(),
        gt_path.display(),
        data.detections.len(),
        pred_path.display()
    );
    Ok(())
}

pub fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let pool = thread_pool(args.options.threads)?;
    let (cfg, _) = base_config(&args.options)?;
    let (gts, dets) = load_inputs(&args.ground_truth, &args.predictions, &cfg.bins)?;
    objdepth_core::metrics::validate_inputs(
        &dets,
        &gts,
        &EvalConfig {
            decode: resolve_decode(None, &dets),
            ..cfg.clone()
        },
    )?;
    let result = pool.install(|| fitness(&dets, &gts, &cfg.grid, &cfg.bins));

    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(
            std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))
                .map_err(input_err)?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["t_c", "t_iou", "mf1_od", "mf1_de", "f1_comb"])
        .map_err(input_err)?;
    for (ci, t_c) in cfg.grid.conf_thresholds().iter().enumerate() {
        for (ii, t_iou) in cfg.grid.iou_thresholds().iter().enumerate() {
            w.write_record([
                t_c.to_string(),
                t_iou.to_string(),
                result.mf1_od_grid[ci][ii].to_string(),
                result.mf1_de_grid[ci][ii].to_string(),
                result.f1_comb_grid[ci][ii].to_string(),
            ])
            .map_err(input_err)?;
        }
    }
    w.flush().map_err(input_err)?;
    Ok(())
}
