//! `lockon`: simulate driving logs, run the three localization variants over
//! them, evaluate the estimates and sweep parameters.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use lockon_core::eskf::{CovarianceForm, SpeedEstimator};
use lockon_core::eval::{self, Bin, SegmentReport, DEFAULT_BINS};
use lockon_core::framelog::{FrameLog, LogError};
use lockon_core::par::Execution;
use lockon_core::pipeline::{self, Method, Params, PipelineError};
use lockon_core::sim::{presets, Scenario};

/// Failure split by who has to fix it.
enum Failure {
    /// Bad input, flags or paths: exit code 2.
    User(anyhow::Error),
    /// Anything else: exit code 1.
    Internal(anyhow::Error),
}

type Result<T> = std::result::Result<T, Failure>;

fn user(e: impl Into<anyhow::Error>) -> Failure {
    Failure::User(e.into())
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Filter { .. } => Failure::Internal(e.into()),
            _ => Failure::User(e.into()),
        }
    }
}

#[derive(Parser)]
#[command(name = "lockon", version, about = "Pose filtering with dynamic-vehicle lock-on gating")]
struct Cli {
    /// Directory for outputs that are not given an explicit path.
    #[arg(long, global = true, env = "LOCKON_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Run segments and sweep points on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a frame log from a preset or a scenario file.
    Simulate(SimulateArgs),
    /// Run one method over a frame log and write its estimates.
    Run(RunArgs),
    /// Score estimate files against a log's ground truth.
    Eval(EvalArgs),
    /// Re-run a method for each value of one parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset scenario name (highway, campus-curves, mixed, lane-change, stop-and-go).
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<String>,
    /// Scenario description in JSON.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output log path (default: <out-dir>/<scenario name>.jsonl).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pnp,
    Ekf,
    Ours,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pnp => Method::Pnp,
            MethodArg::Ekf => Method::Ekf,
            MethodArg::Ours => Method::Ours,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CovarianceArg {
    Simple,
    Joseph,
}

#[derive(Clone, Copy, ValueEnum)]
enum WarmupSpeedArg {
    Mean,
    Median,
    Consensus,
}

/// Overrides for the defaults in [`Params`].
#[derive(Args, Default)]
struct ParamArgs {
    #[arg(long)]
    v_m: Option<f64>,
    #[arg(long)]
    v_p: Option<f64>,
    #[arg(long)]
    sigma_x: Option<f64>,
    #[arg(long)]
    sigma_y: Option<f64>,
    #[arg(long)]
    sigma_z: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau_divisor: Option<f64>,
    #[arg(long)]
    mask_fraction: Option<f64>,
    #[arg(long)]
    d_assoc: Option<f64>,
    #[arg(long)]
    min_matches: Option<f64>,
    /// Measured poses used to bootstrap the velocity.
    #[arg(long)]
    warmup: Option<f64>,
    /// Evaluation segment length, m.
    #[arg(long)]
    segment_length: Option<f64>,
    #[arg(long, value_enum)]
    covariance: Option<CovarianceArg>,
    #[arg(long, value_enum)]
    warmup_speed: Option<WarmupSpeedArg>,
    /// Never treat a frame as locked on.
    #[arg(long)]
    no_constraints: bool,
}

impl ParamArgs {
    fn params(&self) -> Result<Params> {
        let mut p = Params::default();
        let values = [
            ("v_m", self.v_m),
            ("v_p", self.v_p),
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("sigma_z", self.sigma_z),
            ("alpha", self.alpha),
            ("tau_divisor", self.tau_divisor),
            ("mask_fraction", self.mask_fraction),
            ("d_assoc", self.d_assoc),
            ("min_matches", self.min_matches),
            ("warmup", self.warmup),
            ("segment_length", self.segment_length),
        ];
        for (name, v) in values {
            if let Some(v) = v {
                p.set(name, v)?;
            }
        }
        if let Some(c) = self.covariance {
            p.filter.covariance_form = match c {
                CovarianceArg::Simple => CovarianceForm::Simple,
                CovarianceArg::Joseph => CovarianceForm::Joseph,
            };
        }
        if let Some(w) = self.warmup_speed {
            p.filter.warmup_speed = match w {
                WarmupSpeedArg::Mean => SpeedEstimator::Mean,
                WarmupSpeedArg::Median => SpeedEstimator::Median,
                WarmupSpeedArg::Consensus => SpeedEstimator::Consensus,
            };
        }
        p.detect_constraints = !self.no_constraints;
        Ok(p)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Frame log to process.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[command(flatten)]
    params: ParamArgs,
    /// Estimates output path (default: <out-dir>/estimates_<method>.csv).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    log: PathBuf,
    /// Estimate files, one per method.
    #[arg(long, required = true, num_args = 1..)]
    estimates: Vec<PathBuf>,
    /// Recall bins as `metres:degrees` pairs.
    #[arg(long, value_delimiter = ',', value_parser = parse_bin)]
    bins: Vec<Bin>,
}

#[derive(Args)]
struct SweepArgs {
    /// Frame logs whose segments are pooled at every sweep point.
    #[arg(long, required = true, num_args = 1..)]
    log: Vec<PathBuf>,
    /// Parameter to vary.
    #[arg(long)]
    param: String,
    #[arg(long, required = true, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long, value_enum, default_value = "ours")]
    method: MethodArg,
    #[arg(long, value_delimiter = ',', value_parser = parse_bin)]
    bins: Vec<Bin>,
    #[command(flatten)]
    params: ParamArgs,
}

fn parse_bin(s: &str) -> std::result::Result<Bin, String> {
    let (t, r) = s.split_once(':').ok_or_else(|| format!("expected metres:degrees, got {s:?}"))?;
    let t: f64 = t.trim().parse().map_err(|_| format!("bad translation threshold {t:?}"))?;
    let r: f64 = r.trim().parse().map_err(|_| format!("bad rotation threshold {r:?}"))?;
    if !(t >= 0.0 && r >= 0.0) {
        return Err(format!("thresholds must be non-negative, got {s:?}"));
    }
    Ok(Bin::new(t, r))
}

fn bins_or_default(bins: &[Bin]) -> Vec<Bin> {
    if bins.is_empty() {
        DEFAULT_BINS.to_vec()
    } else {
        bins.to_vec()
    }
}

fn load_log(path: &Path) -> Result<FrameLog> {
    FrameLog::load(path).map_err(|e| match e {
        LogError::Io(_) | LogError::Parse { .. } | LogError::Empty | LogError::Schema(_) | LogError::Invalid { .. } => {
            user(anyhow!(e).context(format!("cannot read frame log {}", path.display())))
        }
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create directory {}", dir.display()))
            .map_err(user)?;
    }
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(user)
}

fn load_scenario(args: &SimulateArgs) -> Result<Scenario> {
    let mut sc = match (&args.preset, &args.scenario) {
        (Some(name), _) => presets::by_name(name, presets::DEFAULT_SEED).ok_or_else(|| {
            user(anyhow!("unknown preset {name:?}; available: {}", presets::NAMES.join(", ")))
        })?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read scenario {}", path.display()))
                .map_err(user)?;
            serde_json::from_str(&text)
                .with_context(|| format!("malformed scenario {}", path.display()))
                .map_err(user)?
        }
        (None, None) => return Err(user(anyhow!("give --preset or --scenario"))),
    };
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    sc.validate().map_err(|e| user(anyhow!("invalid scenario: {e}")))?;
    Ok(sc)
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let sc = load_scenario(args)?;
    let log = FrameLog::simulate(&sc);
    let path = args.out.clone().unwrap_or_else(|| cli.out_dir.join(format!("{}.jsonl", sc.name)));
    let mut buf = Vec::new();
    log.write_to(&mut buf).map_err(|e| Failure::Internal(e.into()))?;
    write_file(&path, &buf)?;
    let n = log.frames.len();
    let truth = log.frames.iter().filter(|f| f.truth_constrained == Some(true)).count();
    println!(
        "wrote {} ({n} frames, {:.1} s, seed {}, lead vehicle held still on {:.1}% of frames)",
        path.display(),
        log.frames.last().map_or(0.0, |f| f.t),
        sc.seed,
        100.0 * truth as f64 / n.max(1) as f64
    );
    Ok(())
}

const SEGMENTS_HEADER: &str = "method,segment,first_frame,last_frame,frames,end_err,max_err,active_frac";

fn segments_csv(reports: &[SegmentReport]) -> String {
    let mut s = String::from(SEGMENTS_HEADER);
    s.push('\n');
    for r in reports {
        let active = r.constraint_active.iter().filter(|a| **a).count() as f64 / r.errors.len() as f64;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6},{:.6},{:.6}",
            r.method,
            r.segment_id,
            r.frames.start,
            r.frames.end - 1,
            r.errors.len(),
            r.end_err,
            r.max_err,
            active
        );
    }
    s
}

fn execution(cli: &Cli) -> Execution {
    if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<()> {
    let params = args.params.params()?;
    let log = load_log(&args.log)?;
    let method: Method = args.method.into();
    let out = pipeline::run_method(&log, method, &params, execution(cli))?;
    if out.reports.is_empty() {
        return Err(user(anyhow!(
            "no segment of {} m could be evaluated in {}",
            params.segment_length_m,
            args.log.display()
        )));
    }
    let est_path = args
        .out
        .clone()
        .unwrap_or_else(|| cli.out_dir.join(format!("estimates_{method}.csv")));
    write_file(&est_path, pipeline::estimates_csv(method, &out.estimates).as_bytes())?;
    let seg_path = est_path.with_file_name(format!("segments_{method}.csv"));
    write_file(&seg_path, segments_csv(&out.reports).as_bytes())?;
    let summary = eval::aggregate(&out.reports, &DEFAULT_BINS).map_err(|e| Failure::Internal(e.into()))?;
    print!("{}", summary.text_table());
    println!(
        "wrote {} and {} ({} segments, {} skipped)",
        est_path.display(),
        seg_path.display(),
        out.reports.len(),
        out.skipped.len()
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let log = load_log(&args.log)?;
    let bins = bins_or_default(&args.bins);
    let mut reports = Vec::new();
    for path in &args.estimates {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read estimates {}", path.display()))
            .map_err(user)?;
        let (method, rows) = pipeline::parse_estimates(&text)
            .with_context(|| format!("in {}", path.display()))
            .map_err(user)?;
        info!("{}: {} estimates for {method}", path.display(), rows.len());
        reports.extend(pipeline::segment_reports(&log, method.name(), &rows)?);
    }
    let summary = eval::aggregate(&reports, &bins).map_err(user)?;
    write_file(&cli.out_dir.join("results.csv"), summary.results_csv().as_bytes())?;
    write_file(&cli.out_dir.join("split.csv"), summary.split_csv().as_bytes())?;
    write_file(&cli.out_dir.join("results.txt"), summary.text_table().as_bytes())?;
    print!("{}", summary.text_table());
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    if !pipeline::TUNABLES.contains(&args.param.as_str()) {
        return Err(user(anyhow!(
            "unknown parameter {:?}; tunable: {}",
            args.param,
            pipeline::TUNABLES.join(", ")
        )));
    }
    let base = args.params.params()?;
    let logs = args.log.iter().map(|p| load_log(p)).collect::<Result<Vec<_>>>()?;
    let bins = bins_or_default(&args.bins);
    let rows = pipeline::sweep(&logs, args.method.into(), &base, &args.param, &args.values, &bins, execution(cli))?;
    let table = pipeline::sweep_csv(&args.param, &bins, &rows);
    let path = cli.out_dir.join(format!("sweep_{}.csv", args.param));
    write_file(&path, table.as_bytes())?;
    print!("{table}");
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::Run(a) => cmd_run(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Sweep(a) => cmd_sweep(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(1)
        }
    }
}
