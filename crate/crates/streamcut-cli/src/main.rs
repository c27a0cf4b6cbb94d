//! Command-line entry point wiring the library into reproducible pipelines.
//!
//! Exit codes: 0 on success, 1 on validation errors (bad flags, malformed
//! or inconsistent data), 2 on I/O errors. Every run prints its resolved
//! configuration; all file outputs are byte-identical across runs for
//! identical inputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use streamcut::detect::{detect, detect_incremental, RcParams};
use streamcut::eval::map_over_windows;
use streamcut::io;
use streamcut::model::{DetectionResult, GroundTruth, Method, StatTable};
use streamcut::seeding::derive_seed;
use streamcut::sim::{benchmark_plan, simulate_stream, SimConfig};
use streamcut::{gradcheck, mine};

#[derive(Parser)]
#[command(name = "streamcut", version, about = "Changepoint detection pipelines for visual streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark: one stat-table JSON per stream plus
    /// truth.csv.
    Simulate(SimulateArgs),
    /// Score stat tables and write detections.csv.
    Detect(DetectArgs),
    /// Evaluate detections against ground truth.
    Eval(EvalArgs),
    /// Mine labeled/unlabeled training pairs from a stream manifest.
    MinePairs(MinePairsArgs),
    /// Run the gradient and estimator verification suites.
    Gradcheck(GradcheckArgs),
    /// Compare the reference and incremental detector implementations.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    streams: usize,
    #[arg(long, default_value_t = 10)]
    frames: u32,
    /// Candidate changepoints, comma-separated.
    #[arg(long, default_value = "1,2,3,4,5,6,7,8", value_delimiter = ',')]
    candidates: Vec<u32>,
    #[arg(long = "no-change", default_value_t = 400)]
    no_change: usize,
    #[arg(long = "rep-dim", default_value_t = 16)]
    rep_dim: usize,
    #[arg(long = "mu-change", default_value_t = 1.0)]
    mu_change: f64,
    #[arg(long = "mu-nochange", default_value_t = 0.0)]
    mu_nochange: f64,
    #[arg(long = "sigma-p", default_value_t = 0.0)]
    sigma_p: f64,
    #[arg(long = "sigma-h", default_value_t = 0.0)]
    sigma_h: f64,
}

#[derive(Args)]
struct DetectArgs {
    /// A stat-table file or a directory of them.
    #[arg(long)]
    scores: PathBuf,
    /// step | gc | rc | rc0
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 1.25)]
    lambda: f64,
    /// Score with the raw (unnormalized) consistency sum.
    #[arg(long = "raw-consistency", default_value_t = false)]
    raw_consistency: bool,
    /// Use the incremental engine instead of the reference one.
    #[arg(long, default_value_t = false)]
    incremental: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Correctness windows, comma-separated.
    #[arg(long, default_value = "0,1,2,3,4", value_delimiter = ',')]
    windows: Vec<u32>,
    #[arg(long)]
    out: PathBuf,
    /// PR-point CSV path; defaults to `<out>` with a `.pr.csv` suffix.
    #[arg(long = "pr-out")]
    pr_out: Option<PathBuf>,
}

#[derive(Args)]
struct MinePairsArgs {
    /// Stream manifest JSON.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mine the time-reversed stream instead.
    #[arg(long, default_value_t = false)]
    reversed: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1234)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    instances: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 512)]
    frames: u32,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[arg(long = "rep-dim", default_value_t = 16)]
    rep_dim: usize,
}

enum CliError {
    Validation(String),
    Io(String),
}

impl From<io::IoError> for CliError {
    fn from(err: io::IoError) -> Self {
        match err {
            io::IoError::Io { .. } => CliError::Io(err.to_string()),
            _ => CliError::Validation(err.to_string()),
        }
    }
}

fn validation(err: impl std::fmt::Display) -> CliError {
    CliError::Validation(err.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if err.use_stderr() => {
            eprintln!("{err}");
            return ExitCode::from(1);
        }
        Err(err) => {
            // --help / --version
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => run_simulate(&args),
        Command::Detect(args) => run_detect(&args),
        Command::Eval(args) => run_eval(&args),
        Command::MinePairs(args) => run_mine_pairs(&args),
        Command::Gradcheck(args) => run_gradcheck(&args),
        Command::Bench(args) => run_bench(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let config = SimConfig::<f64> {
        num_streams_per_changepoint: args.streams,
        num_frames: args.frames,
        candidate_changepoints: args.candidates.clone(),
        no_change_streams: args.no_change,
        rep_dim: args.rep_dim,
        mu_change: args.mu_change,
        mu_nochange: args.mu_nochange,
        sigma_p: args.sigma_p,
        sigma_h: args.sigma_h,
        seed: args.seed,
    };
    println!(
        "config: subcommand=simulate seed={} out={} streams={} frames={} candidates={:?} \
         no_change={} rep_dim={} mu_change={} mu_nochange={} sigma_p={} sigma_h={}",
        args.seed,
        args.out.display(),
        args.streams,
        args.frames,
        args.candidates,
        args.no_change,
        args.rep_dim,
        args.mu_change,
        args.mu_nochange,
        args.sigma_p,
        args.sigma_h,
    );
    config.validate().map_err(validation)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;

    let plan = benchmark_plan(&config);
    let results: Vec<Result<GroundTruth, CliError>> = plan
        .par_iter()
        .map(|(index, id, kappa_star)| {
            let (table, truth) =
                simulate_stream(&config, *kappa_star, derive_seed(config.seed, *index as u64), id)
                    .map_err(validation)?;
            io::save_stat_table(&table, &args.out.join(format!("{id}.json")))?;
            Ok(truth)
        })
        .collect();
    let truths = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    io::write_ground_truth(&truths, &args.out.join("truth.csv"))?;
    println!("simulate: wrote {} streams to {}", truths.len(), args.out.display());
    Ok(())
}

fn table_paths(scores: &Path) -> Result<Vec<PathBuf>, CliError> {
    if scores.is_file() {
        return Ok(vec![scores.to_path_buf()]);
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scores)
        .map_err(|e| CliError::Io(format!("{}: {e}", scores.display())))?
        .filter_map(Result::ok)
        .map(|entry| entry.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Validation(format!(
            "no stat-table .json files under {}",
            scores.display()
        )));
    }
    Ok(paths)
}

fn run_detect(args: &DetectArgs) -> Result<(), CliError> {
    let method: Method = match args.method.as_str() {
        "step" | "gc" | "rc" | "rc0" => args.method.parse().expect("known method"),
        other => {
            return Err(CliError::Validation(format!(
                "unknown method '{other}' (expected step|gc|rc|rc0)"
            )))
        }
    };
    println!(
        "config: subcommand=detect scores={} method={} lambda={} raw_consistency={} incremental={} out={}",
        args.scores.display(),
        method,
        args.lambda,
        args.raw_consistency,
        args.incremental,
        args.out.display(),
    );
    if !args.lambda.is_finite() || args.lambda < 0.0 {
        return Err(CliError::Validation(format!("lambda must be >= 0, got {}", args.lambda)));
    }
    let params = RcParams { lambda_rc: args.lambda, raw_consistency: args.raw_consistency };
    let paths = table_paths(&args.scores)?;
    let detections: Vec<DetectionResult<f64>> = paths
        .par_iter()
        .map(|path| {
            let table: StatTable<f64> = io::load_stat_table(path)?;
            let stream_id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| CliError::Validation(format!("bad file name {}", path.display())))?;
            let run = if args.incremental { detect_incremental } else { detect };
            run(stream_id, &table, method, &params)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    io::write_detections(&detections, &args.out)?;
    println!("detect: wrote {} detections to {}", detections.len(), args.out.display());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    let pr_out = args
        .pr_out
        .clone()
        .unwrap_or_else(|| args.out.with_extension("pr.csv"));
    println!(
        "config: subcommand=eval detections={} truth={} windows={:?} out={} pr_out={}",
        args.detections.display(),
        args.truth.display(),
        args.windows,
        args.out.display(),
        pr_out.display(),
    );
    let detections = io::load_detections(&args.detections)?;
    let truths = io::load_ground_truth(&args.truth)?;
    let report = map_over_windows(&detections, &truths, &args.windows).map_err(validation)?;
    io::write_eval_report(&report, &args.out)?;
    io::write_pr_points(&report, &pr_out)?;
    for (window, ap) in &report.ap_per_window {
        println!("eval: ap[{window}] = {ap}");
    }
    println!("eval: map = {}", report.map_value);
    Ok(())
}

fn run_mine_pairs(args: &MinePairsArgs) -> Result<(), CliError> {
    println!(
        "config: subcommand=mine-pairs manifest={} out={} reversed={}",
        args.manifest.display(),
        args.out.display(),
        args.reversed,
    );
    let mut manifest = io::load_manifest(&args.manifest)?;
    if args.reversed {
        manifest = mine::reversed(&manifest);
    }
    let mined = mine::mine(&manifest).map_err(validation)?;
    io::write_mined_pairs(&manifest.stream_id, &mined, &args.out)?;
    println!(
        "mine-pairs: {} labeled, {} unlabeled pairs to {}",
        mined.labeled.len(),
        mined.unlabeled.len(),
        args.out.display(),
    );
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    println!("config: subcommand=gradcheck seed={} instances={}", args.seed, args.instances);
    let mut report = gradcheck::run_gradient_suite(args.seed, args.instances);
    report.rows.extend(gradcheck::run_reinforce_suite(args.seed).rows);
    println!("{:<30} {:>9} {:>13} {:>10} {:>6}", "check", "instances", "max_rel_err", "threshold", "state");
    let mut all_passed = true;
    for row in &report.rows {
        let state = if row.passed() { "PASS" } else { "FAIL" };
        all_passed &= row.passed();
        println!(
            "{:<30} {:>9} {:>13.3e} {:>10.0e} {:>6}",
            row.name, row.instances, row.max_err, row.threshold, state
        );
    }
    if all_passed {
        Ok(())
    } else {
        Err(CliError::Validation("gradient verification failed".into()))
    }
}

fn run_bench(args: &BenchArgs) -> Result<(), CliError> {
    println!(
        "config: subcommand=bench frames={} seed={} rep_dim={}",
        args.frames, args.seed, args.rep_dim
    );
    if args.frames < 2 {
        return Err(CliError::Validation("frames must be at least 2".into()));
    }
    let kappa = args.frames / 2;
    let config = SimConfig::<f64> {
        num_frames: args.frames,
        candidate_changepoints: vec![kappa],
        rep_dim: args.rep_dim,
        sigma_p: 0.5,
        sigma_h: 0.3,
        seed: args.seed,
        ..SimConfig::default()
    };
    let (table, _) =
        simulate_stream(&config, Some(kappa), derive_seed(args.seed, 0), "bench").map_err(validation)?;

    let params = RcParams::default();
    let t0 = Instant::now();
    let reference = detect("bench", &table, Method::Rc, &params).map_err(validation)?;
    let reference_time = t0.elapsed();
    let t1 = Instant::now();
    let incremental = detect_incremental("bench", &table, Method::Rc, &params).map_err(validation)?;
    let incremental_time = t1.elapsed();

    let max_dev = reference
        .profile
        .iter()
        .zip(&incremental.profile)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let speedup = reference_time.as_secs_f64() / incremental_time.as_secs_f64().max(1e-12);
    println!("bench: reference    {reference_time:?}");
    println!("bench: incremental  {incremental_time:?}");
    println!("bench: speedup      {speedup:.1}x");
    println!("bench: max profile deviation {max_dev:.3e}");
    if max_dev >= 1e-9 {
        return Err(CliError::Validation(format!(
            "incremental profile deviates from the reference by {max_dev:.3e} (>= 1e-9)"
        )));
    }
    Ok(())
}
