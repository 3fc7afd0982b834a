//! Command-line surface binding datasets, configuration, rollout,
//! training, and reporting into runnable experiments.
//!
//! Exit codes: 0 success, 1 validation or parse failure, 2 engine failure
//! rate above the configured ceiling.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recrit::config::{
    load_config, load_dataset, EngineKind, ExperimentConfig, Provenance,
};
use recrit::judge::judge_pair;
use recrit::metrics::{compute_metrics, render_report, transition_matrix, ReportFormat};
use recrit::rollout::http::HttpEngine;
use recrit::rollout::sim::SimulatedEngine;
use recrit::rollout::{run_dynamic_rollout, run_synchronous_rollout};
use recrit::trainer::{run_training, sweep_boundary, RewardMode, BOUNDARY_SWEEP_GRID};
use recrit::types::{QAItem, Trajectory};

#[derive(Parser)]
#[command(name = "recrit", version, about = "Transition-aware critic-interaction experiments")]
struct Cli {
    /// Experiment configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compares synchronous and dynamic rollout scheduling on the
    /// simulated engine and emits per-seed makespans as CSV.
    Simulate(SimulateArgs),
    /// Trains the toy policy and emits the training history as JSONL.
    Train(TrainArgs),
    /// Trains once per boundary-weight grid value and emits the final
    /// Correction/Sycophancy operating points as CSV.
    SweepBoundary(SweepArgs),
    /// Runs the two-stage critic protocol over a dataset and emits a
    /// benchmark report plus a trajectory dump.
    Evaluate(EvaluateArgs),
    /// Re-judges a stored trajectory dump against a dataset.
    Judge(JudgeArgs),
    /// Prints the fully resolved configuration.
    Config,
}

#[derive(Args)]
struct SimulateArgs {
    /// Samples per batch.
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Number of seeds to sweep.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Completion ratios for the dynamic scheduler.
    #[arg(long, value_delimiter = ',', default_values_t = [0.60, 0.75, 1.0])]
    rhos: Vec<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training steps; the configured value when omitted.
    #[arg(long)]
    steps: Option<usize>,
    /// Reward mode; the configured value when omitted.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TransitionAware,
    FinalAnswerOnly,
}

impl From<ModeArg> for RewardMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TransitionAware => RewardMode::TransitionAware,
            ModeArg::FinalAnswerOnly => RewardMode::FinalAnswerOnly,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset file; the configured path when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Report format.
    #[arg(long, value_enum, default_value_t = FormatArg::Plain)]
    format: FormatArg,
    /// Method label used in the report.
    #[arg(long, default_value = "recrit")]
    method: String,
}

#[derive(Args)]
struct JudgeArgs {
    /// Trajectory dump (JSONL) produced by `evaluate`.
    #[arg(long)]
    trajectories: PathBuf,
    /// Dataset file; the configured path when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Plain)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
    Plain,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Markdown => ReportFormat::Markdown,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Plain => ReportFormat::PlainTable,
        }
    }
}

/// Errors mapped to process exit codes.
enum CliError {
    /// Exit code 1: bad input, bad config, bad data.
    Validation(String),
    /// Exit code 2: the engine failed more often than the ceiling allows.
    EngineFailure { rate: f64, ceiling: f64 },
}

impl CliError {
    fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::EngineFailure { rate, ceiling }) => {
            eprintln!(
                "error: engine failure rate {:.1}% exceeds the configured ceiling {:.1}%",
                100.0 * rate,
                100.0 * ceiling
            );
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => load_config(path).map_err(CliError::validation)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.display().to_string();
    }

    match cli.command {
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(())
        }
        Command::Simulate(args) => cmd_simulate(&config, &args),
        Command::Train(args) => cmd_train(&config, &args),
        Command::SweepBoundary(args) => cmd_sweep(&config, &args),
        Command::Evaluate(args) => cmd_evaluate(&config, &args),
        Command::Judge(args) => cmd_judge(&config, &args),
    }
}

/// Writes the resolved config and dataset digest before any results, so
/// every output is reproducible from its artifacts.
fn write_provenance(
    config: &ExperimentConfig,
    dataset: Option<(&Path, usize)>,
) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&config.output_dir);
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))?;
    fs::write(dir.join("config.resolved.toml"), config.to_toml())
        .map_err(CliError::validation)?;
    let mut provenance = Provenance::for_config(config);
    if let Some((path, items)) = dataset {
        provenance = provenance.with_dataset(path, items).map_err(CliError::validation)?;
    }
    let json = serde_json::to_string_pretty(&provenance).map_err(CliError::validation)?;
    fs::write(dir.join("provenance.json"), json).map_err(CliError::validation)?;
    Ok(dir)
}

fn synthetic_batch(n: usize) -> Vec<(QAItem, usize)> {
    recrit::trainer::synthetic_items(n, "sim")
        .into_iter()
        .map(|item| (item, 0))
        .collect()
}

fn cmd_simulate(config: &ExperimentConfig, args: &SimulateArgs) -> Result<(), CliError> {
    if args.batch_size == 0 || args.seeds == 0 {
        return Err(CliError::Validation("batch_size and seeds must be positive".into()));
    }
    for &rho in &args.rhos {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(CliError::Validation(format!("rho {rho} outside (0,1]")));
        }
    }
    let dir = write_provenance(config, None)?;
    let templates = config.template_catalog();
    let batch = synthetic_batch(args.batch_size);
    let items: Vec<QAItem> = batch.iter().map(|(it, _)| it.clone()).collect();

    let mut csv = String::from("scheduler,rho,seed,makespan,tail_completed,dropped\n");
    for i in 0..args.seeds {
        let seed = config.seed.wrapping_add(i);
        let make_engine = |s: u64| {
            let mut latency = config.simulator.latency.clone();
            latency.seed = s;
            let mut answers = config.simulator.answers.clone();
            answers.seed = s;
            SimulatedEngine::new(latency, answers, &items, config.simulator.concurrency)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, stats) = run_synchronous_rollout(
            &batch,
            &mut make_engine(seed),
            &templates,
            config.generation,
            &mut rng,
        )
        .map_err(CliError::validation)?;
        csv.push_str(&format!(
            "synchronous,1.00,{seed},{:.4},{},{}\n",
            stats.makespan, stats.tail_completed, stats.dropped
        ));
        for &rho in &args.rhos {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, stats) = run_dynamic_rollout(
                &batch,
                &mut make_engine(seed),
                &templates,
                rho,
                config.generation,
                &mut rng,
            )
            .map_err(CliError::validation)?;
            csv.push_str(&format!(
                "dynamic,{rho:.2},{seed},{:.4},{},{}\n",
                stats.makespan, stats.tail_completed, stats.dropped
            ));
        }
    }
    let out = dir.join("simulate.csv");
    fs::write(&out, &csv).map_err(CliError::validation)?;
    print!("{csv}");
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_train(config: &ExperimentConfig, args: &TrainArgs) -> Result<(), CliError> {
    let dir = write_provenance(config, None)?;
    let mut setup = config.training_setup();
    if let Some(mode) = args.mode {
        setup.update.reward_mode = mode.into();
    }
    let steps = args.steps.unwrap_or(config.training.steps);
    let history = run_training(&setup, steps, config.seed).map_err(CliError::validation)?;

    let out = dir.join("history.jsonl");
    let mut file = fs::File::create(&out).map_err(CliError::validation)?;
    for row in &history.rows {
        let line = serde_json::to_string(row).map_err(CliError::validation)?;
        writeln!(file, "{line}").map_err(CliError::validation)?;
    }
    let last = history.final_row();
    println!(
        "step {}: initial {:.2} critic {:.2} gain {:+.2} (+{:.2}-{:.2}) \
         p_keep_likely_right {:.3} p_keep_likely_wrong {:.3}",
        last.step,
        last.initial_pct,
        last.critic_pct,
        last.gain_pct,
        last.correction_pct,
        last.sycophancy_pct,
        last.p_keep_likely_right,
        last.p_keep_likely_wrong
    );
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep(config: &ExperimentConfig, args: &SweepArgs) -> Result<(), CliError> {
    let dir = write_provenance(config, None)?;
    let setup = config.training_setup();
    let steps = args.steps.unwrap_or(config.training.steps);
    let points = sweep_boundary(&setup, steps, config.seed).map_err(CliError::validation)?;

    let mut csv = String::from("w_boun,correction,sycophancy,gain\n");
    for p in &points {
        csv.push_str(&format!(
            "{:.2},{:.2},{:.2},{:+.2}\n",
            p.w_boun, p.correction_pct, p.sycophancy_pct, p.gain_pct
        ));
    }
    debug_assert_eq!(points.len(), BOUNDARY_SWEEP_GRID.len());
    let out = dir.join("sweep_boundary.csv");
    fs::write(&out, &csv).map_err(CliError::validation)?;
    print!("{csv}");
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn dataset_path(config: &ExperimentConfig, arg: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    arg.clone()
        .or_else(|| config.dataset.as_ref().map(PathBuf::from))
        .ok_or_else(|| {
            CliError::Validation(
                "no dataset: pass --dataset or set `dataset` in the config".into(),
            )
        })
}

fn benchmark_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn cmd_evaluate(config: &ExperimentConfig, args: &EvaluateArgs) -> Result<(), CliError> {
    let path = dataset_path(config, &args.dataset)?;
    let items = load_dataset(&path).map_err(CliError::validation)?;
    let dir = write_provenance(config, Some((&path, items.len())))?;
    let templates = config.template_catalog();
    let batch: Vec<(QAItem, usize)> = items.iter().cloned().map(|it| (it, 0)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (trajectories, stats) = match config.engine {
        EngineKind::Simulated => {
            let mut engine = SimulatedEngine::new(
                config.simulator.latency.clone(),
                config.simulator.answers.clone(),
                &items,
                config.simulator.concurrency,
            );
            run_dynamic_rollout(
                &batch,
                &mut engine,
                &templates,
                config.rho,
                config.generation,
                &mut rng,
            )
            .map_err(CliError::validation)?
        }
        EngineKind::Http => {
            let mut engine = HttpEngine::from_env(config.http.clone())
                .map_err(CliError::validation)?;
            run_dynamic_rollout(
                &batch,
                &mut engine,
                &templates,
                config.rho,
                config.generation,
                &mut rng,
            )
            .map_err(CliError::validation)?
        }
    };

    // Dump before reporting so failed runs still leave replayable artifacts.
    let dump = dir.join("trajectories.jsonl");
    let mut file = fs::File::create(&dump).map_err(CliError::validation)?;
    for t in &trajectories {
        let line = serde_json::to_string(t).map_err(CliError::validation)?;
        writeln!(file, "{line}").map_err(CliError::validation)?;
    }

    let completions = stats.initial_latencies.len() + stats.critic_latencies.len();
    let failure_rate = if completions == 0 {
        1.0
    } else {
        stats.engine_errors as f64 / completions as f64
    };
    if failure_rate > config.max_engine_failure_rate {
        return Err(CliError::EngineFailure {
            rate: failure_rate,
            ceiling: config.max_engine_failure_rate,
        });
    }

    let report = report_for(&trajectories, &args.method, &benchmark_label(&path), args.format)?;
    fs::write(dir.join("report.txt"), &report).map_err(CliError::validation)?;
    print!("{report}");
    eprintln!(
        "{} trajectories ({} tail-completed, {} dropped), makespan {:.2}; wrote {}",
        trajectories.len(),
        stats.tail_completed,
        stats.dropped,
        stats.makespan,
        dump.display()
    );
    Ok(())
}

fn report_for(
    trajectories: &[Trajectory],
    method: &str,
    benchmark: &str,
    format: FormatArg,
) -> Result<String, CliError> {
    let matrix = transition_matrix(trajectories).map_err(CliError::validation)?;
    let row = compute_metrics(&matrix).map_err(CliError::validation)?;
    Ok(render_report(
        &[(method.to_string(), benchmark.to_string(), row)],
        format.into(),
    ))
}

fn cmd_judge(config: &ExperimentConfig, args: &JudgeArgs) -> Result<(), CliError> {
    let path = dataset_path(config, &args.dataset)?;
    let items = load_dataset(&path).map_err(CliError::validation)?;
    let by_id: std::collections::HashMap<&str, &QAItem> =
        items.iter().map(|it| (it.id.as_str(), it)).collect();

    let text = fs::read_to_string(&args.trajectories).map_err(|e| {
        CliError::Validation(format!("cannot read {}: {e}", args.trajectories.display()))
    })?;
    let mut rejudged = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let stored: Trajectory = serde_json::from_str(line).map_err(|e| {
            CliError::Validation(format!("trajectory line {}: {e}", idx + 1))
        })?;
        let item = by_id.get(stored.item_ref.as_str()).ok_or_else(|| {
            CliError::Validation(format!(
                "trajectory line {}: unknown item id {}",
                idx + 1,
                stored.item_ref
            ))
        })?;
        let (pair, f0, f1) = judge_pair(item, &stored.y0, &stored.y1);
        let t = Trajectory::new(
            stored.item_ref.clone(),
            stored.group_index,
            stored.y0,
            stored.feedback,
            stored.y1,
            pair,
            stored.tail_completed,
            f0,
            f1,
        )
        .map_err(|e| CliError::Validation(format!("trajectory line {}: {e}", idx + 1)))?;
        rejudged.push(t);
    }
    if rejudged.is_empty() {
        return Err(CliError::Validation("trajectory dump contains no records".into()));
    }
    let report = report_for(&rejudged, "rejudged", &benchmark_label(&path), args.format)?;
    print!("{report}");
    Ok(())
}
