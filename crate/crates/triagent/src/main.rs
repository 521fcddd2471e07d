//! Command-line entry point: world/suite generation, loop execution,
//! benchmark evaluation, staged rollouts, toy training and the temporal
//! probe. Every command is seeded and reproduces byte-identical outputs.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use triagent::agent_io::Role;
use triagent::config::{build_backend, load_tasks, load_world, HarnessConfig};
use triagent::evalkit::{
    aggregate, eval_trajectory, ingest_benchmark, task_screens, temporal_probe,
    trajectory_screens, Judge, SchemaDescriptor,
};
use triagent::model::{LoopMode, RewardConfig, TaskRecord, Trajectory, TrajectoryStatus};
use triagent::orchestrator::{Backends, EpisodeSpec};
use triagent::rollout::{emit_batches, RolloutError, Stage, TrainParams};
use triagent::sim::{build_world, generate_task_suite, SuiteParams, WorldParams};

#[derive(Parser)]
#[command(name = "triagent", version, about = "Coordinator-executor-state-tracker GUI agent harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic world and task suite
    GenWorld(GenWorldArgs),
    /// Run the collaborative loop over a task suite
    Run(RunArgs),
    /// Score predicted trajectories against ground truth
    Eval(EvalArgs),
    /// Collect staged candidate groups and emit them as JSON Lines
    Rollout(RolloutArgs),
    /// Train a toy policy with staged rollouts
    TrainToy(TrainToyArgs),
    /// Temporal-order probe over screen sequences
    ProbeTemporal(ProbeArgs),
}

#[derive(Args)]
struct GenWorldArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    screens: usize,
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 20)]
    tasks: usize,
    #[arg(long, default_value_t = 8)]
    min_len: usize,
    #[arg(long, default_value_t = 0.5)]
    confuser_rate: f64,
    /// Output directory for world.json and tasks.jsonl
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Full,
    NoCoordinator,
    NoStateTracker,
}

impl From<ModeArg> for LoopMode {
    fn from(m: ModeArg) -> LoopMode {
        match m {
            ModeArg::Full => LoopMode::Full,
            ModeArg::NoCoordinator => LoopMode::NoCoordinator,
            ModeArg::NoStateTracker => LoopMode::NoStateTracker,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides paths.world from the config
    #[arg(long)]
    world: Option<PathBuf>,
    /// Overrides paths.tasks from the config
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted trajectories (JSON Lines)
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth tasks (JSON Lines)
    #[arg(long)]
    tasks: PathBuf,
    /// Schema descriptor JSON for external benchmark files
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Report JSON output path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    stage: u8,
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, default_value_t = 8)]
    arms: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainToyArgs {
    #[arg(long)]
    stage: u8,
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, default_value_t = 8)]
    arms: usize,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long)]
    seed: u64,
    /// Learning-curve CSV: one `iteration,mean_reward` row per iteration
    #[arg(long)]
    out_curve: PathBuf,
    /// Trained policy JSON
    #[arg(long)]
    out_policy: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum JudgeArg {
    Perfect,
    Window,
}

#[derive(Args)]
struct ProbeArgs {
    /// Ground-truth tasks whose screen paths are probed
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Predicted trajectories whose screen paths are probed
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = JudgeArg::Window)]
    judge: JudgeArg,
    #[arg(long, default_value_t = 4)]
    window: usize,
    #[arg(long, default_value_t = 12)]
    max_interval: usize,
    #[arg(long, default_value_t = 400)]
    pairs: usize,
    #[arg(long)]
    seed: u64,
    /// Probe curve CSV output path
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Process failure with its exit code: 2 config, 3 data, 4 backend.
enum CliError {
    Config(String),
    Data(String),
    Backend(String),
}

impl CliError {
    fn report(&self) -> (u8, &str) {
        match self {
            CliError::Config(m) => (2, m),
            CliError::Data(m) => (3, m),
            CliError::Backend(m) => (4, m),
        }
    }
}

impl From<RolloutError> for CliError {
    fn from(e: RolloutError) -> CliError {
        match e {
            RolloutError::Backend(m) => CliError::Backend(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> Result<String, CliError> {
    let mut out = String::new();
    for item in items {
        out.push_str(
            &serde_json::to_string(item).map_err(|e| CliError::Data(e.to_string()))?,
        );
        out.push('\n');
    }
    Ok(out)
}

fn parse_stage(stage: u8) -> Result<Stage, CliError> {
    match stage {
        1 => Ok(Stage::One),
        2 => Ok(Stage::Two),
        other => Err(CliError::Config(format!("stage must be 1 or 2, got {other}"))),
    }
}

fn cmd_gen_world(args: &GenWorldArgs) -> Result<(), CliError> {
    let world = build_world(&WorldParams {
        seed: args.seed,
        screens: args.screens,
        branching: args.branching,
        decor_elements: 1,
    })
    .map_err(|e| CliError::Data(e.to_string()))?;
    let suite = generate_task_suite(
        &world,
        &SuiteParams {
            n_tasks: args.tasks,
            min_len: args.min_len,
            confuser_rate: args.confuser_rate,
            seed: args.seed,
        },
    )
    .map_err(|e| CliError::Data(e.to_string()))?;

    let world_json =
        serde_json::to_string_pretty(&world).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&args.out.join("world.json"), &world_json)?;
    write_file(&args.out.join("tasks.jsonl"), &jsonl(&suite)?)?;
    let confusers = suite.iter().filter(|t| t.metadata.get("confuser").map(String::as_str) == Some("true")).count();
    println!(
        "world: {} screens, {} transitions; tasks: {} ({confusers} confusers)",
        world.screens.len(),
        world.transitions.len(),
        suite.len()
    );
    Ok(())
}

fn resolve_input(
    flag: &Option<PathBuf>,
    config_path: &Option<PathBuf>,
    what: &str,
) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| config_path.clone())
        .ok_or_else(|| CliError::Config(format!("no {what} path given (flag or config)")))
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let config = HarnessConfig::load(&args.config).map_err(CliError::Config)?;
    let world_path = resolve_input(&args.world, &config.paths.world, "world")?;
    let tasks_path = resolve_input(&args.tasks, &config.paths.tasks, "tasks")?;
    let world = load_world(&world_path).map_err(CliError::Data)?;
    let suite = load_tasks(&tasks_path).map_err(CliError::Data)?;
    let seed = args.seed.unwrap_or(config.seed);
    let mut loop_cfg = config.loop_cfg.clone();
    if let Some(mode) = args.mode {
        loop_cfg.mode = mode.into();
    }

    let coordinator = build_backend(Role::Coordinator, &config.backends.coordinator, &suite)
        .map_err(CliError::Config)?;
    let executor = build_backend(Role::Executor, &config.backends.executor, &suite)
        .map_err(CliError::Config)?;
    let tracker = build_backend(Role::StateTracker, &config.backends.state_tracker, &suite)
        .map_err(CliError::Config)?;
    let backends = Backends {
        coordinator: Some(&coordinator),
        executor: &executor,
        state_tracker: Some(&tracker),
    };

    // indexed work queue: any thread interleaving yields the same output
    let results: Vec<Mutex<Option<Trajectory>>> =
        suite.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.parallelism.min(suite.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= suite.len() {
                    break;
                }
                let spec = EpisodeSpec::from_task(&world, &suite[i], seed.wrapping_add(i as u64));
                let traj = triagent::orchestrator::run_episode(
                    &spec,
                    &backends,
                    &loop_cfg,
                    &config.reward,
                );
                *results[i].lock().unwrap() = Some(traj);
            });
        }
    });
    let trajectories: Vec<Trajectory> =
        results.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect();

    write_file(&args.out, &jsonl(&trajectories)?)?;
    let completed = trajectories
        .iter()
        .filter(|t| t.status == TrajectoryStatus::CompletedByAgent)
        .count();
    let errors = trajectories.iter().filter(|t| t.status == TrajectoryStatus::EnvError).count();
    println!(
        "episodes: {} completed, {} truncated, {errors} backend errors",
        completed,
        trajectories.len() - completed - errors
    );
    if errors > 0 {
        return Err(CliError::Backend(format!("{errors} episodes hit backend errors")));
    }
    Ok(())
}

fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn load_task_file(path: &Path, schema: &Option<PathBuf>) -> Result<Vec<TaskRecord>, CliError> {
    match schema {
        None => load_tasks(path).map_err(CliError::Data),
        Some(schema_path) => {
            let text = std::fs::read_to_string(schema_path).map_err(|e| {
                CliError::Config(format!("cannot read schema {}: {e}", schema_path.display()))
            })?;
            let descriptor: SchemaDescriptor = serde_json::from_str(&text).map_err(|e| {
                CliError::Config(format!("invalid schema {}: {e}", schema_path.display()))
            })?;
            let file = std::fs::File::open(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            let outcome = ingest_benchmark(std::io::BufReader::new(file), &descriptor)
                .map_err(|e| CliError::Data(e.to_string()))?;
            if outcome.skipped > 0 {
                eprintln!("skipped {} invalid records", outcome.skipped);
            }
            Ok(outcome.tasks)
        }
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let tasks = load_task_file(&args.tasks, &args.schema)?;
    let by_id: BTreeMap<&str, &TaskRecord> =
        tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let trajectories = load_trajectories(&args.pred)?;
    let cfg = RewardConfig::default();

    let mut verdicts = BTreeMap::new();
    for traj in &trajectories {
        let task = by_id.get(traj.task_id.as_str()).ok_or_else(|| {
            CliError::Data(format!("no ground-truth task for trajectory '{}'", traj.task_id))
        })?;
        verdicts.insert(traj.task_id.clone(), eval_trajectory(traj, task, &cfg));
    }
    let report = aggregate(&verdicts).map_err(|e| CliError::Data(e.to_string()))?;
    print!("{}", report.render_table());
    if let Some(out) = &args.out {
        let json =
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
        write_file(out, &json)?;
    }
    Ok(())
}

fn cmd_rollout(args: &RolloutArgs) -> Result<(), CliError> {
    let stage = parse_stage(args.stage)?;
    let world = load_world(&args.world).map_err(CliError::Data)?;
    let suite = load_tasks(&args.tasks).map_err(CliError::Data)?;
    let rollout = triagent::rollout::StagedRollout::new(
        stage,
        &world,
        &suite,
        args.arms,
        RewardConfig::default(),
    )?;
    let mut rng = rand::SeedableRng::seed_from_u64(args.seed);
    let batches: Vec<_> = rollout
        .collect(&triagent::model::GrpoConfig::default(), &mut rng)?
        .into_iter()
        .map(|(batch, _)| batch)
        .collect();
    let mut buf = Vec::new();
    let n = emit_batches(&mut buf, &batches)?;
    write_file(&args.out, &String::from_utf8(buf).expect("batches are utf-8"))?;
    println!("wrote {n} batches");
    Ok(())
}

fn cmd_train_toy(args: &TrainToyArgs) -> Result<(), CliError> {
    let stage = parse_stage(args.stage)?;
    let world = load_world(&args.world).map_err(CliError::Data)?;
    let suite = load_tasks(&args.tasks).map_err(CliError::Data)?;
    let mut rollout = triagent::rollout::StagedRollout::new(
        stage,
        &world,
        &suite,
        args.arms,
        RewardConfig::default(),
    )?;
    let params =
        TrainParams { iterations: args.iters, learning_rate: args.lr, seed: args.seed };
    let start = rollout.uniform_expected_reward();
    let curve = rollout.train(&triagent::model::GrpoConfig::default(), &params)?;
    let mut csv = String::new();
    for (i, value) in curve.iter().enumerate().skip(1) {
        csv.push_str(&format!("{i},{value}\n"));
    }
    write_file(&args.out_curve, &csv)?;
    if let Some(out) = &args.out_policy {
        let json = serde_json::to_string_pretty(&rollout.policy)
            .map_err(|e| CliError::Data(e.to_string()))?;
        write_file(out, &json)?;
    }
    println!(
        "stage {:?}: uniform expectation {start:.4}, final {:.4} after {} iterations",
        stage,
        curve.last().unwrap(),
        args.iters
    );
    Ok(())
}

fn cmd_probe(args: &ProbeArgs) -> Result<(), CliError> {
    let sequences: Vec<Vec<String>> = match (&args.tasks, &args.pred) {
        (Some(tasks), None) => {
            load_tasks(tasks).map_err(CliError::Data)?.iter().map(task_screens).collect()
        }
        (None, Some(pred)) => {
            load_trajectories(pred)?.iter().map(trajectory_screens).collect()
        }
        _ => {
            return Err(CliError::Config(
                "exactly one of --tasks and --pred is required".to_string(),
            ))
        }
    };
    let judge = match args.judge {
        JudgeArg::Perfect => Judge::PerfectMemory,
        JudgeArg::Window => Judge::Window { window: args.window },
    };
    let result = temporal_probe(&sequences, judge, args.max_interval, args.pairs, args.seed)
        .map_err(|e| CliError::Data(e.to_string()))?;
    print!("{}", result.render_csv());
    if let Some(out) = &args.out {
        write_file(out, &result.render_csv())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenWorld(args) => cmd_gen_world(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Rollout(args) => cmd_rollout(args),
        Command::TrainToy(args) => cmd_train_toy(args),
        Command::ProbeTemporal(args) => cmd_probe(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, message) = e.report();
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
