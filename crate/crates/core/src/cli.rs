//! Command-line front end: `train`, `evaluate`, `select` and `report`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{EdgeFrequencyTable, FrequencyMode, FrequencyPatrol, PriorityQueueDispatch, RandomPatrol};
use crate::env::{DispatchPolicy, PatrolPolicy};
use crate::error::{Error, Result};
use crate::eval::{comparison_table, evaluate, write_evaluation, RunSummary};
use crate::scenario::{load_scenario, Scenario};
use crate::trainer::{
    resume, select_model, train, CheckpointIndex, Criterion, DeployedPolicies, Streams, TrainMode, TrainOptions, TrainSchedule,
};

#[derive(Debug, Parser)]
#[command(name = "patrol", version, about = "Train and evaluate joint patrol and dispatch policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    /// Random patrol, priority-queue dispatch.
    Heuristic,
    /// Learned patrol, priority-queue dispatch.
    Patrol,
    /// Random patrol, learned dispatch.
    Dispatch,
    /// Learned patrol and dispatch.
    Joint,
    /// Trajectory-frequency patrol, priority-queue dispatch.
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Response,
    Equity,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run (or resume) a training run into --out.
    Train(TrainArgs),
    /// Evaluate a policy pair over seeded episodes.
    Evaluate(EvaluateArgs),
    /// Pick a checkpoint of a finished run.
    Select(SelectArgs),
    /// Comparison table over evaluation outputs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// joint, patrol (patrol only) or dispatch (dispatch only).
    #[arg(long, value_enum, default_value = "joint")]
    pub policy: PolicyKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the validation episode count.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Override the validation episode length.
    #[arg(long)]
    pub length: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue the run already in --out.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many inner loops (resume later).
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value = "heuristic")]
    pub policy: PolicyKind,
    /// A checkpoint directory, or a run directory (its selected checkpoint is used).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Trajectory file for --policy real.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Follow the most traversed edge instead of sampling (--policy real).
    #[arg(long)]
    pub argmax: bool,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 5000)]
    pub length: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Label for the summary (defaults to the policy name).
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Run directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "response")]
    pub criterion: CriterionArg,
    /// Overflow limit as a multiple of the heuristic's; defaults to the run's schedule.
    #[arg(long)]
    pub overflow_factor: Option<f64>,
    /// Ignore the overflow limit.
    #[arg(long)]
    pub unconstrained: bool,
    /// Where to write selection.json (defaults to the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation directories or summary.json files, in table order.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_scenario() -> Scenario {
    crate::scenario::presets::high_volume()
}

fn pick_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join("policy.json").exists() {
        return Ok(path.to_path_buf());
    }
    if path.join("index.json").exists() {
        let index = CheckpointIndex::load(path)?;
        let schedule = TrainSchedule::load(path.join("schedule.toml"))?;
        let sel = select_model(&index, Criterion::MinResponse, Some(schedule.validation.overflow_factor))?;
        return Ok(path.join(sel.dir));
    }
    Err(Error::Config(format!("{} is neither a checkpoint nor a run directory", path.display())))
}

pub fn run_train(args: &TrainArgs) -> Result<String> {
    let options = TrainOptions { stop_after: args.stop_after };
    let index = if args.resume {
        resume(&args.out, options)?
    } else {
        let scenario = match &args.scenario {
            Some(p) => load_scenario(p)?,
            None => default_scenario(),
        };
        let mut schedule = match &args.schedule {
            Some(p) => TrainSchedule::load(p)?,
            None => TrainSchedule::paper_sim(),
        };
        if let Some(e) = args.episodes {
            schedule.validation.episodes = e;
        }
        if let Some(l) = args.length {
            schedule.validation.length = l;
        }
        let mode = match args.policy {
            PolicyKind::Joint => TrainMode::Joint,
            PolicyKind::Patrol => TrainMode::PatrolOnly,
            PolicyKind::Dispatch => TrainMode::DispatchOnly,
            other => return Err(Error::Config(format!("cannot train policy kind {other:?}"))),
        };
        train(mode, &scenario, &schedule, args.seed, &args.out, options)?
    };
    let last = index.records.last().expect("initial checkpoint");
    Ok(format!(
        "{} of {} inner loops done; checkpoints and metrics in {}",
        last.iteration,
        index.planned_loops,
        args.out.display()
    ))
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<String> {
    let scenario = load_scenario(&args.scenario)?;
    let deployed = match (&args.checkpoint, args.policy) {
        (_, PolicyKind::Heuristic | PolicyKind::Real) => None,
        (Some(p), _) => Some(DeployedPolicies::load(pick_checkpoint(p)?, &scenario)?),
        (None, kind) => return Err(Error::Config(format!("--policy {kind:?} needs --checkpoint"))),
    };
    let frequency = match args.policy {
        PolicyKind::Real => {
            let path = args.trajectories.as_ref().ok_or_else(|| Error::Config("--policy real needs --trajectories".into()))?;
            let mode = if args.argmax { FrequencyMode::Argmax } else { FrequencyMode::Sample };
            Some(FrequencyPatrol { table: EdgeFrequencyTable::load(&scenario.graph, path)?, mode })
        }
        _ => None,
    };
    let missing = |side: &str| Error::Config(format!("checkpoint has no trained {side} network"));
    let (patrol, dispatch): (&dyn PatrolPolicy, &dyn DispatchPolicy) = match args.policy {
        PolicyKind::Heuristic => (&RandomPatrol, &PriorityQueueDispatch),
        PolicyKind::Real => (frequency.as_ref().expect("built above"), &PriorityQueueDispatch),
        PolicyKind::Patrol => {
            let d = deployed.as_ref().expect("loaded above");
            (d.q.as_ref().ok_or_else(|| missing("patrol"))?, &PriorityQueueDispatch)
        }
        PolicyKind::Dispatch => {
            let d = deployed.as_ref().expect("loaded above");
            (&RandomPatrol, d.value.as_ref().ok_or_else(|| missing("dispatch"))?)
        }
        PolicyKind::Joint => {
            let d = deployed.as_ref().expect("loaded above");
            (d.patrol(), d.dispatch())
        }
    };
    let label = args.label.clone().unwrap_or_else(|| format!("{:?}", args.policy).to_lowercase());
    let streams = Streams::new(args.seed);
    let result = evaluate(&label, &scenario, patrol, dispatch, args.episodes, args.length, &streams.evaluation)?;
    write_evaluation(&result, &args.out)?;
    Ok(comparison_table(&[result.summary]))
}

pub fn run_select(args: &SelectArgs) -> Result<String> {
    let index = CheckpointIndex::load(&args.checkpoint)?;
    let factor = if args.unconstrained {
        None
    } else {
        match args.overflow_factor {
            Some(f) => Some(f),
            None => Some(TrainSchedule::load(args.checkpoint.join("schedule.toml"))?.validation.overflow_factor),
        }
    };
    let criterion = match args.criterion {
        CriterionArg::Response => Criterion::MinResponse,
        CriterionArg::Equity => Criterion::Equity,
    };
    let sel = select_model(&index, criterion, factor)?;
    let text = serde_json::to_string_pretty(&sel).expect("selection serialises");
    let out = args.out.clone().unwrap_or_else(|| args.checkpoint.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join("selection.json");
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok(text)
}

pub fn run_report(args: &ReportArgs) -> Result<String> {
    let mut summaries = Vec::new();
    let mut responses: Vec<PathBuf> = Vec::new();
    for p in &args.inputs {
        let file = if p.is_dir() { p.join("summary.json") } else { p.clone() };
        summaries.push(RunSummary::load(&file)?);
        let csv = file.with_file_name("responses.csv");
        if csv.exists() {
            responses.push(csv);
        }
    }
    let table = comparison_table(&summaries);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("table.md");
        std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
        let path = out.join("responses.csv");
        let mut merged = String::new();
        for (k, f) in responses.iter().enumerate() {
            let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            let body = if k == 0 { &text[..] } else { text.split_once('\n').map_or("", |(_, rest)| rest) };
            merged.push_str(body);
        }
        std::fs::write(&path, merged).map_err(|e| Error::io(&path, e))?;
    }
    Ok(table)
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Select(a) => run_select(a),
        Command::Report(a) => run_report(a),
    }
}
