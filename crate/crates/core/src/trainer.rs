//! Alternating optimisation of the patrol and dispatch networks, run
//! directories, resumption and model selection.
//!
//! A run directory holds copies of the scenario and schedule, a manifest,
//! `index.json` (the source of truth), `metrics.csv` and `losses.csv`
//! rendered from it, and one directory per checkpoint under `checkpoints/`.
//! Only the newest checkpoint keeps the optimiser state needed to resume.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{PriorityQueueDispatch, RandomPatrol};
use crate::dispatch::{dispatch_inner_loop, DispatchSettings, EpochLoss, ValueDispatch, ValueNets};
use crate::env::{encoding_len, DispatchPolicy, PatrolPolicy};
use crate::error::{Error, Result};
use crate::eval::{evaluate, RunSummary};
use crate::nn::{load_checkpoint, load_mlp, save_checkpoint, save_mlp, Checkpoint, Mlp};
use crate::patrol::{collect_patrol_transitions, QLearner, QPatrol, N_SLOTS};
use crate::rng::SimRng;
use crate::scenario::{load_scenario, save_scenario, Scenario};

pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatrolSettings {
    pub n_patrol: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Exploration rate while collecting transitions.
    pub epsilon: f64,
    /// Target network refresh interval, in mini-batch updates.
    pub clone_interval: u64,
    pub hidden: Vec<usize>,
    /// Length of the episodes transitions are collected from.
    pub collection_length: u64,
    pub train_fraction: f64,
}

impl Default for PatrolSettings {
    fn default() -> Self {
        Self {
            n_patrol: 1_250_000,
            epochs: 1,
            batch_size: 50,
            lr: 1e-5,
            epsilon: 1.0,
            clone_interval: 1000,
            hidden: vec![512, 512],
            collection_length: 1000,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSettings {
    pub episodes: usize,
    pub length: u64,
    /// Selection keeps checkpoints whose mean overflows stay below this
    /// multiple of the heuristic's.
    pub overflow_factor: f64,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self { episodes: 20, length: 5000, overflow_factor: 1.25 }
    }
}

/// Every count, size and rate of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub n_outer: usize,
    pub n_inner_phi: usize,
    pub n_inner_theta: usize,
    pub n_warm: usize,
    /// Loop counts of the single-objective runs.
    pub patrol_only_loops: usize,
    pub dispatch_only_loops: usize,
    pub value_hidden: Vec<usize>,
    pub patrol: PatrolSettings,
    pub dispatch: DispatchSettings,
    pub validation: ValidationSettings,
}

impl TrainSchedule {
    /// Counts and sizes of the two-beat experiments.
    pub fn paper_sim() -> Self {
        Self {
            n_outer: 4,
            n_inner_phi: 5,
            n_inner_theta: 5,
            n_warm: 20,
            patrol_only_loops: 20,
            dispatch_only_loops: 50,
            value_hidden: vec![128],
            patrol: PatrolSettings::default(),
            dispatch: DispatchSettings::default(),
            validation: ValidationSettings::default(),
        }
    }

    /// Same loop structure with the transition counts cut down for a single machine.
    pub fn desk() -> Self {
        let mut s = Self::paper_sim();
        s.patrol.n_patrol = 250_000;
        s.dispatch.n_dispatch = 1000;
        s.validation = ValidationSettings { episodes: 10, length: 2000, overflow_factor: 1.25 };
        s
    }

    pub fn atlanta() -> Self {
        let mut s = Self::paper_sim();
        s.n_outer = 8;
        s.n_inner_phi = 10;
        s.n_inner_theta = 5;
        s.n_warm = 0;
        s.patrol_only_loops = 40;
        s.dispatch_only_loops = 80;
        s.dispatch.n_dispatch = 10_000;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("invalid schedule: {m}")));
        let p = &self.patrol;
        let d = &self.dispatch;
        if p.collection_length == 0 || self.validation.length == 0 {
            return bad("episode lengths must be positive");
        }
        if p.batch_size == 0 || d.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if !(0.0..=1.0).contains(&p.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(p.lr > 0.0 && d.lr > 0.0) {
            return bad("learning rates must be positive");
        }
        for f in [p.train_fraction, d.train_fraction] {
            if !(f > 0.0 && f <= 1.0) {
                return bad("train fractions must lie in (0, 1]");
            }
        }
        if self.value_hidden.iter().chain(&p.hidden).any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        if self.validation.overflow_factor.is_nan() || self.validation.overflow_factor <= 0.0 {
            return bad("overflow factor must be positive");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse { path: origin.into(), message: e.to_string() })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schedule serialises")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Joint,
    PatrolOnly,
    DispatchOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTag {
    Initial,
    Dispatch,
    Patrol,
}

impl PhaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseTag::Initial => "initial",
            PhaseTag::Dispatch => "dispatch",
            PhaseTag::Patrol => "patrol",
        }
    }
}

/// Inner loops in execution order.
pub fn plan(mode: TrainMode, schedule: &TrainSchedule) -> Vec<PhaseTag> {
    use PhaseTag::{Dispatch, Patrol};
    match mode {
        TrainMode::Joint => {
            let mut out = vec![Dispatch; schedule.n_warm];
            for _ in 0..schedule.n_outer {
                out.extend(std::iter::repeat_n(Dispatch, schedule.n_inner_phi));
                out.extend(std::iter::repeat_n(Patrol, schedule.n_inner_theta));
            }
            out
        }
        TrainMode::PatrolOnly => vec![Patrol; schedule.patrol_only_loops],
        TrainMode::DispatchOnly => vec![Dispatch; schedule.dispatch_only_loops],
    }
}

/// Trainable parameters plus which of them are deployed yet. Before its
/// first inner loop each side runs its heuristic.
#[derive(Debug, Clone, PartialEq)]
pub struct Learners {
    pub q: QLearner,
    pub q_active: bool,
    pub nets: ValueNets,
    pub value_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct ActiveFlags {
    q_active: bool,
    value_active: bool,
}

impl Learners {
    pub fn init(scenario: &Scenario, schedule: &TrainSchedule, rng: &SimRng) -> Result<Self> {
        let d = encoding_len(scenario);
        let dims = [&[d][..], &schedule.patrol.hidden, &[N_SLOTS]].concat();
        let q = Mlp::new(&dims, &mut rng.derive(1).generator())?;
        let nets = ValueNets::new(scenario, &schedule.value_hidden, &mut rng.derive(2).generator())?;
        Ok(Self {
            q: QLearner::new(q, schedule.patrol.lr, schedule.patrol.clone_interval),
            q_active: false,
            nets,
            value_active: false,
        })
    }

    pub fn patrol_policy(&self, scenario: &Scenario) -> Result<Box<dyn PatrolPolicy>> {
        Ok(if self.q_active { Box::new(QPatrol::new(self.q.q.clone(), scenario, 0.0)?) } else { Box::new(RandomPatrol) })
    }

    pub fn dispatch_policy(&self) -> Box<dyn DispatchPolicy> {
        if self.value_active {
            Box::new(ValueDispatch { nets: self.nets.clone() })
        } else {
            Box::new(PriorityQueueDispatch)
        }
    }

    /// Deployable parameters, plus the optimiser state when `full`.
    fn save(&self, dir: &Path, full: bool) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_mlp(&self.q.q, dir.join("q.bin"))?;
        self.nets.save(dir.join("value"))?;
        let flags = ActiveFlags { q_active: self.q_active, value_active: self.value_active };
        write_json(&dir.join("policy.json"), &flags)?;
        if full {
            let learner = dir.join("learner");
            std::fs::create_dir_all(&learner).map_err(|e| Error::io(&learner, e))?;
            save_checkpoint(&Checkpoint { net: self.q.q.clone(), opt: Some(self.q.opt.clone()) }, learner.join("q_train.ckpt"))?;
            save_mlp(&self.q.target, learner.join("q_target.bin"))?;
        }
        Ok(())
    }

    fn load(dir: &Path, clone_interval: u64) -> Result<Self> {
        let flags: ActiveFlags = read_json(&dir.join("policy.json"))?;
        let learner = dir.join("learner");
        let ck = load_checkpoint(learner.join("q_train.ckpt"))?;
        let opt = ck.opt.ok_or_else(|| Error::Format("training checkpoint lacks optimiser state".into()))?;
        Ok(Self {
            q: QLearner { q: ck.net, target: load_mlp(learner.join("q_target.bin"))?, opt, clone_interval },
            q_active: flags.q_active,
            nets: ValueNets::load(dir.join("value"))?,
            value_active: flags.value_active,
        })
    }
}

/// Policies stored in a checkpoint directory, in deployable form.
pub struct DeployedPolicies {
    pub q: Option<QPatrol>,
    pub value: Option<ValueDispatch>,
}

impl DeployedPolicies {
    pub fn load(dir: impl AsRef<Path>, scenario: &Scenario) -> Result<Self> {
        let dir = dir.as_ref();
        let flags: ActiveFlags = read_json(&dir.join("policy.json"))?;
        let q = if flags.q_active { Some(QPatrol::new(load_mlp(dir.join("q.bin"))?, scenario, 0.0)?) } else { None };
        let value = if flags.value_active {
            let nets = ValueNets::load(dir.join("value"))?;
            nets.check(scenario)?;
            Some(ValueDispatch { nets })
        } else {
            None
        };
        Ok(Self { q, value })
    }

    /// Patrol side, the random heuristic when none was trained.
    pub fn patrol(&self) -> &dyn PatrolPolicy {
        match &self.q {
            Some(q) => q,
            None => &RandomPatrol,
        }
    }

    pub fn dispatch(&self) -> &dyn DispatchPolicy {
        match &self.value {
            Some(v) => v,
            None => &PriorityQueueDispatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub network: String,
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

fn loss_rows(network: &str, curve: &[EpochLoss]) -> Vec<LossRow> {
    curve
        .iter()
        .map(|e| LossRow { network: network.into(), epoch: e.epoch, train: e.train, validation: e.validation })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// Inner loops completed; 0 is the untrained starting point.
    pub iteration: usize,
    pub phase: PhaseTag,
    /// Relative to the run directory.
    pub dir: PathBuf,
    pub metrics: RunSummary,
    pub losses: Vec<LossRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format_version: u32,
    pub mode: TrainMode,
    pub planned_loops: usize,
    pub records: Vec<CheckpointRecord>,
}

impl CheckpointIndex {
    /// The starting point deploys random patrol and priority-queue dispatch.
    pub fn heuristic(&self) -> Option<&RunSummary> {
        self.records.first().map(|r| &r.metrics)
    }

    pub fn is_complete(&self) -> bool {
        self.records.last().is_some_and(|r| r.iteration == self.planned_loops)
    }

    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self> {
        let idx: Self = read_json(&run_dir.as_ref().join("index.json"))?;
        if idx.format_version != RUN_FORMAT_VERSION {
            return Err(Error::Format(format!("run format version {} is not supported", idx.format_version)));
        }
        Ok(idx)
    }

    /// Records must have strictly increasing iterations and existing files.
    pub fn check(&self, run_dir: &Path) -> Result<()> {
        for w in self.records.windows(2) {
            if w[1].iteration <= w[0].iteration {
                return Err(Error::Contract("checkpoint iterations are not increasing".into()));
            }
        }
        for r in &self.records {
            for f in ["q.bin", "policy.json", "value/v.bin", "value/delta_patrol.bin", "value/delta_incident.bin"] {
                let p = run_dir.join(&r.dir).join(f);
                if !p.exists() {
                    return Err(Error::Contract(format!("missing checkpoint file {}", p.display())));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub checkpoint_format_version: u32,
    pub summary_format_version: u32,
    pub crate_version: String,
    pub mode: TrainMode,
    pub seed: u64,
    /// Child keys of the master seed.
    pub train_stream: u64,
    pub validation_stream: u64,
    pub evaluation_stream: u64,
}

/// Master seed split so validation never perturbs training randomness.
pub struct Streams {
    pub train: SimRng,
    pub validation: SimRng,
    pub evaluation: SimRng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let m = SimRng::new(seed);
        Self { train: m.derive(1), validation: m.derive(2), evaluation: m.derive(3) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Stop once this many inner loops are done in total.
    pub stop_after: Option<usize>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serialisable");
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })
}

fn checkpoint_dir(iteration: usize) -> PathBuf {
    PathBuf::from("checkpoints").join(format!("{iteration:04}"))
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse { path: path.into(), message: e.to_string() }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// Rewrites `metrics.csv` and `losses.csv` from the index.
pub fn write_tables(index: &CheckpointIndex, run_dir: &Path) -> Result<()> {
    let path = run_dir.join("metrics.csv");
    let err = csv_error(&path);
    let mut w = csv::Writer::from_path(&path).map_err(&err)?;
    w.write_record([
        "iteration",
        "phase",
        "avg_response",
        "sd_response",
        "q75",
        "q95",
        "avg_overflows",
        "sd_overflows",
        "group0_response",
        "group1_response",
        "group_difference",
        "coverage_ratio",
        "avg_reward",
    ])
    .map_err(&err)?;
    for r in &index.records {
        let m = &r.metrics;
        let g = |k: usize| opt_cell(m.groups.get(k).and_then(|g| g.mean_response));
        w.write_record([
            r.iteration.to_string(),
            r.phase.as_str().to_string(),
            opt_cell(m.mean_response),
            opt_cell(m.sd_response),
            m.q75.map_or_else(String::new, |x| x.to_string()),
            m.q95.map_or_else(String::new, |x| x.to_string()),
            format!("{}", m.mean_overflows),
            opt_cell(m.sd_overflows),
            g(0),
            g(1),
            opt_cell(m.group_difference),
            opt_cell(m.coverage_ratio),
            format!("{}", m.mean_reward),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = run_dir.join("losses.csv");
    let err = csv_error(&path);
    let mut w = csv::Writer::from_path(&path).map_err(&err)?;
    w.write_record(["iteration", "phase", "network", "epoch", "train_loss", "validation_loss"]).map_err(&err)?;
    for r in &index.records {
        for l in &r.losses {
            w.write_record([
                r.iteration.to_string(),
                r.phase.as_str().to_string(),
                l.network.clone(),
                l.epoch.to_string(),
                format!("{}", l.train),
                format!("{}", l.validation),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn validate_policies(learners: &Learners, scenario: &Scenario, schedule: &TrainSchedule, rng: &SimRng, label: &str) -> Result<RunSummary> {
    let patrol = learners.patrol_policy(scenario)?;
    let dispatch = learners.dispatch_policy();
    let v = &schedule.validation;
    Ok(evaluate(label, scenario, patrol.as_ref(), dispatch.as_ref(), v.episodes, v.length, rng)?.summary)
}

/// One patrol inner loop: collect with the exploring policy against the
/// current dispatcher, then train the shared Q-network.
pub fn patrol_inner_loop(learners: &mut Learners, scenario: &Scenario, settings: &PatrolSettings, rng: &SimRng) -> Result<Vec<LossRow>> {
    let behaviour = QPatrol::new(learners.q.q.clone(), scenario, settings.epsilon)?;
    let dispatch = learners.dispatch_policy();
    let data = collect_patrol_transitions(
        scenario,
        &behaviour,
        dispatch.as_ref(),
        settings.n_patrol,
        settings.collection_length,
        &rng.derive(1),
    )?;
    let (train, val) = data.split(settings.train_fraction, &mut rng.derive(2).generator());
    let mut shuffle = rng.derive(3).generator();
    let mut rows = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let train_loss = learners.q.update_epoch(&train, settings.batch_size, &mut shuffle)?;
        rows.push(LossRow { network: "q".into(), epoch, train: train_loss, validation: learners.q.td_loss(&val) });
    }
    if settings.epochs > 0 {
        learners.q_active = true;
    }
    Ok(rows)
}

/// One dispatch inner loop with the patrol side frozen.
pub fn dispatch_loop(learners: &mut Learners, scenario: &Scenario, settings: &DispatchSettings, rng: &SimRng) -> Result<Vec<LossRow>> {
    let patrol = learners.patrol_policy(scenario)?;
    let collecting = learners.dispatch_policy();
    let report = dispatch_inner_loop(&mut learners.nets, patrol.as_ref(), collecting.as_ref(), scenario, settings, rng)?;
    learners.value_active = true;
    let mut rows = loss_rows("v", &report.v);
    rows.extend(loss_rows("delta_patrol", &report.delta_patrol));
    rows.extend(loss_rows("delta_incident", &report.delta_incident));
    Ok(rows)
}

fn save_record(learners: &Learners, index: &mut CheckpointIndex, run_dir: &Path, record: CheckpointRecord) -> Result<()> {
    let dir = run_dir.join(&record.dir);
    learners.save(&dir, true)?;
    let previous = index.records.last().map(|r| run_dir.join(&r.dir).join("learner"));
    index.records.push(record);
    write_json(&run_dir.join("index.json"), index)?;
    write_tables(index, run_dir)?;
    if let Some(old) = previous {
        if old.exists() {
            std::fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
    }
    Ok(())
}

fn continue_run(
    mut learners: Learners,
    mut index: CheckpointIndex,
    scenario: &Scenario,
    schedule: &TrainSchedule,
    streams: &Streams,
    run_dir: &Path,
    options: TrainOptions,
) -> Result<CheckpointIndex> {
    let phases = plan(index.mode, schedule);
    let done = index.records.last().map_or(0, |r| r.iteration);
    for (k, &phase) in phases.iter().enumerate().skip(done) {
        let iteration = k + 1;
        if options.stop_after.is_some_and(|s| iteration > s) {
            break;
        }
        let rng = streams.train.derive(iteration as u64);
        let losses = match phase {
            PhaseTag::Dispatch => dispatch_loop(&mut learners, scenario, &schedule.dispatch, &rng)?,
            PhaseTag::Patrol => patrol_inner_loop(&mut learners, scenario, &schedule.patrol, &rng)?,
            PhaseTag::Initial => unreachable!("plans hold inner loops only"),
        };
        let metrics = validate_policies(&learners, scenario, schedule, &streams.validation, phase.as_str())?;
        log::info!(
            "loop {iteration}/{} ({}): avg response {:.3}, avg overflows {:.1}",
            phases.len(),
            phase.as_str(),
            metrics.mean_response.unwrap_or(f64::NAN),
            metrics.mean_overflows
        );
        let record = CheckpointRecord { iteration, phase, dir: checkpoint_dir(iteration), metrics, losses };
        save_record(&learners, &mut index, run_dir, record)?;
    }
    Ok(index)
}

/// Starts a run in `run_dir` (created; must not already hold a run).
pub fn train(
    mode: TrainMode,
    scenario: &Scenario,
    schedule: &TrainSchedule,
    seed: u64,
    run_dir: impl AsRef<Path>,
    options: TrainOptions,
) -> Result<CheckpointIndex> {
    schedule.validate()?;
    let run_dir = run_dir.as_ref();
    if run_dir.join("index.json").exists() {
        return Err(Error::Config(format!("{} already holds a run; resume it instead", run_dir.display())));
    }
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    save_scenario(scenario, run_dir.join("scenario.toml"))?;
    schedule.save(run_dir.join("schedule.toml"))?;
    let streams = Streams::new(seed);
    write_json(
        &run_dir.join("manifest.json"),
        &Manifest {
            format_version: RUN_FORMAT_VERSION,
            checkpoint_format_version: crate::nn::CHECKPOINT_VERSION,
            summary_format_version: crate::eval::SUMMARY_FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            mode,
            seed,
            train_stream: streams.train.key(),
            validation_stream: streams.validation.key(),
            evaluation_stream: streams.evaluation.key(),
        },
    )?;
    let learners = Learners::init(scenario, schedule, &streams.train.derive(0))?;
    let mut index = CheckpointIndex { format_version: RUN_FORMAT_VERSION, mode, planned_loops: plan(mode, schedule).len(), records: vec![] };
    let metrics = validate_policies(&learners, scenario, schedule, &streams.validation, "initial")?;
    let record = CheckpointRecord { iteration: 0, phase: PhaseTag::Initial, dir: checkpoint_dir(0), metrics, losses: vec![] };
    save_record(&learners, &mut index, run_dir, record)?;
    continue_run(learners, index, scenario, schedule, &streams, run_dir, options)
}

/// Continues a run from its newest checkpoint, using the scenario and
/// schedule copies stored in the run directory.
pub fn resume(run_dir: impl AsRef<Path>, options: TrainOptions) -> Result<CheckpointIndex> {
    let run_dir = run_dir.as_ref();
    let manifest: Manifest = read_json(&run_dir.join("manifest.json"))?;
    if manifest.format_version != RUN_FORMAT_VERSION {
        return Err(Error::Format(format!("run format version {} is not supported", manifest.format_version)));
    }
    let scenario = load_scenario(run_dir.join("scenario.toml"))?;
    let schedule = TrainSchedule::load(run_dir.join("schedule.toml"))?;
    let index = CheckpointIndex::load(run_dir)?;
    index.check(run_dir)?;
    let last = index.records.last().ok_or_else(|| Error::Contract("run has no checkpoints".into()))?;
    let learners = Learners::load(&run_dir.join(&last.dir), schedule.patrol.clone_interval)?;
    continue_run(learners, index, &scenario, &schedule, &Streams::new(manifest.seed), run_dir, options)
}

pub fn train_joint(scenario: &Scenario, schedule: &TrainSchedule, seed: u64, run_dir: impl AsRef<Path>) -> Result<CheckpointIndex> {
    train(TrainMode::Joint, scenario, schedule, seed, run_dir, TrainOptions::default())
}

pub fn train_patrol_only(scenario: &Scenario, schedule: &TrainSchedule, seed: u64, run_dir: impl AsRef<Path>) -> Result<CheckpointIndex> {
    train(TrainMode::PatrolOnly, scenario, schedule, seed, run_dir, TrainOptions::default())
}

pub fn train_dispatch_only(scenario: &Scenario, schedule: &TrainSchedule, seed: u64, run_dir: impl AsRef<Path>) -> Result<CheckpointIndex> {
    train(TrainMode::DispatchOnly, scenario, schedule, seed, run_dir, TrainOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Lowest mean response.
    MinResponse,
    /// Smallest absolute gap between the two groups' mean responses.
    Equity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Position in the index.
    pub position: usize,
    pub iteration: usize,
    pub dir: PathBuf,
    /// No checkpoint met the overflow constraint; the unconstrained best was taken.
    pub fallback: bool,
    pub mean_response: Option<f64>,
    pub mean_overflows: f64,
    pub group_difference: Option<f64>,
    pub coverage_ratio: Option<f64>,
}

/// Picks a checkpoint by `criterion`, keeping only those whose mean
/// overflows are below `overflow_factor` times the starting point's when a
/// factor is given. Ties go to the earlier checkpoint.
pub fn select_model(index: &CheckpointIndex, criterion: Criterion, overflow_factor: Option<f64>) -> Result<Selection> {
    let score = |m: &RunSummary| match criterion {
        Criterion::MinResponse => m.mean_response,
        Criterion::Equity => m.group_difference.map(f64::abs),
    };
    let scored: Vec<(usize, f64)> = index.records.iter().enumerate().filter_map(|(k, r)| score(&r.metrics).map(|s| (k, s))).collect();
    if scored.is_empty() {
        return Err(Error::Contract("no checkpoint has the metric the criterion needs".into()));
    }
    let limit = match (overflow_factor, index.heuristic()) {
        (Some(f), Some(h)) => Some(f * h.mean_overflows),
        _ => None,
    };
    let best = |cands: &mut dyn Iterator<Item = (usize, f64)>| {
        cands.fold(None, |acc: Option<(usize, f64)>, (k, s)| match acc {
            Some((_, b)) if b <= s => acc,
            _ => Some((k, s)),
        })
    };
    let feasible = best(&mut scored.iter().copied().filter(|&(k, _)| limit.is_none_or(|l| index.records[k].metrics.mean_overflows < l)));
    let (fallback, (k, _)) = match feasible {
        Some(x) => (false, x),
        None => (true, best(&mut scored.iter().copied()).expect("non-empty")),
    };
    let r = &index.records[k];
    Ok(Selection {
        position: k,
        iteration: r.iteration,
        dir: r.dir.clone(),
        fallback,
        mean_response: r.metrics.mean_response,
        mean_overflows: r.metrics.mean_overflows,
        group_difference: r.metrics.group_difference,
        coverage_ratio: r.metrics.coverage_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::presets;

    fn tiny() -> TrainSchedule {
        let mut s = TrainSchedule::paper_sim();
        s.n_warm = 1;
        s.n_outer = 1;
        s.n_inner_phi = 1;
        s.n_inner_theta = 1;
        s.patrol_only_loops = 2;
        s.dispatch_only_loops = 2;
        s.value_hidden = vec![8];
        s.patrol = PatrolSettings { n_patrol: 1500, hidden: vec![16], lr: 1e-3, collection_length: 300, ..Default::default() };
        s.dispatch = DispatchSettings { n_dispatch: 150, horizon: 30, burn_in: 20, chunk: 75, epochs_v: 3, epochs_delta: 3, lookahead_samples: 2, ..Default::default() };
        s.validation = ValidationSettings { episodes: 2, length: 150, overflow_factor: 1.25 };
        s
    }

    fn summary(resp: Option<f64>, over: f64, diff: Option<f64>) -> RunSummary {
        RunSummary {
            format_version: 1,
            policy: "x".into(),
            n_episodes: 1,
            episode_length: 1,
            n_incidents: 1,
            mean_response: resp,
            sd_response: None,
            q75: None,
            q95: None,
            mean_overflows: over,
            sd_overflows: None,
            mean_reward: 0.0,
            groups: vec![],
            group_difference: diff,
            coverage_ratio: None,
        }
    }

    fn index_of(rows: &[(f64, f64)]) -> CheckpointIndex {
        CheckpointIndex {
            format_version: RUN_FORMAT_VERSION,
            mode: TrainMode::Joint,
            planned_loops: rows.len().saturating_sub(1),
            records: rows
                .iter()
                .enumerate()
                .map(|(k, &(r, o))| CheckpointRecord {
                    iteration: k,
                    phase: if k == 0 { PhaseTag::Initial } else { PhaseTag::Dispatch },
                    dir: checkpoint_dir(k),
                    metrics: summary(Some(r), o, Some(r - 9.0)),
                    losses: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn loop_counts() {
        let p = TrainSchedule::paper_sim();
        assert_eq!(plan(TrainMode::Joint, &p).len(), 20 + 4 * (5 + 5));
        assert_eq!(plan(TrainMode::PatrolOnly, &p).len(), 20);
        assert_eq!(plan(TrainMode::DispatchOnly, &p).len(), 50);
        let a = TrainSchedule::atlanta();
        assert_eq!(plan(TrainMode::Joint, &a).len(), 8 * (10 + 5));
        assert_eq!(plan(TrainMode::PatrolOnly, &a).len(), 40);
        assert_eq!(plan(TrainMode::DispatchOnly, &a).len(), 80);
        let j = plan(TrainMode::Joint, &p);
        assert!(j[..20].iter().all(|&t| t == PhaseTag::Dispatch));
        assert_eq!(&j[20..30], &[[PhaseTag::Dispatch; 5], [PhaseTag::Patrol; 5]].concat()[..]);
    }

    #[test]
    fn empty_schedule_keeps_initial_checkpoint_only() {
        let mut s = tiny();
        s.n_warm = 0;
        s.n_outer = 0;
        let dir = tempfile::tempdir().unwrap();
        let idx = train_joint(&presets::high_volume(), &s, 1, dir.path()).unwrap();
        assert_eq!(idx.records.len(), 1);
        assert_eq!(idx.records[0].phase, PhaseTag::Initial);
        assert!(idx.is_complete());
        idx.check(dir.path()).unwrap();
    }

    #[test]
    fn schedule_files_round_trip_and_validate() {
        for s in [TrainSchedule::paper_sim(), TrainSchedule::desk(), TrainSchedule::atlanta()] {
            let back = TrainSchedule::from_toml_str(&s.to_toml_string(), Path::new("x.toml")).unwrap();
            assert_eq!(back, s);
        }
        let mut bad = tiny();
        bad.patrol.epsilon = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = tiny();
        bad.validation.length = 0;
        assert!(bad.validate().is_err());
        assert!(TrainSchedule::from_toml_str("n_outer = 1\nbogus = 2\n", Path::new("x.toml")).is_err());
    }

    #[test]
    fn phases_touch_only_their_own_side() {
        let sc = presets::high_volume();
        let s = tiny();
        let mut l = Learners::init(&sc, &s, &SimRng::new(1)).unwrap();
        let before = l.clone();
        dispatch_loop(&mut l, &sc, &s.dispatch, &SimRng::new(2)).unwrap();
        assert_eq!(l.q, before.q);
        assert_ne!(l.nets, before.nets);
        assert!(l.value_active && !l.q_active);
        let mid = l.clone();
        patrol_inner_loop(&mut l, &sc, &s.patrol, &SimRng::new(3)).unwrap();
        assert_eq!(l.nets, mid.nets);
        assert_ne!(l.q.q, mid.q.q);
        assert!(l.q_active);
    }

    #[test]
    fn single_objective_runs_freeze_the_other_side() {
        let sc = presets::high_volume();
        let s = tiny();
        let dir = tempfile::tempdir().unwrap();
        let p = train_patrol_only(&sc, &s, 3, dir.path().join("p")).unwrap();
        let d = train_dispatch_only(&sc, &s, 3, dir.path().join("d")).unwrap();
        assert_eq!(p.records.len(), 3);
        assert_eq!(d.records.len(), 3);
        for r in &p.records[1..] {
            let dp = DeployedPolicies::load(dir.path().join("p").join(&r.dir), &sc).unwrap();
            assert!(dp.value.is_none() && dp.q.is_some());
        }
        for r in &d.records[1..] {
            let dp = DeployedPolicies::load(dir.path().join("d").join(&r.dir), &sc).unwrap();
            assert!(dp.q.is_none() && dp.value.is_some());
        }
    }

    fn read(p: &Path) -> Vec<u8> {
        std::fs::read(p).unwrap()
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let sc = presets::high_volume();
        let s = tiny();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let full = train_joint(&sc, &s, 11, &a).unwrap();
        assert_eq!(full.records.len(), 4);
        let part = train(TrainMode::Joint, &sc, &s, 11, &b, TrainOptions { stop_after: Some(2) }).unwrap();
        assert_eq!(part.records.len(), 3);
        assert!(!part.is_complete());
        let resumed = resume(&b, TrainOptions::default()).unwrap();
        assert_eq!(resumed, full);
        for f in ["q.bin", "value/v.bin", "value/delta_patrol.bin", "learner/q_train.ckpt", "learner/q_target.bin"] {
            assert_eq!(read(&a.join("checkpoints/0003").join(f)), read(&b.join("checkpoints/0003").join(f)), "{f}");
        }
        assert_eq!(read(&a.join("metrics.csv")), read(&b.join("metrics.csv")));
        assert_eq!(read(&a.join("losses.csv")), read(&b.join("losses.csv")));
        assert!(!a.join("checkpoints/0002/learner").exists());
        full.check(&a).unwrap();
        assert!(train_joint(&sc, &s, 11, &a).is_err());
    }

    #[test]
    fn selection_examples() {
        let one = index_of(&[(10.0, 100.0)]);
        assert_eq!(select_model(&one, Criterion::MinResponse, Some(1.25)).unwrap().iteration, 0);

        let two = index_of(&[(9.0, 100.0), (8.5, 110.0)]);
        assert_eq!(select_model(&two, Criterion::MinResponse, Some(1.25)).unwrap().iteration, 1);

        // the global minimiser overflows too often
        let three = index_of(&[(10.0, 100.0), (7.0, 130.0), (8.0, 120.0), (9.0, 90.0)]);
        let s = select_model(&three, Criterion::MinResponse, Some(1.25)).unwrap();
        assert_eq!((s.iteration, s.fallback), (2, false));
        assert_eq!(select_model(&three, Criterion::MinResponse, None).unwrap().iteration, 1);

        // nothing feasible: unconstrained choice, flagged
        let s = select_model(&three, Criterion::MinResponse, Some(0.5)).unwrap();
        assert_eq!((s.iteration, s.fallback), (1, true));

        // equity: smallest |difference| = |9.0 - 9.0|
        assert_eq!(select_model(&three, Criterion::Equity, Some(1.25)).unwrap().iteration, 3);

        // ties to the earlier checkpoint
        let tie = index_of(&[(9.0, 10.0), (8.0, 10.0), (8.0, 10.0)]);
        assert_eq!(select_model(&tie, Criterion::MinResponse, None).unwrap().iteration, 1);
    }

    #[test]
    fn same_seed_same_tables() {
        let sc = presets::low_volume();
        let mut s = tiny();
        s.n_warm = 0;
        let dir = tempfile::tempdir().unwrap();
        train_joint(&sc, &s, 7, dir.path().join("a")).unwrap();
        train_joint(&sc, &s, 7, dir.path().join("b")).unwrap();
        assert_eq!(read(&dir.path().join("a/metrics.csv")), read(&dir.path().join("b/metrics.csv")));
        let text = String::from_utf8(read(&dir.path().join("a/metrics.csv"))).unwrap();
        assert_eq!(text.lines().count(), 1 + 3);
    }
}
