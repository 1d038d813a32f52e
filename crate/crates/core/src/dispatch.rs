//! Learned dispatcher: a state-value network, two value-delta networks and
//! an exact assignment step over per-pair costs
//! `t_response(i, j) - delta_i - delta_j`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::assign;
use crate::env::{
    dispatch_apply, dispatch_cost, encode_joint, encoding_len, finish_iteration, move_patrollers, receive_calls, step,
    DispatchAssignment, DispatchPolicy, PatrolPolicy, WorldState,
};
use crate::error::{Error, Result};
use crate::nn::{load_mlp, mse_train_epoch, save_mlp, Adam, Dataset, Layer, Mlp};
use crate::rng::SimRng;
use crate::scenario::Scenario;

/// The three dispatcher networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNets {
    pub v: Mlp,
    pub delta_patrol: Mlp,
    pub delta_incident: Mlp,
}

impl ValueNets {
    pub fn new(scenario: &Scenario, hidden: &[usize], rng: &mut dyn RngCore) -> Result<Self> {
        let d = encoding_len(scenario);
        let dims = |out: usize| [&[d][..], hidden, &[out]].concat();
        Ok(Self {
            v: Mlp::new(&dims(1), rng)?,
            delta_patrol: Mlp::new(&dims(scenario.n_patrollers()), rng)?,
            delta_incident: Mlp::new(&dims(scenario.queue_capacity), rng)?,
        })
    }

    pub fn check(&self, scenario: &Scenario) -> Result<()> {
        let d = encoding_len(scenario);
        let ok = self.v.n_inputs() == d
            && self.delta_patrol.n_inputs() == d
            && self.delta_incident.n_inputs() == d
            && self.v.n_outputs() == 1
            && self.delta_patrol.n_outputs() == scenario.n_patrollers()
            && self.delta_incident.n_outputs() == scenario.queue_capacity;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("dispatch networks do not match the scenario's state encoding".into()))
        }
    }

    pub fn value(&self, scenario: &Scenario, state: &WorldState) -> f64 {
        self.v.forward(&encode_joint(scenario, state)).expect("width checked")[0]
    }

    /// Patroller deltas (length N) and queue-slot deltas (length M).
    pub fn deltas(&self, scenario: &Scenario, state: &WorldState) -> (Vec<f64>, Vec<f64>) {
        let x = encode_joint(scenario, state);
        (
            self.delta_patrol.forward(&x).expect("width checked"),
            self.delta_incident.forward(&x).expect("width checked"),
        )
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_mlp(&self.v, dir.join("v.bin"))?;
        save_mlp(&self.delta_patrol, dir.join("delta_patrol.bin"))?;
        save_mlp(&self.delta_incident, dir.join("delta_incident.bin"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            v: load_mlp(dir.join("v.bin"))?,
            delta_patrol: load_mlp(dir.join("delta_patrol.bin"))?,
            delta_incident: load_mlp(dir.join("delta_incident.bin"))?,
        })
    }
}

/// Response time if free patroller `i` took queue slot `j` now.
pub fn response_time(scenario: &Scenario, state: &WorldState, i: usize, j: usize) -> u32 {
    let inc = &state.queue[j];
    inc.idle_time + scenario.graph.dist(state.patrollers[i].position, inc.location)
}

/// Rows are the free patrollers (returned alongside), columns the queue slots.
pub fn cost_matrix(scenario: &Scenario, state: &WorldState, dp: &[f64], di: &[f64]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let free: Vec<usize> = state.free_patrollers().collect();
    let costs = free
        .iter()
        .map(|&i| {
            (0..state.queue.len())
                .map(|j| f64::from(response_time(scenario, state, i, j)) - dp[i] - di[j])
                .collect()
        })
        .collect();
    (free, costs)
}

/// Exact minimiser of the summed pair costs over all partial matchings.
pub fn select_assignment(scenario: &Scenario, state: &WorldState, nets: &ValueNets) -> DispatchAssignment {
    if state.queue.is_empty() {
        return DispatchAssignment::empty();
    }
    let (dp, di) = nets.deltas(scenario, state);
    assignment_from_deltas(scenario, state, &dp, &di)
}

pub fn assignment_from_deltas(scenario: &Scenario, state: &WorldState, dp: &[f64], di: &[f64]) -> DispatchAssignment {
    let (free, costs) = cost_matrix(scenario, state, dp, di);
    if free.is_empty() || state.queue.is_empty() {
        return DispatchAssignment::empty();
    }
    DispatchAssignment::new(assign::solve(&costs).into_iter().map(|(r, j)| (free[r], j)).collect())
}

/// Dispatch policy backed by trained networks.
#[derive(Debug, Clone)]
pub struct ValueDispatch {
    pub nets: ValueNets,
}

impl DispatchPolicy for ValueDispatch {
    fn assign(&self, scenario: &Scenario, state: &WorldState) -> DispatchAssignment {
        select_assignment(scenario, state, &self.nets)
    }
}

/// `immediate + sum_{k=1..=H} gamma^k future[k-1]`, truncated to what is available.
pub fn truncated_return(immediate: f64, future: &[f64], gamma: f64, horizon: usize) -> f64 {
    let mut total = immediate;
    let mut w = 1.0;
    for r in future.iter().take(horizon) {
        w *= gamma;
        total += w * r;
    }
    total
}

/// A decision state with its discounted return under the collecting policies.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSample {
    pub state: WorldState,
    pub ret: f64,
}

/// Simulates episodes (episode `e` uses `rng.derive(e)`) and keeps the
/// decision states of `chunk` consecutive iterations after `burn_in`, each
/// with the dispatch cost of its own decision plus the discounted rewards of
/// the next `horizon` iterations.
#[allow(clippy::too_many_arguments)]
pub fn collect_return_samples(
    scenario: &Scenario,
    patrol: &dyn PatrolPolicy,
    dispatch: &dyn DispatchPolicy,
    n: usize,
    horizon: usize,
    burn_in: usize,
    chunk: usize,
    rng: &SimRng,
) -> Result<Vec<ReturnSample>> {
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(n);
    let mut episode = 0u64;
    while out.len() < n {
        let keep = chunk.min(n - out.len());
        let erng = rng.derive(episode);
        let mut state = WorldState::initial(scenario, &erng);
        let mut decisions = Vec::with_capacity(keep);
        let mut immediate = Vec::with_capacity(keep);
        let mut rewards = Vec::with_capacity(burn_in + keep + horizon);
        for t in 0..burn_in + keep + horizon {
            let o = step(&state, patrol, dispatch, scenario, &erng)?;
            if t >= burn_in && t < burn_in + keep {
                decisions.push(o.decision_state.clone());
                immediate.push(-dispatch_cost(scenario, &o.dispatched));
            }
            rewards.push(o.reward);
            state = o.next_state;
        }
        for (k, (s, d)) in decisions.into_iter().zip(immediate).enumerate() {
            let t = burn_in + k;
            out.push(ReturnSample { state: s, ret: truncated_return(d, &rewards[t + 1..], scenario.gamma, horizon) });
        }
        episode += 1;
    }
    Ok(out)
}

/// Decision state one iteration after applying `assignment` to `state`.
fn continuation(
    scenario: &Scenario,
    state: &WorldState,
    assignment: &DispatchAssignment,
    patrol: &dyn PatrolPolicy,
    rng: &SimRng,
) -> Result<WorldState> {
    let mut s = state.clone();
    dispatch_apply(scenario, &mut s, assignment, rng)?;
    finish_iteration(&mut s);
    move_patrollers(scenario, &mut s, patrol, rng)?;
    receive_calls(scenario, &mut s, rng);
    Ok(s)
}

/// Closest idle call for each free patroller and closest free patroller for
/// each call, both by response time with ties to the lower index.
pub fn nearest_counterparts(scenario: &Scenario, state: &WorldState) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let n = state.patrollers.len();
    let free: Vec<usize> = state.free_patrollers().collect();
    let mut for_patroller = vec![None; n];
    for &i in &free {
        for_patroller[i] = (0..state.queue.len()).min_by_key(|&j| (response_time(scenario, state, i, j), j));
    }
    let for_incident = (0..state.queue.len())
        .map(|j| free.iter().copied().min_by_key(|&i| (response_time(scenario, state, i, j), i)))
        .collect();
    (for_patroller, for_incident)
}

/// Monte Carlo value deltas of a decision state: for every free patroller,
/// the mean over `k` one-step continuations of V(next | that patroller sent
/// to its nearest call) - V(next | nobody sent); likewise per queue slot with
/// its nearest free patroller. With `shared` the two branches of a sample use
/// the same random streams.
#[allow(clippy::too_many_arguments)]
pub fn delta_targets_with(
    scenario: &Scenario,
    v: &Mlp,
    patrol: &dyn PatrolPolicy,
    state: &WorldState,
    k: usize,
    rng: &SimRng,
    shared: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = scenario.n_patrollers();
    let m = scenario.queue_capacity;
    let mut dp = vec![0.0; n];
    let mut di = vec![0.0; m];
    if state.queue.is_empty() || state.free_patrollers().next().is_none() || k == 0 {
        return Ok((dp, di));
    }
    let (for_patroller, for_incident) = nearest_counterparts(scenario, state);
    let mut pairs: Vec<(usize, usize)> = for_patroller.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect();
    pairs.extend(for_incident.iter().enumerate().filter_map(|(j, i)| i.map(|i| (i, j))));
    pairs.sort_unstable();
    pairs.dedup();
    let value = |s: &WorldState| v.forward(&encode_joint(scenario, s)).expect("width checked")[0];
    let mut gains: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for sample in 0..k as u64 {
        let key = rng.derive(sample);
        let base = value(&continuation(scenario, state, &DispatchAssignment::empty(), patrol, &key)?);
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let branch_key = if shared { key } else { key.derive(1 + p as u64) };
            let sent = value(&continuation(scenario, state, &DispatchAssignment::new(vec![(i, j)]), patrol, &branch_key)?);
            *gains.entry((i, j)).or_default() += (sent - base) / k as f64;
        }
    }
    for (i, j) in for_patroller.iter().enumerate() {
        if let Some(j) = j {
            dp[i] = gains[&(i, *j)];
        }
    }
    for (j, i) in for_incident.iter().enumerate() {
        if let Some(i) = i {
            di[j] = gains[&(*i, j)];
        }
    }
    Ok((dp, di))
}

pub fn delta_targets(
    scenario: &Scenario,
    v: &Mlp,
    patrol: &dyn PatrolPolicy,
    state: &WorldState,
    k: usize,
    rng: &SimRng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    delta_targets_with(scenario, v, patrol, state, k, rng, true)
}

/// Train and validation loss (original target units) after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

/// Regression settings shared by the three dispatcher networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub train_fraction: f64,
}

/// Rewrites the output layer so that the network computes
/// `(f(x) - shift) / scale` per output.
fn unfold_output(net: &mut Mlp, shift: &Array1<f64>, scale: &Array1<f64>) {
    let last: &mut Layer = net.layers_mut().last_mut().expect("non-empty");
    for (k, mut col) in last.w.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|w| w / scale[k]);
    }
    last.b = (&last.b - shift) / scale;
}

fn fold_output(net: &mut Mlp, shift: &Array1<f64>, scale: &Array1<f64>) {
    let last: &mut Layer = net.layers_mut().last_mut().expect("non-empty");
    for (k, mut col) in last.w.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|w| w * scale[k]);
    }
    last.b = &last.b * scale + shift;
}

/// Fits `net` to `data` on standardised targets: an 80/20 (by default)
/// split, output bias re-centred on the training mean, fresh Adam moments,
/// per-epoch losses reported in target units.
/// The standardisation is folded back into the output layer afterwards.
pub fn fit_standardized(net: &mut Mlp, data: &Dataset, settings: FitSettings, rng: &mut dyn RngCore) -> Result<Vec<EpochLoss>> {
    if data.is_empty() {
        return Err(Error::Config("no samples to fit".into()));
    }
    let (train, val) = data.split(settings.train_fraction, rng);
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let shift = train.targets.mean_axis(Axis(0)).expect("non-empty");
    let scale = train.targets.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-6 { s } else { 1.0 });
    let normalised = Dataset::new(train.inputs.clone(), (&train.targets - &shift) / &scale, None)?;
    unfold_output(net, &shift, &scale);
    let offset = net.forward_batch(normalised.inputs.view()).mean_axis(Axis(0)).expect("non-empty");
    let last = net.layers_mut().last_mut().expect("non-empty");
    last.b = &last.b - &offset;
    let mut opt = Adam::new(net, settings.lr);
    let mut losses = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        mse_train_epoch(net, &mut opt, &normalised, settings.batch_size, rng)?;
        let mut folded = net.clone();
        fold_output(&mut folded, &shift, &scale);
        losses.push(EpochLoss { epoch, train: train.loss(&folded), validation: val.loss(&folded) });
    }
    fold_output(net, &shift, &scale);
    if !net.is_finite() {
        return Err(Error::Divergence("non-finite network parameters after fitting".into()));
    }
    Ok(losses)
}

/// Fits the state-value network to return samples.
pub fn fit_value(v: &mut Mlp, scenario: &Scenario, samples: &[ReturnSample], settings: FitSettings, rng: &mut dyn RngCore) -> Result<Vec<EpochLoss>> {
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| encode_joint(scenario, &s.state)).collect();
    let targets: Vec<Vec<f64>> = samples.iter().map(|s| vec![s.ret]).collect();
    fit_standardized(v, &Dataset::from_rows(&inputs, &targets, None)?, settings, rng)
}

/// Settings of one dispatcher inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispatchSettings {
    pub n_dispatch: usize,
    pub epochs_v: usize,
    pub epochs_delta: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub horizon: usize,
    pub lookahead_samples: usize,
    pub burn_in: usize,
    pub chunk: usize,
    pub train_fraction: f64,
}

impl Default for DispatchSettings {
    fn default() -> Self {
        Self {
            n_dispatch: 1000,
            epochs_v: 25,
            epochs_delta: 25,
            batch_size: 100,
            lr: 1e-3,
            horizon: 100,
            lookahead_samples: 8,
            burn_in: 100,
            chunk: 250,
            train_fraction: 0.8,
        }
    }
}

/// Loss curves of one dispatcher inner loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchLoopReport {
    pub v: Vec<EpochLoss>,
    pub delta_patrol: Vec<EpochLoss>,
    pub delta_incident: Vec<EpochLoss>,
}

/// Collect on-policy returns, fit V, build delta targets with the fitted V,
/// fit both delta networks.
pub fn dispatch_inner_loop(
    nets: &mut ValueNets,
    patrol: &dyn PatrolPolicy,
    collecting: &dyn DispatchPolicy,
    scenario: &Scenario,
    settings: &DispatchSettings,
    rng: &SimRng,
) -> Result<DispatchLoopReport> {
    nets.check(scenario)?;
    let samples = collect_return_samples(
        scenario,
        patrol,
        collecting,
        settings.n_dispatch,
        settings.horizon,
        settings.burn_in,
        settings.chunk,
        &rng.derive(1),
    )?;
    let fit = |epochs| FitSettings { epochs, batch_size: settings.batch_size, lr: settings.lr, train_fraction: settings.train_fraction };
    let v = fit_value(&mut nets.v, scenario, &samples, fit(settings.epochs_v), &mut rng.derive(2).generator())?;

    let lookahead = rng.derive(3);
    let mut inputs = Vec::with_capacity(samples.len());
    let mut dp_rows = Vec::with_capacity(samples.len());
    let mut di_rows = Vec::with_capacity(samples.len());
    for (idx, s) in samples.iter().enumerate() {
        let (dp, di) = delta_targets(scenario, &nets.v, patrol, &s.state, settings.lookahead_samples, &lookahead.derive(idx as u64))?;
        inputs.push(encode_joint(scenario, &s.state));
        dp_rows.push(dp);
        di_rows.push(di);
    }
    let x = crate::nn::stack_rows(&inputs)?;
    let dp_data = Dataset::new(x.clone(), crate::nn::stack_rows(&dp_rows)?, None)?;
    let di_data = Dataset::new(x, crate::nn::stack_rows(&di_rows)?, None)?;
    let delta_patrol = fit_standardized(&mut nets.delta_patrol, &dp_data, fit(settings.epochs_delta), &mut rng.derive(4).generator())?;
    let delta_incident = fit_standardized(&mut nets.delta_incident, &di_data, fit(settings.epochs_delta), &mut rng.derive(5).generator())?;
    Ok(DispatchLoopReport { v, delta_patrol, delta_incident })
}

/// Column of a single-output prediction over many states.
pub fn predict_values(net: &Mlp, scenario: &Scenario, states: &[WorldState]) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = states.iter().map(|s| encode_joint(scenario, s)).collect();
    let x: Array2<f64> = crate::nn::stack_rows(&rows)?;
    Ok(net.forward_batch(x.view()).column(0).to_vec())
}
