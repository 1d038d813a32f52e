//! Shared-parameter Q-learning for the patrol agents.
//!
//! Every free patroller reads the same network on its own perspective of the
//! joint state. Moves are mapped to five geometric slots so the network has a
//! fixed output width; slots without a matching in-beat neighbour are masked.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::env::{perspective, step, DispatchPolicy, Phase, PatrolPolicy, WorldState};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::nn::{train_batch, Adam, Mlp};
use crate::rng::SimRng;
use crate::scenario::Scenario;

/// Slots: stay, +x, -x, +y, -y.
pub const N_SLOTS: usize = 5;

pub type Mask = [bool; N_SLOTS];

/// Per node, the in-beat neighbour reached through each slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSlots {
    table: Vec<[Option<NodeId>; N_SLOTS]>,
}

impl ActionSlots {
    /// Neighbours are matched to the four compass slots by angle, closest
    /// first (ties to the smaller node id). A node with more than four
    /// in-beat neighbours leaves the extra ones unreachable.
    pub fn new(scenario: &Scenario) -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        let g = &scenario.graph;
        let directions = [0.0, PI, FRAC_PI_2, -FRAC_PI_2];
        let table = (0..g.n_nodes())
            .map(|v| {
                let mut row = [None; N_SLOTS];
                row[0] = Some(v);
                let here = g.node(v);
                let mut candidates = Vec::new();
                for &w in g.beat_neighbors(v) {
                    let there = g.node(w);
                    let angle = (there.y - here.y).atan2(there.x - here.x);
                    for (k, &d) in directions.iter().enumerate() {
                        let mut diff = (angle - d).abs() % (2.0 * PI);
                        if diff > PI {
                            diff = 2.0 * PI - diff;
                        }
                        candidates.push((diff, w, k + 1));
                    }
                }
                candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let mut used = Vec::new();
                for (_, w, slot) in candidates {
                    if row[slot].is_none() && !used.contains(&w) {
                        row[slot] = Some(w);
                        used.push(w);
                    }
                }
                row
            })
            .collect();
        Self { table }
    }

    pub fn target(&self, node: NodeId, slot: usize) -> Option<NodeId> {
        self.table[node][slot]
    }

    pub fn mask(&self, node: NodeId) -> Mask {
        self.table[node].map(|t| t.is_some())
    }

    pub fn slot_of(&self, from: NodeId, to: NodeId) -> Option<usize> {
        self.table[from].iter().position(|&t| t == Some(to))
    }

    pub fn valid_slots(&self, node: NodeId) -> Vec<usize> {
        (0..N_SLOTS).filter(|&k| self.table[node][k].is_some()).collect()
    }
}

/// Index of the largest valid entry, ties to the lowest slot.
pub fn masked_argmax(q: &[f64], mask: &Mask) -> Option<usize> {
    let mut best: Option<usize> = None;
    for k in 0..N_SLOTS {
        if mask[k] && best.is_none_or(|b| q[k] > q[b]) {
            best = Some(k);
        }
    }
    best
}

pub fn masked_max(q: &[f64], mask: &Mask) -> Option<f64> {
    masked_argmax(q, mask).map(|k| q[k])
}

/// Epsilon-greedy patrol policy over the shared Q-network.
#[derive(Debug, Clone)]
pub struct QPatrol {
    pub net: Mlp,
    pub epsilon: f64,
    slots: ActionSlots,
}

impl QPatrol {
    pub fn new(net: Mlp, scenario: &Scenario, epsilon: f64) -> Result<Self> {
        if net.n_outputs() != N_SLOTS || net.n_inputs() != crate::env::encoding_len(scenario) {
            return Err(Error::Config(format!(
                "patrol network has dims {:?}; scenario needs {} inputs and {N_SLOTS} outputs",
                net.dims(),
                crate::env::encoding_len(scenario)
            )));
        }
        Ok(Self { net, epsilon, slots: ActionSlots::new(scenario) })
    }

    pub fn slots(&self) -> &ActionSlots {
        &self.slots
    }

    pub fn q_values(&self, scenario: &Scenario, state: &WorldState, i: usize) -> Vec<f64> {
        self.net.forward(&perspective(scenario, state, i)).expect("input width checked at construction")
    }

    /// Slot chosen for free patroller `i`.
    pub fn act_slot(&self, scenario: &Scenario, state: &WorldState, i: usize, rng: &mut dyn RngCore) -> usize {
        let node = state.patrollers[i].position;
        debug_assert_eq!(state.patrollers[i].phase, Phase::FreePatrol);
        if self.epsilon >= 1.0 || (self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon) {
            let valid = self.slots.valid_slots(node);
            return valid[rng.random_range(0..valid.len())];
        }
        let q = self.q_values(scenario, state, i);
        masked_argmax(&q, &self.slots.mask(node)).expect("stay is always valid")
    }
}

impl PatrolPolicy for QPatrol {
    fn choose(&self, scenario: &Scenario, state: &WorldState, i: usize, rng: &mut dyn RngCore) -> NodeId {
        let slot = self.act_slot(scenario, state, i, rng);
        self.slots.target(state.patrollers[i].position, slot).expect("chosen slot is valid")
    }
}

/// One decision of one patroller. When the patroller was dispatched before
/// its next free decision, `reward` is the discounted sum over the busy
/// stretch and `discount` is gamma to the power of its length.
#[derive(Debug, Clone, PartialEq)]
pub struct PatrolTransition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub discount: f64,
    pub next_state: Vec<f64>,
    /// All false when the next state has no decision.
    pub next_mask: Mask,
}

/// Column storage for many transitions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionSet {
    width: usize,
    states: Vec<f64>,
    next_states: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub discounts: Vec<f64>,
    pub next_masks: Vec<Mask>,
}

impl TransitionSet {
    pub fn new(width: usize) -> Self {
        Self { width, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn push(&mut self, t: PatrolTransition) {
        assert_eq!(t.state.len(), self.width);
        assert_eq!(t.next_state.len(), self.width);
        self.states.extend_from_slice(&t.state);
        self.next_states.extend_from_slice(&t.next_state);
        self.actions.push(t.action);
        self.rewards.push(t.reward);
        self.discounts.push(t.discount);
        self.next_masks.push(t.next_mask);
    }

    pub fn get(&self, k: usize) -> PatrolTransition {
        let w = self.width;
        PatrolTransition {
            state: self.states[k * w..(k + 1) * w].to_vec(),
            action: self.actions[k],
            reward: self.rewards[k],
            discount: self.discounts[k],
            next_state: self.next_states[k * w..(k + 1) * w].to_vec(),
            next_mask: self.next_masks[k],
        }
    }

    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.states.truncate(n * self.width);
            self.next_states.truncate(n * self.width);
            self.actions.truncate(n);
            self.rewards.truncate(n);
            self.discounts.truncate(n);
            self.next_masks.truncate(n);
        }
    }

    pub fn select(&self, rows: &[usize]) -> TransitionSet {
        let mut out = TransitionSet::new(self.width);
        for &k in rows {
            out.push(self.get(k));
        }
        out
    }

    /// Shuffled split with `train_fraction` of the rows first.
    pub fn split(&self, train_fraction: f64, rng: &mut (impl Rng + ?Sized)) -> (TransitionSet, TransitionSet) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        (self.select(&idx[..cut]), self.select(&idx[cut..]))
    }

    fn rows(&self, source: &[f64], rows: &[usize]) -> Array2<f64> {
        let w = self.width;
        let mut flat = Vec::with_capacity(rows.len() * w);
        for &k in rows {
            flat.extend_from_slice(&source[k * w..(k + 1) * w]);
        }
        Array2::from_shape_vec((rows.len(), w), flat).expect("row width")
    }

    /// Regression inputs and targets `r + discount * max_a' target(s')[a']`
    /// placed at the taken action.
    fn batch(&self, rows: &[usize], target: &Mlp) -> (Array2<f64>, Array2<f64>, Vec<usize>) {
        let x = self.rows(&self.states, rows);
        let next_q = target.forward_batch(self.rows(&self.next_states, rows).view());
        let mut y = Array2::zeros((rows.len(), N_SLOTS));
        let mut actions = Vec::with_capacity(rows.len());
        for (r, &k) in rows.iter().enumerate() {
            let q = next_q.row(r);
            let bootstrap = masked_max(q.as_slice().expect("row is contiguous"), &self.next_masks[k]).unwrap_or(0.0);
            y[[r, self.actions[k]]] = self.rewards[k] + self.discounts[k] * bootstrap;
            actions.push(self.actions[k]);
        }
        (x, y, actions)
    }
}

/// Runs one episode and records a transition for every free-patrol decision
/// whose follow-up decision is reached before the episode ends.
#[allow(clippy::too_many_arguments)]
pub fn episode_transitions(
    scenario: &Scenario,
    patrol: &QPatrol,
    dispatch: &dyn DispatchPolicy,
    length: u64,
    rng: &SimRng,
    limit: Option<usize>,
    out: &mut TransitionSet,
) -> Result<()> {
    struct Pending {
        state: Vec<f64>,
        action: usize,
        reward: f64,
        discount: f64,
    }
    let gamma = scenario.gamma;
    let n = scenario.n_patrollers();
    let mut state = WorldState::initial(scenario, rng);
    let mut pending: Vec<Option<Pending>> = (0..n).map(|_| None).collect();
    let full = |out: &TransitionSet| limit.is_some_and(|l| out.len() >= l);
    let close = |p: Pending, state: &WorldState, i: usize, out: &mut TransitionSet| {
        let node = state.patrollers[i].position;
        out.push(PatrolTransition {
            state: p.state,
            action: p.action,
            reward: p.reward,
            discount: p.discount,
            next_state: perspective(scenario, state, i),
            next_mask: patrol.slots.mask(node),
        });
    };
    for _ in 0..length {
        let free: Vec<usize> = (0..n).filter(|&i| state.patrollers[i].phase == Phase::FreePatrol).collect();
        for &i in &free {
            if let Some(p) = pending[i].take() {
                close(p, &state, i, out);
                if full(out) {
                    return Ok(());
                }
            }
        }
        let views: Vec<Vec<f64>> = free.iter().map(|&i| perspective(scenario, &state, i)).collect();
        let outcome = step(&state, patrol, dispatch, scenario, rng)?;
        for (&i, view) in free.iter().zip(views) {
            let m = &outcome.moves[i];
            let action = patrol.slots.slot_of(m.from, m.to).expect("policy moves use slots");
            pending[i] = Some(Pending { state: view, action, reward: 0.0, discount: 1.0 });
        }
        for p in pending.iter_mut().flatten() {
            p.reward += p.discount * outcome.reward;
            p.discount *= gamma;
        }
        state = outcome.next_state;
    }
    for i in 0..n {
        if state.patrollers[i].phase == Phase::FreePatrol {
            if let Some(p) = pending[i].take() {
                close(p, &state, i, out);
                if full(out) {
                    return Ok(());
                }
            }
        }
    }
    Ok(())
}

/// Simulates episodes (episode `e` uses `rng.derive(e)`) until exactly
/// `n_patrol` transitions are gathered.
pub fn collect_patrol_transitions(
    scenario: &Scenario,
    patrol: &QPatrol,
    dispatch: &dyn DispatchPolicy,
    n_patrol: usize,
    episode_length: u64,
    rng: &SimRng,
) -> Result<TransitionSet> {
    if episode_length == 0 {
        return Err(Error::Config("episode length must be positive".into()));
    }
    let mut out = TransitionSet::new(crate::env::encoding_len(scenario));
    let mut episode = 0u64;
    let mut dry = 0;
    while out.len() < n_patrol {
        let before = out.len();
        episode_transitions(scenario, patrol, dispatch, episode_length, &rng.derive(episode), Some(n_patrol), &mut out)?;
        episode += 1;
        dry = if out.len() == before { dry + 1 } else { 0 };
        if dry >= 100 {
            return Err(Error::Contract("no patrol decisions produced in 100 consecutive episodes".into()));
        }
    }
    out.truncate(n_patrol);
    Ok(out)
}

/// Online network, target network and optimizer. The target is refreshed
/// every `clone_interval` optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct QLearner {
    pub q: Mlp,
    pub target: Mlp,
    pub opt: Adam,
    pub clone_interval: u64,
}

impl QLearner {
    pub fn new(q: Mlp, lr: f64, clone_interval: u64) -> Self {
        let opt = Adam::new(&q, lr);
        Self { target: q.clone(), q, opt, clone_interval: clone_interval.max(1) }
    }

    /// One pass over shuffled mini-batches; returns the mean TD loss.
    pub fn update_epoch(&mut self, data: &TransitionSet, batch_size: usize, rng: &mut dyn RngCore) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Config("no transitions to train on".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for rows in order.chunks(batch_size.max(1)) {
            let (x, y, a) = data.batch(rows, &self.target);
            total += train_batch(&mut self.q, &mut self.opt, x.view(), y.view(), Some(&a))? * rows.len() as f64;
            if self.opt.step.is_multiple_of(self.clone_interval) {
                self.target = self.q.clone();
            }
        }
        Ok(total / data.len() as f64)
    }

    /// Mean TD loss against the current target network (0 for an empty set).
    pub fn td_loss(&self, data: &TransitionSet) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let order: Vec<usize> = (0..data.len()).collect();
        let mut total = 0.0;
        for rows in order.chunks(4096) {
            let (x, y, a) = data.batch(rows, &self.target);
            total += self.q.loss(x.view(), y.view(), Some(&a)) * rows.len() as f64;
        }
        total / data.len() as f64
    }
}

/// Free function form of [`QLearner::update_epoch`].
pub fn lsvi_update_epoch(learner: &mut QLearner, data: &TransitionSet, batch_size: usize, rng: &mut dyn RngCore) -> Result<f64> {
    learner.update_epoch(data, batch_size, rng)
}
