//! The joint patrol-and-dispatch environment.
//!
//! One iteration runs in a fixed order:
//! 1. every patroller moves (free ones by the patrol policy, busy ones along
//!    their forced route),
//! 2. new calls arrive and are queued, evicting the longest-waiting call when
//!    the queue is full,
//! 3. the dispatch policy pairs free patrollers with idle calls,
//! 4. the pairing is applied (on-scene times are drawn here),
//! 5. idle calls age by one iteration,
//! 6. the reward is computed from this iteration's dispatches and overflows.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BeatId, GroupId, NodeId};
use crate::rng::{Purpose, SimRng};
use crate::scenario::Scenario;

/// Cap used to scale busy statuses and idle times into network inputs.
pub const STATUS_SCALE: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    FreePatrol,
    DispatchedTravel,
    OnScene,
    Returning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IncidentStatus {
    Idle,
    Assigned,
    Served,
    Overflowed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentRecord {
    /// Arrival serial number within the episode.
    pub id: u64,
    pub location: NodeId,
    /// Iterations spent waiting while unassigned.
    pub idle_time: u32,
    pub category: usize,
    pub group: Option<GroupId>,
    pub status: IncidentStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatrollerState {
    pub id: usize,
    pub position: NodeId,
    /// Remaining travel plus on-scene iterations; zero when free.
    pub busy: u32,
    pub phase: Phase,
    pub assigned: Option<IncidentRecord>,
    pub scene_remaining: u32,
}

impl PatrollerState {
    pub fn beat(&self) -> BeatId {
        self.id
    }

    /// Free patrollers may be dispatched; this includes those returning to their beat.
    pub fn is_free(&self) -> bool {
        matches!(self.phase, Phase::FreePatrol | Phase::Returning)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub patrollers: Vec<PatrollerState>,
    /// Idle calls in arrival order.
    pub queue: Vec<IncidentRecord>,
    pub iteration: u64,
    pub next_incident_id: u64,
}

impl WorldState {
    /// Empty queue, every patroller free at a uniformly random node of its beat.
    pub fn initial(scenario: &Scenario, rng: &SimRng) -> Self {
        let mut g = rng.stream(0, Purpose::Init);
        let patrollers = (0..scenario.n_patrollers())
            .map(|id| {
                let members = scenario.graph.beat_nodes(id);
                PatrollerState {
                    id,
                    position: members[g.random_range(0..members.len())],
                    busy: 0,
                    phase: Phase::FreePatrol,
                    assigned: None,
                    scene_remaining: 0,
                }
            })
            .collect();
        Self { patrollers, queue: Vec::new(), iteration: 0, next_incident_id: 0 }
    }

    /// Every patroller free at the given nodes, empty queue.
    pub fn with_positions(positions: &[NodeId]) -> Self {
        let patrollers = positions
            .iter()
            .enumerate()
            .map(|(id, &position)| PatrollerState {
                id,
                position,
                busy: 0,
                phase: Phase::FreePatrol,
                assigned: None,
                scene_remaining: 0,
            })
            .collect();
        Self { patrollers, queue: Vec::new(), iteration: 0, next_incident_id: 0 }
    }

    pub fn free_patrollers(&self) -> impl Iterator<Item = usize> + '_ {
        self.patrollers.iter().filter(|p| p.is_free()).map(|p| p.id)
    }

    /// Builds an idle call at `location` with the given age and pushes it
    /// without overflow handling. Intended for constructing test states.
    pub fn push_incident(&mut self, scenario: &Scenario, location: NodeId, idle_time: u32, category: usize) {
        let record = IncidentRecord {
            id: self.next_incident_id,
            location,
            idle_time,
            category,
            group: scenario.graph.node(location).group,
            status: IncidentStatus::Idle,
        };
        self.next_incident_id += 1;
        self.queue.push(record);
    }

    /// Checks the structural invariants that hold between iterations.
    pub fn check_invariants(&self, scenario: &Scenario) -> Result<()> {
        let g = &scenario.graph;
        if self.queue.len() > scenario.queue_capacity {
            return Err(Error::Contract(format!("queue holds {} > {} calls", self.queue.len(), scenario.queue_capacity)));
        }
        for p in &self.patrollers {
            let in_beat = g.beat_of(p.position) == p.beat();
            let ok = match p.phase {
                Phase::FreePatrol => p.busy == 0 && in_beat && p.assigned.is_none(),
                Phase::Returning => p.busy == 0 && !in_beat && p.assigned.is_none(),
                Phase::DispatchedTravel => p.assigned.is_some_and(|inc| {
                    p.busy == g.dist(p.position, inc.location) + p.scene_remaining && p.position != inc.location
                }),
                Phase::OnScene => p.assigned.is_some_and(|inc| {
                    p.busy == p.scene_remaining && p.busy > 0 && p.position == inc.location
                }),
            };
            if !ok {
                return Err(Error::Contract(format!("patroller {} in inconsistent state {p:?}", p.id)));
            }
        }
        if self.queue.iter().any(|inc| inc.status != IncidentStatus::Idle) {
            return Err(Error::Contract("non-idle call in queue".into()));
        }
        Ok(())
    }
}

/// Pairs of (patroller index, queue slot) chosen by a dispatcher.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchAssignment {
    pub pairs: Vec<(usize, usize)>,
}

impl DispatchAssignment {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        Self { pairs }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Every patroller and slot used at most once, only free patrollers and existing slots.
    pub fn validate(&self, state: &WorldState) -> Result<()> {
        let mut rows = vec![false; state.patrollers.len()];
        let mut cols = vec![false; state.queue.len()];
        for &(i, j) in &self.pairs {
            let p = state
                .patrollers
                .get(i)
                .ok_or_else(|| Error::Contract(format!("assignment names unknown patroller {i}")))?;
            if !p.is_free() {
                return Err(Error::Contract(format!("assignment names busy patroller {i}")));
            }
            if j >= state.queue.len() {
                return Err(Error::Contract(format!("assignment names empty queue slot {j}")));
            }
            if std::mem::replace(&mut rows[i], true) || std::mem::replace(&mut cols[j], true) {
                return Err(Error::Contract(format!("pair ({i}, {j}) reuses a patroller or call")));
            }
        }
        Ok(())
    }
}

/// Chooses moves for free patrollers.
pub trait PatrolPolicy: Sync {
    /// Next node for free patroller `i`; must be a member of [`patrol_action_set`].
    fn choose(&self, scenario: &Scenario, state: &WorldState, i: usize, rng: &mut dyn rand::RngCore) -> NodeId;
}

/// Chooses which free patrollers serve which idle calls.
pub trait DispatchPolicy: Sync {
    fn assign(&self, scenario: &Scenario, state: &WorldState) -> DispatchAssignment;
}

impl<P: PatrolPolicy + ?Sized> PatrolPolicy for &P {
    fn choose(&self, scenario: &Scenario, state: &WorldState, i: usize, rng: &mut dyn rand::RngCore) -> NodeId {
        (**self).choose(scenario, state, i, rng)
    }
}

impl<D: DispatchPolicy + ?Sized> DispatchPolicy for &D {
    fn assign(&self, scenario: &Scenario, state: &WorldState) -> DispatchAssignment {
        (**self).assign(scenario, state)
    }
}

/// Never dispatches anyone.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoDispatch;

impl DispatchPolicy for NoDispatch {
    fn assign(&self, _: &Scenario, _: &WorldState) -> DispatchAssignment {
        DispatchAssignment::empty()
    }
}

/// Moves available to free patroller `i`: its current node and every
/// neighbour inside its own beat, current node first.
pub fn patrol_action_set(scenario: &Scenario, state: &WorldState, i: usize) -> Result<Vec<NodeId>> {
    let p = &state.patrollers[i];
    if p.phase != Phase::FreePatrol {
        return Err(Error::Contract(format!("patroller {i} is not on free patrol ({:?})", p.phase)));
    }
    let mut actions = Vec::with_capacity(5);
    actions.push(p.position);
    actions.extend_from_slice(scenario.graph.beat_neighbors(p.position));
    Ok(actions)
}

/// Move of a patroller that has no choice: toward its call, staying on
/// scene, or back toward the nearest node of its beat.
pub fn forced_move(scenario: &Scenario, state: &WorldState, i: usize) -> Result<NodeId> {
    let g = &scenario.graph;
    let p = &state.patrollers[i];
    match p.phase {
        Phase::FreePatrol => Err(Error::Contract(format!("patroller {i} is on free patrol"))),
        Phase::DispatchedTravel => {
            let target = p.assigned.expect("travelling patroller has a call").location;
            Ok(g.next_hop(p.position, target))
        }
        Phase::OnScene => Ok(p.position),
        Phase::Returning => Ok(g.next_hop(p.position, g.nearest_in_beat(p.position, p.beat()))),
    }
}

/// Poisson counts per category, each call placed i.i.d. by the category's
/// spatial distribution. Ids are left at zero; [`enqueue`] assigns them.
pub fn sample_arrivals<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Vec<IncidentRecord> {
    let mut out = Vec::new();
    for (k, cat) in scenario.categories.iter().enumerate() {
        if cat.lambda <= 0.0 {
            continue;
        }
        let count = Poisson::new(cat.lambda).expect("positive rate").sample(rng) as u64;
        for _ in 0..count {
            let location = cat.sample_location(rng);
            out.push(IncidentRecord {
                id: 0,
                location,
                idle_time: 0,
                category: k,
                group: scenario.graph.node(location).group,
                status: IncidentStatus::Idle,
            });
        }
    }
    out
}

/// Appends a new call. When the queue is full the call with the largest idle
/// time (earliest slot on ties) is evicted and returned; the newcomer is never evicted.
pub fn enqueue(state: &mut WorldState, mut incident: IncidentRecord, capacity: usize) -> Option<IncidentRecord> {
    incident.id = state.next_incident_id;
    incident.status = IncidentStatus::Idle;
    state.next_incident_id += 1;
    let evicted = if state.queue.len() >= capacity {
        let mut worst = 0;
        for (slot, inc) in state.queue.iter().enumerate() {
            if inc.idle_time > state.queue[worst].idle_time {
                worst = slot;
            }
        }
        let mut gone = state.queue.remove(worst);
        gone.status = IncidentStatus::Overflowed;
        Some(gone)
    } else {
        None
    };
    state.queue.push(incident);
    evicted
}

/// One dispatch: which patroller left from where toward which call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub patroller: usize,
    pub origin: NodeId,
    pub incident: IncidentRecord,
    pub travel: u32,
    pub scene_time: u32,
}

impl DispatchRecord {
    /// Idle time plus travel time.
    pub fn response(&self) -> u32 {
        self.incident.idle_time + self.travel
    }
}

/// On-scene duration: whole iterations of an exponential draw with mean
/// `beta` (the floor), at least 1.
pub fn sample_scene_time<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> u32 {
    let x: f64 = Exp::new(1.0 / beta).expect("positive mean").sample(rng);
    (x.floor().min(u32::MAX as f64) as u32).max(1)
}

/// Applies a pairing: each patroller heads for its call, the call leaves the queue.
pub fn dispatch_apply(
    scenario: &Scenario,
    state: &mut WorldState,
    assignment: &DispatchAssignment,
    rng: &SimRng,
) -> Result<Vec<DispatchRecord>> {
    assignment.validate(state)?;
    let g = &scenario.graph;
    let mut records = Vec::with_capacity(assignment.len());
    for &(i, j) in &assignment.pairs {
        let mut incident = state.queue[j];
        incident.status = IncidentStatus::Assigned;
        let beta = scenario.categories[incident.category].beta;
        let scene = sample_scene_time(beta, &mut rng.agent_stream(state.iteration, Purpose::SceneTime, i));
        let p = &mut state.patrollers[i];
        let travel = g.dist(p.position, incident.location);
        records.push(DispatchRecord { patroller: i, origin: p.position, incident, travel, scene_time: scene });
        p.busy = travel + scene;
        p.scene_remaining = scene;
        p.assigned = Some(incident);
        p.phase = if travel == 0 { Phase::OnScene } else { Phase::DispatchedTravel };
    }
    let mut slots: Vec<usize> = assignment.pairs.iter().map(|&(_, j)| j).collect();
    slots.sort_unstable_by(|a, b| b.cmp(a));
    for j in slots {
        state.queue.remove(j);
    }
    Ok(records)
}

/// Weighted response cost of this iteration's dispatches.
pub fn dispatch_cost(scenario: &Scenario, dispatched: &[DispatchRecord]) -> f64 {
    dispatched
        .iter()
        .map(|d| scenario.rho_of(d.incident.group) * f64::from(d.response()))
        .sum()
}

/// Weighted penalty of this iteration's overflows.
pub fn overflow_cost(scenario: &Scenario, overflowed: &[IncidentRecord]) -> f64 {
    overflowed
        .iter()
        .map(|o| scenario.rho_of(o.group) * scenario.alpha * f64::from(o.idle_time))
        .sum()
}

/// Negative weighted response times plus weighted overflow penalties.
pub fn reward_from_events(scenario: &Scenario, dispatched: &[DispatchRecord], overflowed: &[IncidentRecord]) -> f64 {
    -(dispatch_cost(scenario, dispatched) + overflow_cost(scenario, overflowed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatrolMove {
    pub patroller: usize,
    pub from: NodeId,
    pub to: NodeId,
    /// Whether the move was a policy decision (patroller on free patrol).
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub moves: Vec<PatrolMove>,
    pub dispatched: Vec<DispatchRecord>,
    pub overflowed: Vec<IncidentRecord>,
    /// State the dispatcher saw: after moves and arrivals, before dispatch.
    pub decision_state: WorldState,
    pub next_state: WorldState,
}

/// Phase 1: moves every patroller and advances busy clocks.
pub fn move_patrollers(
    scenario: &Scenario,
    state: &mut WorldState,
    patrol: &dyn PatrolPolicy,
    rng: &SimRng,
) -> Result<Vec<PatrolMove>> {
    let g = &scenario.graph;
    let snapshot = state.clone();
    let mut moves = Vec::with_capacity(state.patrollers.len());
    for i in 0..state.patrollers.len() {
        let from = snapshot.patrollers[i].position;
        let phase = snapshot.patrollers[i].phase;
        let to = if phase == Phase::FreePatrol {
            let mut stream = rng.agent_stream(snapshot.iteration, Purpose::Patrol, i);
            let to = patrol.choose(scenario, &snapshot, i, &mut stream);
            if to != from && !g.beat_neighbors(from).contains(&to) {
                return Err(Error::Contract(format!("patrol policy moved patroller {i} from {from} to {to}")));
            }
            to
        } else {
            forced_move(scenario, &snapshot, i)?
        };
        let p = &mut state.patrollers[i];
        p.position = to;
        match phase {
            Phase::FreePatrol => {}
            Phase::Returning => {
                if g.beat_of(to) == p.beat() {
                    p.phase = Phase::FreePatrol;
                }
            }
            Phase::DispatchedTravel => {
                p.busy -= 1;
                if to == p.assigned.expect("travelling patroller has a call").location {
                    p.phase = Phase::OnScene;
                }
            }
            Phase::OnScene => {
                p.busy -= 1;
                p.scene_remaining -= 1;
                if p.busy == 0 {
                    p.assigned = None;
                    p.phase = if g.beat_of(to) == p.beat() { Phase::FreePatrol } else { Phase::Returning };
                }
            }
        }
        moves.push(PatrolMove { patroller: i, from, to, chosen: phase == Phase::FreePatrol });
    }
    Ok(moves)
}

/// Phase 2: samples and enqueues this iteration's calls, returning evictions.
pub fn receive_calls(scenario: &Scenario, state: &mut WorldState, rng: &SimRng) -> Vec<IncidentRecord> {
    let arrivals = sample_arrivals(scenario, &mut rng.stream(state.iteration, Purpose::Arrivals));
    arrivals
        .into_iter()
        .filter_map(|inc| enqueue(state, inc, scenario.queue_capacity))
        .collect()
}

/// Phase 5: idle calls age and the clock advances.
pub fn finish_iteration(state: &mut WorldState) {
    for inc in &mut state.queue {
        inc.idle_time += 1;
    }
    state.iteration += 1;
}

/// Runs one full iteration.
pub fn step(
    state: &WorldState,
    patrol: &dyn PatrolPolicy,
    dispatch: &dyn DispatchPolicy,
    scenario: &Scenario,
    rng: &SimRng,
) -> Result<StepOutcome> {
    let mut s = state.clone();
    let moves = move_patrollers(scenario, &mut s, patrol, rng)?;
    let overflowed = receive_calls(scenario, &mut s, rng);
    let decision_state = s.clone();
    let assignment = dispatch.assign(scenario, &s);
    let dispatched = dispatch_apply(scenario, &mut s, &assignment, rng)?;
    finish_iteration(&mut s);
    let reward = reward_from_events(scenario, &dispatched, &overflowed);
    Ok(StepOutcome { reward, moves, dispatched, overflowed, decision_state, next_state: s })
}

/// Length of the dense state encoding: `(x, y, u)` per patroller and
/// `(x, y, p, present)` per queue slot.
pub fn encoding_len(scenario: &Scenario) -> usize {
    3 * scenario.n_patrollers() + 4 * scenario.queue_capacity
}

fn encode_into(scenario: &Scenario, state: &WorldState, order: impl Iterator<Item = usize>, out: &mut Vec<f64>) {
    let g = &scenario.graph;
    for i in order {
        let p = &state.patrollers[i];
        let (x, y) = g.scaled_coords(p.position);
        out.extend_from_slice(&[x, y, f64::from(p.busy) / STATUS_SCALE]);
    }
    for slot in 0..scenario.queue_capacity {
        match state.queue.get(slot) {
            Some(inc) => {
                let (x, y) = g.scaled_coords(inc.location);
                out.extend_from_slice(&[x, y, f64::from(inc.idle_time) / STATUS_SCALE, 1.0]);
            }
            None => out.extend_from_slice(&[0.0; 4]),
        }
    }
}

/// Dense encoding of the joint state in patroller order.
pub fn encode_joint(scenario: &Scenario, state: &WorldState) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoding_len(scenario));
    encode_into(scenario, state, 0..state.patrollers.len(), &mut out);
    out
}

/// Patroller order seen by agent `i`: blocks 0 and `i` exchanged.
pub fn perspective_order(n: usize, i: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |k| if k == 0 { i } else if k == i { 0 } else { k })
}

/// Encoding of the state from patroller `i`'s perspective.
pub fn perspective(scenario: &Scenario, state: &WorldState, i: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoding_len(scenario));
    encode_into(scenario, state, perspective_order(state.patrollers.len(), i), &mut out);
    out
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: u64,
    pub patrollers: Vec<(NodeId, u32, Phase)>,
    pub queue: Vec<IncidentRecord>,
    pub dispatches: Vec<DispatchRecord>,
    pub overflows: Vec<IncidentRecord>,
    pub reward: f64,
}

impl TrajectoryRecord {
    pub fn from_outcome(outcome: &StepOutcome) -> Self {
        let s = &outcome.next_state;
        Self {
            iteration: outcome.decision_state.iteration,
            patrollers: s.patrollers.iter().map(|p| (p.position, p.busy, p.phase)).collect(),
            queue: s.queue.clone(),
            dispatches: outcome.dispatched.clone(),
            overflows: outcome.overflowed.clone(),
            reward: outcome.reward,
        }
    }
}

/// Writes one JSON object per iteration.
pub struct TrajectoryLog<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn record(&mut self, outcome: &StepOutcome) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, &TrajectoryRecord::from_outcome(outcome))?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
