//! Non-learned reference policies.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::env::{patrol_action_set, DispatchAssignment, DispatchPolicy, PatrolPolicy, WorldState};
use crate::error::{Error, Result};
use crate::graph::{NodeId, PatrolGraph};
use crate::scenario::Scenario;

/// Uniform choice over the patrol action set.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPatrol;

pub fn random_patrol(scenario: &Scenario, state: &WorldState, i: usize, rng: &mut (impl Rng + ?Sized)) -> NodeId {
    let actions = patrol_action_set(scenario, state, i).expect("random patrol on a free patroller");
    actions[rng.random_range(0..actions.len())]
}

impl PatrolPolicy for RandomPatrol {
    fn choose(&self, scenario: &Scenario, state: &WorldState, i: usize, rng: &mut dyn rand::RngCore) -> NodeId {
        random_patrol(scenario, state, i, rng)
    }
}

/// First-come-first-serve priority queue: higher categories first, then
/// longer waits, then arrival order; each call takes the closest still
/// unmatched free patroller.
#[derive(Debug, Clone, Copy, Default)]
pub struct PriorityQueueDispatch;

pub fn priority_queue_dispatch(scenario: &Scenario, state: &WorldState) -> DispatchAssignment {
    let g = &scenario.graph;
    let mut order: Vec<usize> = (0..state.queue.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&state.queue[a], &state.queue[b]);
        y.category
            .cmp(&x.category)
            .then(y.idle_time.cmp(&x.idle_time))
            .then(x.id.cmp(&y.id))
    });
    let mut available: Vec<usize> = state.free_patrollers().collect();
    let mut pairs = Vec::new();
    for j in order {
        let location = state.queue[j].location;
        let best = available
            .iter()
            .enumerate()
            .min_by_key(|&(_, &i)| (g.dist(state.patrollers[i].position, location), i));
        match best {
            Some((k, &i)) => {
                pairs.push((i, j));
                available.remove(k);
            }
            None => break,
        }
    }
    DispatchAssignment::new(pairs)
}

impl DispatchPolicy for PriorityQueueDispatch {
    fn assign(&self, scenario: &Scenario, state: &WorldState) -> DispatchAssignment {
        priority_queue_dispatch(scenario, state)
    }
}

/// Traversal counts of directed node pairs (self-loops included).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeFrequencyTable {
    counts: BTreeMap<(NodeId, NodeId), u64>,
}

impl EdgeFrequencyTable {
    /// Adds `count` traversals of `from -> to`; the pair must be adjacent or a self-loop.
    pub fn add(&mut self, graph: &PatrolGraph, from: NodeId, to: NodeId, count: u64) -> Result<()> {
        if from >= graph.n_nodes() || to >= graph.n_nodes() {
            return Err(Error::UnknownNode(from.max(to)));
        }
        if from != to && !graph.neighbors(from).contains(&to) {
            return Err(Error::Validation(format!("trajectory step {from} -> {to} is not a graph edge")));
        }
        *self.counts.entry((from, to)).or_default() += count;
        Ok(())
    }

    pub fn count(&self, from: NodeId, to: NodeId) -> u64 {
        self.counts.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Bins consecutive positions of each patroller (one row per time interval) into counts.
    pub fn from_positions(graph: &PatrolGraph, rows: &[(u64, usize, NodeId)]) -> Result<Self> {
        let mut by_patroller: BTreeMap<usize, Vec<(u64, NodeId)>> = BTreeMap::new();
        for &(t, p, v) in rows {
            by_patroller.entry(p).or_default().push((t, v));
        }
        let mut table = Self::default();
        for track in by_patroller.values_mut() {
            track.sort_by_key(|&(t, _)| t);
            for w in track.windows(2) {
                if w[1].0 == w[0].0 + 1 {
                    table.add(graph, w[0].1, w[1].1, 1)?;
                }
            }
        }
        Ok(table)
    }

    /// Reads a CSV with either a `from,to,count` header or a
    /// `timestamp,patroller,node` header (raw positions, binned here).
    pub fn load(graph: &PatrolGraph, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), message };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| parse_err(e.to_string()))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| parse_err(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| parse_err(e.to_string()))?;
            let field = |k: usize| -> Result<u64> {
                record
                    .get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| parse_err(format!("row {}: field {k} is not a non-negative integer", line + 2)))
            };
            rows.push((field(0)?, field(1)?, field(2)?));
        }
        match headers.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["from", "to", "count"] => {
                let mut table = Self::default();
                for (from, to, count) in rows {
                    table.add(graph, from as usize, to as usize, count)?;
                }
                Ok(table)
            }
            ["timestamp", "patroller", "node"] => {
                let rows: Vec<_> = rows.into_iter().map(|(t, p, v)| (t, p as usize, v as usize)).collect();
                Self::from_positions(graph, &rows)
            }
            other => Err(parse_err(format!(
                "unrecognised header {other:?}; expected from,to,count or timestamp,patroller,node"
            ))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let io = |e: csv::Error| Error::Parse { path: path.to_path_buf(), message: e.to_string() };
        w.write_record(["from", "to", "count"]).map_err(io)?;
        for (&(from, to), &count) in &self.counts {
            w.write_record([from.to_string(), to.to_string(), count.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// How the trajectory-frequency policy turns counts into a move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrequencyMode {
    /// Sample proportionally to count + 1.
    #[default]
    Sample,
    /// Take the most traversed move; ties to the earliest action.
    Argmax,
}

/// Patrol policy that follows observed edge traversal frequencies.
#[derive(Debug, Clone)]
pub struct FrequencyPatrol {
    pub table: EdgeFrequencyTable,
    pub mode: FrequencyMode,
}

pub fn frequency_patrol(
    table: &EdgeFrequencyTable,
    mode: FrequencyMode,
    scenario: &Scenario,
    state: &WorldState,
    i: usize,
    rng: &mut (impl Rng + ?Sized),
) -> NodeId {
    let actions = patrol_action_set(scenario, state, i).expect("frequency patrol on a free patroller");
    let from = state.patrollers[i].position;
    let counts: Vec<u64> = actions.iter().map(|&to| table.count(from, to)).collect();
    match mode {
        FrequencyMode::Argmax => {
            let best = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).unwrap().0;
            actions[best]
        }
        FrequencyMode::Sample => {
            let total: u64 = counts.iter().map(|c| c + 1).sum();
            let mut pick = rng.random_range(0..total);
            for (k, c) in counts.iter().enumerate() {
                if pick <= *c {
                    return actions[k];
                }
                pick -= c + 1;
            }
            unreachable!("pick is below the total")
        }
    }
}

impl PatrolPolicy for FrequencyPatrol {
    fn choose(&self, scenario: &Scenario, state: &WorldState, i: usize, rng: &mut dyn rand::RngCore) -> NodeId {
        frequency_patrol(&self.table, self.mode, scenario, state, i, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{dispatch_apply, IncidentStatus};
    use crate::graph::layouts;
    use crate::rng::SimRng;
    use crate::scenario::presets;

    fn node(x: usize, y: usize) -> NodeId {
        y * 14 + x
    }

    fn chi_square(counts: &[u64], probs: &[f64]) -> f64 {
        let n: u64 = counts.iter().sum();
        counts
            .iter()
            .zip(probs)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum()
    }

    #[test]
    fn random_patrol_is_uniform_on_interior() {
        let s = presets::high_volume();
        let state = WorldState::with_positions(&[node(3, 3), node(10, 3)]);
        let actions = patrol_action_set(&s, &state, 0).unwrap();
        let mut counts = vec![0u64; actions.len()];
        let mut r = SimRng::new(4).generator();
        for _ in 0..100_000 {
            let to = random_patrol(&s, &state, 0, &mut r);
            counts[actions.iter().position(|&a| a == to).unwrap()] += 1;
        }
        // 4 degrees of freedom, 0.999 quantile is 18.47
        assert!(chi_square(&counts, &[0.2; 5]) < 18.47, "{counts:?}");
    }

    #[test]
    fn random_patrol_on_leaf_node() {
        let (nodes, edges) = layouts::grid(2, 1, |_, _| 0, |_, _| None);
        let g = crate::graph::PatrolGraph::new(nodes, edges).unwrap();
        let cat = crate::scenario::IncidentCategory::new(
            0.1,
            1.0,
            crate::scenario::SpatialWeights::Uniform(crate::scenario::UniformTag::Uniform),
            2,
        )
        .unwrap();
        let s = Scenario::new(g, vec![cat], 1, 2.0, 0.9, vec![]).unwrap();
        let state = WorldState::with_positions(&[0]);
        let mut r = SimRng::new(1).generator();
        let stays = (0..100_000).filter(|_| random_patrol(&s, &state, 0, &mut r) == 0).count();
        // binomial(1e5, 0.5): sd 158
        assert!((stays as f64 - 50_000.0).abs() < 4.0 * 158.2, "{stays}");
    }

    #[test]
    fn random_patrol_never_crosses_bridge() {
        let s = presets::high_volume();
        let state = WorldState::with_positions(&[node(6, 3), node(7, 3)]);
        let mut r = SimRng::new(2).generator();
        for _ in 0..1000 {
            assert_ne!(random_patrol(&s, &state, 0, &mut r), node(7, 3));
            assert_ne!(random_patrol(&s, &state, 1, &mut r), node(6, 3));
        }
    }

    #[test]
    fn higher_category_served_first() {
        let s = presets::high_volume();
        let mut state = WorldState::with_positions(&[node(3, 3), node(10, 3)]);
        // make patroller 1 busy
        state.push_incident(&s, node(10, 3), 0, 0);
        dispatch_apply(&s, &mut state, &DispatchAssignment::new(vec![(1, 0)]), &SimRng::new(0)).unwrap();
        state.push_incident(&s, node(3, 4), 9, 0);
        state.push_incident(&s, node(0, 0), 1, 1);
        let a = priority_queue_dispatch(&s, &state);
        assert_eq!(a.pairs, vec![(0, 1)]);
    }

    #[test]
    fn no_free_patrollers_means_no_pairs() {
        let s = presets::high_volume();
        let mut state = WorldState::with_positions(&[node(3, 3), node(10, 3)]);
        state.push_incident(&s, node(3, 3), 0, 0);
        state.push_incident(&s, node(10, 3), 0, 0);
        dispatch_apply(&s, &mut state, &DispatchAssignment::new(vec![(0, 0), (1, 1)]), &SimRng::new(0)).unwrap();
        state.push_incident(&s, node(5, 5), 0, 1);
        assert!(priority_queue_dispatch(&s, &state).is_empty());
    }

    #[test]
    fn closest_patroller_is_sent() {
        let s = presets::high_volume();
        let mut state = WorldState::with_positions(&[node(1, 3), node(8, 3)]);
        state.push_incident(&s, node(6, 3), 0, 0);
        assert_eq!(s.graph.dist(node(8, 3), node(6, 3)), 2);
        assert_eq!(s.graph.dist(node(1, 3), node(6, 3)), 5);
        assert_eq!(priority_queue_dispatch(&s, &state).pairs, vec![(1, 0)]);
    }

    #[test]
    fn single_call_goes_to_argmin_distance() {
        let s = presets::high_volume();
        let mut r = SimRng::new(8).generator();
        for _ in 0..500 {
            let a = r.random_range(0..98);
            let b = r.random_range(0..98);
            let c = r.random_range(0..98);
            let mut state = WorldState::with_positions(&[a, b]);
            state.push_incident(&s, c, 0, r.random_range(0..2));
            let pairs = priority_queue_dispatch(&s, &state).pairs;
            let (da, db) = (s.graph.dist(a, c), s.graph.dist(b, c));
            let expect = if db < da { 1 } else { 0 };
            assert_eq!(pairs, vec![(expect, 0)]);
            assert_eq!(state.queue[0].status, IncidentStatus::Idle);
        }
    }

    #[test]
    fn frequency_patrol_zero_table_is_uniform() {
        let s = presets::high_volume();
        let state = WorldState::with_positions(&[node(3, 3), node(10, 3)]);
        let table = EdgeFrequencyTable::default();
        let actions = patrol_action_set(&s, &state, 0).unwrap();
        let mut counts = vec![0u64; 5];
        let mut r = SimRng::new(3).generator();
        for _ in 0..100_000 {
            let to = frequency_patrol(&table, FrequencyMode::Sample, &s, &state, 0, &mut r);
            counts[actions.iter().position(|&a| a == to).unwrap()] += 1;
        }
        assert!(chi_square(&counts, &[0.2; 5]) < 18.47, "{counts:?}");
    }

    #[test]
    fn frequency_patrol_follows_counts() {
        let s = presets::high_volume();
        let state = WorldState::with_positions(&[node(3, 3), node(10, 3)]);
        let actions = patrol_action_set(&s, &state, 0).unwrap();
        let mut table = EdgeFrequencyTable::default();
        table.add(&s.graph, node(3, 3), actions[0], 100).unwrap();
        let mut r = SimRng::new(5).generator();
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| frequency_patrol(&table, FrequencyMode::Sample, &s, &state, 0, &mut r) == actions[0])
            .count();
        let p = 101.0 / 105.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits as f64 - n as f64 * p).abs() < 4.0 * sd, "{hits}");
        assert_eq!(frequency_patrol(&table, FrequencyMode::Argmax, &s, &state, 0, &mut r), actions[0]);
    }

    #[test]
    fn table_rejects_non_adjacent_pairs() {
        let s = presets::high_volume();
        let mut table = EdgeFrequencyTable::default();
        assert!(table.add(&s.graph, 0, 2, 1).is_err());
        assert!(table.add(&s.graph, 0, 0, 1).is_ok());
        assert!(table.add(&s.graph, 0, 1, 1).is_ok());
    }

    #[test]
    fn table_file_formats() {
        let s = presets::high_volume();
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw.csv");
        std::fs::write(&raw, "timestamp,patroller,node\n0,0,0\n1,0,1\n2,0,1\n0,1,7\n1,1,8\n3,1,9\n").unwrap();
        let t = EdgeFrequencyTable::load(&s.graph, &raw).unwrap();
        assert_eq!(t.count(0, 1), 1);
        assert_eq!(t.count(1, 1), 1);
        assert_eq!(t.count(7, 8), 1);
        assert_eq!(t.count(8, 9), 0);
        let binned = dir.path().join("binned.csv");
        t.save(&binned).unwrap();
        assert_eq!(EdgeFrequencyTable::load(&s.graph, &binned).unwrap(), t);
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,b\n1,2\n").unwrap();
        assert!(EdgeFrequencyTable::load(&s.graph, &bad).is_err());
    }
}
