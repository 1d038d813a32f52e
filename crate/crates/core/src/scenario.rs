//! Scenario definition and the versioned TOML scenario file format.
//!
//! A scenario file is one TOML document:
//!
//! ```toml
//! format_version = 1
//! queue_capacity = 3
//! alpha = 2.0
//! gamma = 0.9
//! rho = [1.0, 0.5]          # one weight per group, omitted when there are no groups
//!
//! [[nodes]]
//! id = 0
//! x = 0.0
//! y = 0.0
//! beat = 0
//! group = 0                 # optional
//!
//! [[edges]]
//! u = 0
//! v = 1
//! inter_beat = false
//!
//! [[categories]]
//! lambda = 0.15
//! beta = 1.0
//! weights = "uniform"       # or one non-negative weight per node
//! ```
//!
//! Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{layouts, Edge, GroupId, Node, NodeId, PatrolGraph};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

/// Spatial weighting of incident locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpatialWeights {
    Uniform(UniformTag),
    PerNode(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UniformTag {
    Uniform,
}

/// One class of calls: Poisson arrivals at `lambda` per iteration, located by
/// `weights`, with exponential on-scene time of mean `beta` iterations.
#[derive(Clone)]
pub struct IncidentCategory {
    pub lambda: f64,
    pub beta: f64,
    pub weights: SpatialWeights,
    locations: WeightedIndex<f64>,
}

impl IncidentCategory {
    pub fn new(lambda: f64, beta: f64, weights: SpatialWeights, n_nodes: usize) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Validation(format!("arrival rate must be finite and >= 0, got {lambda}")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Validation(format!("mean scene time must be finite and > 0, got {beta}")));
        }
        let raw = match &weights {
            SpatialWeights::Uniform(_) => vec![1.0; n_nodes],
            SpatialWeights::PerNode(w) => {
                if w.len() != n_nodes {
                    return Err(Error::Validation(format!(
                        "category has {} spatial weights but the graph has {n_nodes} nodes",
                        w.len()
                    )));
                }
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::Validation("spatial weights must be finite and non-negative".into()));
                }
                w.clone()
            }
        };
        let locations = WeightedIndex::new(&raw)
            .map_err(|e| Error::Validation(format!("spatial weights are unusable: {e}")))?;
        Ok(Self { lambda, beta, weights, locations })
    }

    /// Location distribution `q_k`, normalised to sum to one.
    pub fn probabilities(&self, n_nodes: usize) -> Vec<f64> {
        match &self.weights {
            SpatialWeights::Uniform(_) => vec![1.0 / n_nodes as f64; n_nodes],
            SpatialWeights::PerNode(w) => {
                let total: f64 = w.iter().sum();
                w.iter().map(|x| x / total).collect()
            }
        }
    }

    pub fn sample_location<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeId {
        self.locations.sample(rng)
    }
}

impl PartialEq for IncidentCategory {
    fn eq(&self, other: &Self) -> bool {
        self.lambda == other.lambda && self.beta == other.beta && self.weights == other.weights
    }
}

impl fmt::Debug for IncidentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IncidentCategory")
            .field("lambda", &self.lambda)
            .field("beta", &self.beta)
            .field("weights", &self.weights)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: PatrolGraph,
    pub categories: Vec<IncidentCategory>,
    pub queue_capacity: usize,
    /// Overflow penalty weight.
    pub alpha: f64,
    pub gamma: f64,
    /// Per-group reward weights; empty means every incident weighs 1.
    pub rho: Vec<f64>,
    pub description: Option<String>,
}

impl Scenario {
    pub fn new(
        graph: PatrolGraph,
        categories: Vec<IncidentCategory>,
        queue_capacity: usize,
        alpha: f64,
        gamma: f64,
        rho: Vec<f64>,
    ) -> Result<Self> {
        let s = Self { graph, categories, queue_capacity, alpha, gamma, rho, description: None };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.queue_capacity < 1 {
            return Err(Error::Validation("queue_capacity must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Validation(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.gamma.is_finite() && (0.0..1.0).contains(&self.gamma)) {
            return Err(Error::Validation(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.categories.is_empty() {
            return Err(Error::Validation("at least one incident category is required".into()));
        }
        let n_groups = self.graph.n_groups();
        if !self.rho.is_empty() && self.rho.len() != n_groups {
            return Err(Error::Validation(format!(
                "rho has {} weights but the graph has {n_groups} groups",
                self.rho.len()
            )));
        }
        if self.rho.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Validation("rho weights must be > 0".into()));
        }
        Ok(())
    }

    /// One patroller per beat.
    pub fn n_patrollers(&self) -> usize {
        self.graph.n_beats()
    }

    /// Reward weight of an incident in `group`.
    pub fn rho_of(&self, group: Option<GroupId>) -> f64 {
        match group {
            Some(g) if !self.rho.is_empty() => self.rho[g],
            _ => 1.0,
        }
    }

    pub fn with_rho(mut self, rho: Vec<f64>) -> Result<Self> {
        self.rho = rho;
        self.validate()?;
        Ok(self)
    }

    pub fn with_description(mut self, text: impl Into<String>) -> Self {
        self.description = Some(text.into());
        self
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text)
            .map_err(|e| Error::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        file.into_scenario()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ScenarioFile::from_scenario(self)).expect("scenario serialises")
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scenario::from_toml_str(&text, path)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scenario.to_toml_string()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    queue_capacity: usize,
    alpha: f64,
    gamma: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rho: Vec<f64>,
    nodes: Vec<NodeRow>,
    #[serde(default)]
    edges: Vec<EdgeRow>,
    categories: Vec<CategoryRow>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRow {
    id: usize,
    x: f64,
    y: f64,
    beat: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRow {
    u: usize,
    v: usize,
    #[serde(default)]
    inter_beat: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryRow {
    lambda: f64,
    beta: f64,
    weights: SpatialWeights,
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario> {
        if self.format_version != SCENARIO_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported format_version {} (expected {SCENARIO_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (index, row) in self.nodes.into_iter().enumerate() {
            if row.id != index {
                return Err(Error::Validation(format!(
                    "nodes[{index}] has id {}; node ids must be 0..n in order",
                    row.id
                )));
            }
            nodes.push(Node { x: row.x, y: row.y, beat: row.beat, group: row.group });
        }
        let edges = self
            .edges
            .into_iter()
            .map(|e| Edge { u: e.u, v: e.v, inter_beat: e.inter_beat })
            .collect();
        let graph = PatrolGraph::new(nodes, edges)?;
        let categories = self
            .categories
            .into_iter()
            .enumerate()
            .map(|(k, c)| {
                IncidentCategory::new(c.lambda, c.beta, c.weights, graph.n_nodes())
                    .map_err(|e| Error::Validation(format!("categories[{k}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut scenario = Scenario::new(graph, categories, self.queue_capacity, self.alpha, self.gamma, self.rho)?;
        scenario.description = self.description;
        Ok(scenario)
    }

    fn from_scenario(s: &Scenario) -> Self {
        Self {
            format_version: SCENARIO_FORMAT_VERSION,
            description: s.description.clone(),
            queue_capacity: s.queue_capacity,
            alpha: s.alpha,
            gamma: s.gamma,
            rho: s.rho.clone(),
            nodes: s
                .graph
                .nodes()
                .iter()
                .enumerate()
                .map(|(id, n)| NodeRow { id, x: n.x, y: n.y, beat: n.beat, group: n.group })
                .collect(),
            edges: s
                .graph
                .edges()
                .iter()
                .map(|e| EdgeRow { u: e.u, v: e.v, inter_beat: e.inter_beat })
                .collect(),
            categories: s
                .categories
                .iter()
                .map(|c| CategoryRow { lambda: c.lambda, beta: c.beta, weights: c.weights.clone() })
                .collect(),
        }
    }
}

/// The bundled scenarios, built in code. The files under `scenarios/` are
/// generated from these.
pub mod presets {
    use super::*;

    const UNIFORM: SpatialWeights = SpatialWeights::Uniform(UniformTag::Uniform);

    fn two_beat_setting(lambda1: f64, lambda2: f64, description: &str) -> Scenario {
        let (nodes, edges) = layouts::two_beat_grid(7);
        let graph = PatrolGraph::new(nodes, edges).expect("valid layout");
        let n = graph.n_nodes();
        let categories = vec![
            IncidentCategory::new(lambda1, 1.0, UNIFORM, n).unwrap(),
            IncidentCategory::new(lambda2, 3.0, UNIFORM, n).unwrap(),
        ];
        Scenario::new(graph, categories, 3, 2.0, 0.9, vec![])
            .expect("valid scenario")
            .with_description(description)
    }

    /// Two 7x7 beats sharing a side, two uniform call classes at a high rate.
    pub fn high_volume() -> Scenario {
        two_beat_setting(0.15, 0.075, "two 7x7 beats, high call volume")
    }

    pub fn low_volume() -> Scenario {
        two_beat_setting(0.075, 0.05, "two 7x7 beats, low call volume")
    }

    /// Group 0 is the small 20-node group.
    pub fn equity_group(x: usize, y: usize) -> GroupId {
        usize::from(!((1..=5).contains(&x) && (6..=9).contains(&y)))
    }

    /// 119-node graph (7 wide, 17 tall) split into beats of 58 and 61 nodes.
    /// A 20-node block straddling the beat boundary forms group 0 and draws
    /// calls ten times as often per node as the 99-node group 1.
    pub fn equity(rho_large: f64) -> Scenario {
        let width = 7;
        let (nodes, edges) = layouts::grid(
            width,
            17,
            |x, y| usize::from(y * width + x >= 58),
            |x, y| Some(equity_group(x, y)),
        );
        let graph = PatrolGraph::new(nodes, edges).expect("valid layout");
        let weights = graph
            .nodes()
            .iter()
            .map(|n| if n.group == Some(0) { 10.0 } else { 1.0 })
            .collect();
        let n = graph.n_nodes();
        let categories = vec![IncidentCategory::new(0.2, 3.0, SpatialWeights::PerNode(weights), n).unwrap()];
        Scenario::new(graph, categories, 3, 2.0, 0.9, vec![1.0, rho_large])
            .expect("valid scenario")
            .with_description(format!("119-node equity setting, rho_large = {rho_large}"))
    }

    /// 154-node, three-beat grid with a synthetic hotspot call distribution.
    /// The spatial weights are a made-up stand-in, not derived from real call data.
    pub fn atlanta_synthetic() -> Scenario {
        let (nodes, edges) = layouts::grid(14, 11, |x, _| (x / 5).min(2), |_, _| None);
        let graph = PatrolGraph::new(nodes, edges).expect("valid layout");
        let hotspots = [(3.0, 3.0, 6.0), (9.0, 7.0, 8.0), (12.0, 2.0, 4.0)];
        let weights = graph
            .nodes()
            .iter()
            .map(|n| {
                let bumps: f64 = hotspots
                    .iter()
                    .map(|(cx, cy, h)| h * (-((n.x - cx).powi(2) + (n.y - cy).powi(2)) / 8.0).exp())
                    .sum();
                // keep three significant digits so the file stays readable
                ((1.0 + bumps) * 1000.0).round() / 1000.0
            })
            .collect();
        let n = graph.n_nodes();
        let categories = vec![IncidentCategory::new(0.25, 5.0, SpatialWeights::PerNode(weights), n).unwrap()];
        Scenario::new(graph, categories, 3, 2.0, 0.9, vec![])
            .expect("valid scenario")
            .with_description("154-node three-beat grid with synthetic hotspot call distribution")
    }
}
