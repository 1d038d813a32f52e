//! Policy evaluation and the reported statistics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{step, DispatchPolicy, PatrolPolicy, WorldState};
use crate::error::{Error, Result};
use crate::graph::GroupId;
use crate::rng::SimRng;
use crate::scenario::Scenario;

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

/// One served call. `response = idle + travel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentOutcome {
    pub category: usize,
    pub group: Option<GroupId>,
    pub idle: u32,
    pub travel: u32,
    pub response: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode: u64,
    pub length: u64,
    pub incidents: Vec<IncidentOutcome>,
    pub overflows: u64,
    pub group_overflows: Vec<u64>,
    /// Patroller-iterations spent on nodes of each group.
    pub group_iterations: Vec<u64>,
    pub total_reward: f64,
}

/// Plays one episode. Calls count once their patroller reaches the scene
/// before the episode ends; evictions count as overflows when they happen.
pub fn run_episode(
    scenario: &Scenario,
    patrol: &dyn PatrolPolicy,
    dispatch: &dyn DispatchPolicy,
    length: u64,
    rng: &SimRng,
    episode: u64,
) -> Result<EpisodeReport> {
    let erng = rng.derive(episode);
    let state = WorldState::initial(scenario, &erng);
    run_episode_from(scenario, patrol, dispatch, state, length, &erng, episode)
}

/// [`run_episode`] from a given start state, driven directly by `erng`.
pub fn run_episode_from(
    scenario: &Scenario,
    patrol: &dyn PatrolPolicy,
    dispatch: &dyn DispatchPolicy,
    mut state: WorldState,
    length: u64,
    erng: &SimRng,
    episode: u64,
) -> Result<EpisodeReport> {
    let g = &scenario.graph;
    let mut report = EpisodeReport {
        episode,
        length,
        incidents: Vec::new(),
        overflows: 0,
        group_overflows: vec![0; g.n_groups()],
        group_iterations: vec![0; g.n_groups()],
        total_reward: 0.0,
    };
    for t in 0..length {
        let o = step(&state, patrol, dispatch, scenario, erng)?;
        for d in &o.dispatched {
            if t + u64::from(d.travel) < length {
                report.incidents.push(IncidentOutcome {
                    category: d.incident.category,
                    group: d.incident.group,
                    idle: d.incident.idle_time,
                    travel: d.travel,
                    response: d.response(),
                });
            }
        }
        report.overflows += o.overflowed.len() as u64;
        for inc in &o.overflowed {
            if let Some(gr) = inc.group {
                report.group_overflows[gr] += 1;
            }
        }
        report.total_reward += o.reward;
        for p in &o.next_state.patrollers {
            if let Some(gr) = g.node(p.position).group {
                report.group_iterations[gr] += 1;
            }
        }
        state = o.next_state;
    }
    Ok(report)
}

/// Episodes `0..n_episodes`, fanned out over the available cores and
/// returned in episode order.
pub fn run_episodes(
    scenario: &Scenario,
    patrol: &dyn PatrolPolicy,
    dispatch: &dyn DispatchPolicy,
    n_episodes: usize,
    length: u64,
    rng: &SimRng,
) -> Result<Vec<EpisodeReport>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(n_episodes.max(1));
    if workers <= 1 {
        return (0..n_episodes as u64).map(|e| run_episode(scenario, patrol, dispatch, length, rng, e)).collect();
    }
    let mut slots: Vec<Option<Result<EpisodeReport>>> = (0..n_episodes).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in slots.chunks_mut(n_episodes.div_ceil(workers)).enumerate() {
            let start = w * n_episodes.div_ceil(workers);
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_episode(scenario, patrol, dispatch, length, rng, (start + k) as u64));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every episode ran")).collect()
}

/// Smallest value with at least a fraction `q` of the sample at or below it.
pub fn nearest_rank(sorted: &[u32], q: f64) -> Option<u32> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (Option<f64>, Option<f64>) {
    let n = xs.clone().count();
    if n == 0 {
        return (None, None);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    (Some(mean), sd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: GroupId,
    pub n_incidents: usize,
    pub mean_response: Option<f64>,
    pub sd_response: Option<f64>,
    pub q75: Option<u32>,
    pub q95: Option<u32>,
    pub mean_overflows: f64,
    pub patroller_iterations: u64,
}

/// Aggregate over a set of episodes. Response statistics pool every call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub policy: String,
    pub n_episodes: usize,
    pub episode_length: u64,
    pub n_incidents: usize,
    pub mean_response: Option<f64>,
    pub sd_response: Option<f64>,
    pub q75: Option<u32>,
    pub q95: Option<u32>,
    pub mean_overflows: f64,
    pub sd_overflows: Option<f64>,
    pub mean_reward: f64,
    pub groups: Vec<GroupSummary>,
    /// Mean response of group 1 minus that of group 0.
    pub group_difference: Option<f64>,
    /// Patroller-iterations in group 1 over those in group 0.
    pub coverage_ratio: Option<f64>,
}

impl RunSummary {
    pub fn from_reports(policy: &str, reports: &[EpisodeReport]) -> Self {
        let mut all: Vec<u32> = reports.iter().flat_map(|r| r.incidents.iter().map(|i| i.response)).collect();
        all.sort_unstable();
        let (mean_response, sd_response) = mean_sd(all.iter().map(|&x| f64::from(x)));
        let (mean_overflows, sd_overflows) = mean_sd(reports.iter().map(|r| r.overflows as f64));
        let n_groups = reports.iter().map(|r| r.group_iterations.len()).max().unwrap_or(0);
        let groups: Vec<GroupSummary> = (0..n_groups)
            .map(|g| {
                let mut xs: Vec<u32> = reports
                    .iter()
                    .flat_map(|r| r.incidents.iter().filter(|i| i.group == Some(g)).map(|i| i.response))
                    .collect();
                xs.sort_unstable();
                let (mean, sd) = mean_sd(xs.iter().map(|&x| f64::from(x)));
                GroupSummary {
                    group: g,
                    n_incidents: xs.len(),
                    mean_response: mean,
                    sd_response: sd,
                    q75: nearest_rank(&xs, 0.75),
                    q95: nearest_rank(&xs, 0.95),
                    mean_overflows: reports.iter().map(|r| r.group_overflows.get(g).copied().unwrap_or(0) as f64).sum::<f64>()
                        / reports.len().max(1) as f64,
                    patroller_iterations: reports.iter().map(|r| r.group_iterations.get(g).copied().unwrap_or(0)).sum(),
                }
            })
            .collect();
        let (group_difference, coverage_ratio) = if groups.len() >= 2 {
            let diff = groups[1].mean_response.zip(groups[0].mean_response).map(|(a, b)| a - b);
            let cov = (groups[0].patroller_iterations > 0)
                .then(|| groups[1].patroller_iterations as f64 / groups[0].patroller_iterations as f64);
            (diff, cov)
        } else {
            (None, None)
        };
        Self {
            format_version: SUMMARY_FORMAT_VERSION,
            policy: policy.to_string(),
            n_episodes: reports.len(),
            episode_length: reports.first().map_or(0, |r| r.length),
            n_incidents: all.len(),
            mean_response,
            sd_response,
            q75: nearest_rank(&all, 0.75),
            q95: nearest_rank(&all, 0.95),
            mean_overflows: mean_overflows.unwrap_or(0.0),
            sd_overflows,
            mean_reward: mean_sd(reports.iter().map(|r| r.total_reward)).0.unwrap_or(0.0),
            groups,
            group_difference,
            coverage_ratio,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("summary serialises");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Self = serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
        if s.format_version != SUMMARY_FORMAT_VERSION {
            return Err(Error::Format(format!("summary format version {} is not supported", s.format_version)));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub summary: RunSummary,
    pub reports: Vec<EpisodeReport>,
}

/// Plays `n_episodes` seeded episodes and summarises them.
pub fn evaluate(
    label: &str,
    scenario: &Scenario,
    patrol: &dyn PatrolPolicy,
    dispatch: &dyn DispatchPolicy,
    n_episodes: usize,
    length: u64,
    rng: &SimRng,
) -> Result<Evaluation> {
    if length == 0 {
        return Err(Error::Config("episode length must be positive".into()));
    }
    let reports = run_episodes(scenario, patrol, dispatch, n_episodes, length, rng)?;
    Ok(Evaluation { summary: RunSummary::from_reports(label, &reports), reports })
}

/// Writes one JSON file per episode plus `summary.json` and a pooled
/// `responses.csv` (one row per served call, for external plotting).
pub fn write_evaluation(eval: &Evaluation, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let episodes = dir.join("episodes");
    std::fs::create_dir_all(&episodes).map_err(|e| Error::io(&episodes, e))?;
    for r in &eval.reports {
        let path = episodes.join(format!("episode_{:04}.json", r.episode));
        std::fs::write(&path, serde_json::to_string(r).expect("report serialises")).map_err(|e| Error::io(&path, e))?;
    }
    eval.summary.save(dir.join("summary.json"))?;
    let path = dir.join("responses.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() })?;
    let csv_err = |e: csv::Error| Error::Parse { path: path.clone(), message: e.to_string() };
    w.write_record(["policy", "episode", "category", "group", "idle", "travel", "response"]).map_err(csv_err)?;
    for r in &eval.reports {
        for i in &r.incidents {
            w.write_record([
                eval.summary.policy.clone(),
                r.episode.to_string(),
                i.category.to_string(),
                i.group.map_or(String::new(), |g| g.to_string()),
                i.idle.to_string(),
                i.travel.to_string(),
                i.response.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn fmt_f(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Plain-text comparison table, one row per summary.
pub fn comparison_table(summaries: &[RunSummary]) -> String {
    let grouped = summaries.iter().any(|s| s.groups.len() >= 2);
    let mut header = vec!["policy", "avg response", "sd", "avg overflows", "sd", "q=0.75", "q=0.95"];
    if grouped {
        header.extend(["group 0 avg", "group 1 avg", "group difference", "coverage ratio"]);
    }
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let mut row = vec![
                s.policy.clone(),
                fmt_f(s.mean_response, 2),
                fmt_f(s.sd_response, 2),
                format!("{:.1}", s.mean_overflows),
                fmt_f(s.sd_overflows, 1),
                fmt_opt(s.q75),
                fmt_opt(s.q95),
            ];
            if grouped {
                let g = |k: usize| s.groups.get(k).and_then(|g| g.mean_response);
                row.extend([fmt_f(g(0), 2), fmt_f(g(1), 2), fmt_f(s.group_difference, 2), fmt_f(s.coverage_ratio, 2)]);
            }
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "| {} |", parts.join(" | "));
    };
    line(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>(), &mut out);
    let _ = writeln!(out, "|{}|", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|"));
    for r in &rows {
        line(r, &mut out);
    }
    out
}
