//! Writes the built-in scenarios and schedules as editable files, plus a
//! synthetic two-day position log for the trajectory-frequency baseline.
//!
//!     cargo run --example export_presets -- <dir>

use std::path::PathBuf;

use patrol_marl::rng::SimRng;
use patrol_marl::scenario::{presets, save_scenario, Scenario};
use patrol_marl::trainer::TrainSchedule;
use rand::Rng;

/// One row per patroller per minute; each step favours call-heavy neighbours.
fn synthetic_positions(scenario: &Scenario, minutes: u64, seed: u64) -> Vec<(u64, usize, usize)> {
    let graph = &scenario.graph;
    let weights = scenario.categories[0].probabilities(graph.n_nodes());
    let mut rng = SimRng::new(seed).generator();
    let mut rows = Vec::new();
    let mut at: Vec<usize> = (0..graph.n_beats()).map(|b| graph.beat_nodes(b)[0]).collect();
    for t in 0..minutes {
        for (p, v) in at.iter_mut().enumerate() {
            rows.push((t, p, *v));
            let mut options = vec![*v];
            options.extend_from_slice(graph.beat_neighbors(*v));
            let total: f64 = options.iter().map(|&u| weights[u]).sum();
            let mut pick = rng.random::<f64>() * total;
            for &u in &options {
                pick -= weights[u];
                if pick <= 0.0 {
                    *v = u;
                    break;
                }
            }
        }
    }
    rows
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")));
    let scenarios = root.join("scenarios");
    let schedules = root.join("schedules");
    std::fs::create_dir_all(&scenarios)?;
    std::fs::create_dir_all(&schedules)?;

    save_scenario(&presets::high_volume(), scenarios.join("high_volume.toml"))?;
    save_scenario(&presets::low_volume(), scenarios.join("low_volume.toml"))?;
    save_scenario(&presets::equity(0.5), scenarios.join("equity_rho_0.5.toml"))?;
    save_scenario(&presets::equity(1.0), scenarios.join("equity_rho_1.0.toml"))?;
    save_scenario(&presets::atlanta_synthetic(), scenarios.join("atlanta_synthetic.toml"))?;

    TrainSchedule::paper_sim().save(schedules.join("paper_sim.toml"))?;
    TrainSchedule::desk().save(schedules.join("desk.toml"))?;
    TrainSchedule::atlanta().save(schedules.join("atlanta.toml"))?;

    let atlanta = presets::atlanta_synthetic();
    let path = scenarios.join("atlanta_trajectories.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["timestamp", "patroller", "node"])?;
    for (t, p, v) in synthetic_positions(&atlanta, 2 * 24 * 60, 11) {
        w.write_record([t.to_string(), p.to_string(), v.to_string()])?;
    }
    w.flush()?;
    println!("wrote {} and {}", scenarios.display(), schedules.display());
    Ok(())
}
