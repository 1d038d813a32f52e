//! Evaluates two policy pairs, writes their outputs and a comparison table.
//!
//!     cargo run --release --example evaluate_and_report -- <out dir>

use patrol_marl::baselines::{PriorityQueueDispatch, RandomPatrol};
use patrol_marl::env::NoDispatch;
use patrol_marl::eval::{comparison_table, evaluate, write_evaluation};
use patrol_marl::rng::SimRng;
use patrol_marl::scenario::presets;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "eval_out".into()));
    let s = presets::equity(1.0);
    let rng = SimRng::new(3);
    let heuristic = evaluate("heuristic", &s, &RandomPatrol, &PriorityQueueDispatch, 25, 5000, &rng)?;
    let idle = evaluate("never dispatch", &s, &RandomPatrol, &NoDispatch, 25, 5000, &rng)?;
    write_evaluation(&heuristic, out.join("heuristic"))?;
    write_evaluation(&idle, out.join("never_dispatch"))?;
    let table = comparison_table(&[heuristic.summary, idle.summary]);
    std::fs::write(out.join("table.md"), &table)?;
    print!("{table}");
    Ok(())
}
