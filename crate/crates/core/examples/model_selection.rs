//! Picks checkpoints from a finished run by both criteria.
//!
//!     cargo run --example model_selection -- <run dir> [overflow factor]

use patrol_marl::trainer::{select_model, CheckpointIndex, Criterion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().ok_or("usage: model_selection <run dir> [overflow factor]")?;
    let factor: f64 = args.next().map_or(Ok(1.25), |a| a.parse())?;
    let index = CheckpointIndex::load(&dir)?;
    for criterion in [Criterion::MinResponse, Criterion::Equity] {
        for limit in [Some(factor), None] {
            match select_model(&index, criterion, limit) {
                Ok(sel) => println!(
                    "{criterion:?} limit {limit:?}: iteration {}{} response {:?} overflows {:.1} difference {:?}",
                    sel.iteration,
                    if sel.fallback { " (fallback)" } else { "" },
                    sel.mean_response,
                    sel.mean_overflows,
                    sel.group_difference
                ),
                Err(e) => println!("{criterion:?} limit {limit:?}: {e}"),
            }
        }
    }
    Ok(())
}
