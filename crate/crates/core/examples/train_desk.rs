//! A reduced training run through the library API, then selection.
//!
//!     cargo run --release --example train_desk -- <run dir> [joint|patrol|dispatch] [loops]
//!
//! `loops` caps the number of inner loops; rerunning with a larger cap resumes.

use patrol_marl::scenario::presets;
use patrol_marl::trainer::{resume, select_model, train, Criterion, TrainMode, TrainOptions, TrainSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "desk_run".into());
    let mode = match args.next().as_deref() {
        Some("patrol") => TrainMode::PatrolOnly,
        Some("dispatch") => TrainMode::DispatchOnly,
        _ => TrainMode::Joint,
    };
    let options = TrainOptions { stop_after: Some(args.next().map_or(Ok(3), |a| a.parse())?) };
    let index = if std::path::Path::new(&dir).join("index.json").exists() {
        resume(&dir, options)?
    } else {
        train(mode, &presets::high_volume(), &TrainSchedule::desk(), 1, &dir, options)?
    };
    for r in &index.records {
        println!(
            "{:>3} {:<8} avg response {:.2}, avg overflows {:.1}",
            r.iteration,
            r.phase.as_str(),
            r.metrics.mean_response.unwrap_or(f64::NAN),
            r.metrics.mean_overflows
        );
    }
    let sel = select_model(&index, Criterion::MinResponse, Some(1.25))?;
    println!("selected {} ({} of {} loops done)", sel.dir.display(), index.records.len() - 1, index.planned_loops);
    Ok(())
}
