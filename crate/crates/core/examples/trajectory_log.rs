//! Steps the environment by hand and writes one JSON line per iteration.
//!
//!     cargo run --example trajectory_log -- out.jsonl

use std::fs::File;
use std::io::BufWriter;

use patrol_marl::baselines::{PriorityQueueDispatch, RandomPatrol};
use patrol_marl::env::{step, TrajectoryLog, WorldState};
use patrol_marl::rng::SimRng;
use patrol_marl::scenario::presets;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "trajectory.jsonl".into());
    let s = presets::high_volume();
    let rng = SimRng::new(5);
    let mut state = WorldState::initial(&s, &rng);
    let mut log = TrajectoryLog::new(BufWriter::new(File::create(&path)?));
    let mut total = 0.0;
    for _ in 0..200 {
        let o = step(&state, &RandomPatrol, &PriorityQueueDispatch, &s, &rng)?;
        log.record(&o)?;
        total += o.reward;
        state = o.next_state;
    }
    println!("200 iterations written to {path}, total reward {total}");
    Ok(())
}
