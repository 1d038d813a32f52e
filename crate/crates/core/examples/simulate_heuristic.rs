//! Random patrol with priority-queue dispatch on both bundled two-beat settings.
//!
//!     cargo run --release --example simulate_heuristic -- [episodes] [length]

use patrol_marl::baselines::{PriorityQueueDispatch, RandomPatrol};
use patrol_marl::eval::{comparison_table, evaluate};
use patrol_marl::rng::SimRng;
use patrol_marl::scenario::presets;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().map_or(Ok(20), |a| a.parse())?;
    let length = args.next().map_or(Ok(5000), |a| a.parse())?;
    let rng = SimRng::new(1);
    let mut rows = Vec::new();
    for (name, s) in [("high volume", presets::high_volume()), ("low volume", presets::low_volume())] {
        let e = evaluate(name, &s, &RandomPatrol, &PriorityQueueDispatch, episodes, length, &rng)?;
        rows.push(e.summary);
    }
    print!("{}", comparison_table(&rows));
    Ok(())
}
