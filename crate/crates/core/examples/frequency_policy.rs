//! Builds edge counts from the bundled synthetic position log and evaluates
//! the trajectory-frequency patrol in both modes against random patrol.

use patrol_marl::baselines::{EdgeFrequencyTable, FrequencyMode, FrequencyPatrol, PriorityQueueDispatch, RandomPatrol};
use patrol_marl::eval::{comparison_table, evaluate};
use patrol_marl::rng::SimRng;
use patrol_marl::scenario::load_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let s = load_scenario(root.join("scenarios/atlanta_synthetic.toml"))?;
    let table = EdgeFrequencyTable::load(&s.graph, root.join("scenarios/atlanta_trajectories.csv"))?;
    println!("{} traversals binned", table.total());
    let rng = SimRng::new(4);
    let mut rows = vec![evaluate("random", &s, &RandomPatrol, &PriorityQueueDispatch, 20, 5000, &rng)?.summary];
    for (name, mode) in [("frequency sample", FrequencyMode::Sample), ("frequency argmax", FrequencyMode::Argmax)] {
        let policy = FrequencyPatrol { table: table.clone(), mode };
        rows.push(evaluate(name, &s, &policy, &PriorityQueueDispatch, 20, 5000, &rng)?.summary);
    }
    print!("{}", comparison_table(&rows));
    Ok(())
}
