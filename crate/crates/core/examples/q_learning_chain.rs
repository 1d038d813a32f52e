//! Fitted Q iteration with a target network on a three-node line, compared
//! with value iteration. Reward 1 for stepping onto the right end.

use patrol_marl::env::{encoding_len, perspective, WorldState};
use patrol_marl::graph::{layouts, PatrolGraph};
use patrol_marl::nn::Mlp;
use patrol_marl::patrol::{ActionSlots, PatrolTransition, QLearner, TransitionSet, N_SLOTS};
use patrol_marl::rng::SimRng;
use patrol_marl::scenario::{IncidentCategory, Scenario, SpatialWeights, UniformTag};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (nodes, edges) = layouts::grid(3, 1, |_, _| 0, |_, _| None);
    let cat = IncidentCategory::new(0.01, 1.0, SpatialWeights::Uniform(UniformTag::Uniform), 3)?;
    let s = Scenario::new(PatrolGraph::new(nodes, edges)?, vec![cat], 1, 2.0, 0.9, vec![])?;
    let slots = ActionSlots::new(&s);
    let view = |v| perspective(&s, &WorldState::with_positions(&[v]), 0);
    let reward = |to| if to == 2 { 1.0 } else { 0.0 };

    let mut data = TransitionSet::new(encoding_len(&s));
    for v in 0..3 {
        for slot in slots.valid_slots(v) {
            let to = slots.target(v, slot).unwrap();
            data.push(PatrolTransition {
                state: view(v),
                action: slot,
                reward: reward(to),
                discount: 0.9,
                next_state: view(to),
                next_mask: slots.mask(to),
            });
        }
    }
    let mut r = SimRng::new(8).generator();
    let mut learner = QLearner::new(Mlp::new(&[encoding_len(&s), 32, N_SLOTS], &mut r)?, 1e-2, 50);
    for lr in [1e-2, 3e-3, 1e-3, 3e-4] {
        learner.opt.lr = lr;
        for _ in 0..5000 {
            learner.update_epoch(&data, data.len(), &mut r)?;
        }
        println!("lr {lr:.0e}: td loss {:.2e}", learner.td_loss(&data));
    }
    // moving right from node 1 reaches the goal, then staying earns 1 forever
    println!("Q(1, right) = {:.4}, exact {:.4}", learner.q.forward(&view(1))?[slots.slot_of(1, 2).unwrap()], 1.0 / (1.0 - 0.9));
    Ok(())
}
