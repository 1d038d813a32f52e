//! One dispatch inner loop on the high-volume setting, then the learned
//! deltas and the pairing they imply for a few states.

use patrol_marl::baselines::{PriorityQueueDispatch, RandomPatrol};
use patrol_marl::dispatch::{collect_return_samples, dispatch_inner_loop, select_assignment, ValueNets};
use patrol_marl::rng::SimRng;
use patrol_marl::scenario::presets;
use patrol_marl::trainer::TrainSchedule;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = presets::high_volume();
    let settings = TrainSchedule::desk().dispatch;
    let rng = SimRng::new(2);
    let mut nets = ValueNets::new(&s, &[128], &mut rng.derive(0).generator())?;
    let report = dispatch_inner_loop(&mut nets, &RandomPatrol, &PriorityQueueDispatch, &s, &settings, &rng.derive(1))?;
    let last = |l: &[patrol_marl::dispatch::EpochLoss]| l.last().map_or(f64::NAN, |e| e.validation);
    println!(
        "validation loss: V {:.3}, delta patrol {:.3}, delta incident {:.3}",
        last(&report.v),
        last(&report.delta_patrol),
        last(&report.delta_incident)
    );

    let probe = collect_return_samples(&s, &RandomPatrol, &PriorityQueueDispatch, 200, 10, 100, 200, &rng.derive(9))?;
    for sample in probe.iter().filter(|x| !x.state.queue.is_empty()).take(5) {
        let st = &sample.state;
        let (dp, di) = nets.deltas(&s, st);
        let free: Vec<usize> = st.free_patrollers().collect();
        println!(
            "free {free:?} calls {} V {:.2} dp {:?} di {:?} -> {:?}",
            st.queue.len(),
            nets.value(&s, st),
            dp.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
            di.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
            select_assignment(&s, st, &nets).pairs
        );
    }
    Ok(())
}
