//! Minimum-cost partial matching: enumeration and the Hungarian method agree.

use patrol_marl::assign::{exhaustive, hungarian, objective, solve};

fn main() {
    // rows are patrollers, columns are calls; positive entries are never worth taking
    let costs = vec![
        vec![-4.0, 2.0, -1.0],
        vec![-3.5, -0.5, 3.0],
        vec![1.0, -2.0, -6.0],
    ];
    for (name, pairs) in [("exhaustive", exhaustive(&costs)), ("hungarian", hungarian(&costs)), ("solve", solve(&costs))] {
        println!("{name:>10}: {pairs:?} cost {}", objective(&costs, &pairs));
    }
    let skip_all = vec![vec![1.0, 2.0], vec![0.5, 3.0]];
    println!("all costs positive -> {:?}", solve(&skip_all));
}
