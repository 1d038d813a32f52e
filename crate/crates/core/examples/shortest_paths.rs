//! Builds the two-beat grid and prints a few shortest-path queries.

use patrol_marl::scenario::presets;

fn main() {
    let s = presets::high_volume();
    let g = &s.graph;
    println!("{} nodes, {} edges, {} beats", g.n_nodes(), g.edges().len(), g.n_beats());
    for (u, v) in [(0, 13), (0, 97), (6, 7), (48, 55)] {
        let mut path = vec![u];
        while *path.last().unwrap() != v {
            path.push(g.next_hop(*path.last().unwrap(), v));
        }
        println!("{u:>2} -> {v:>2}: {} hops via {path:?}", g.dist(u, v));
    }
    let inter = g.edges().iter().filter(|e| e.inter_beat).count();
    println!("{inter} inter-beat edges; free patrollers never use them");
}
