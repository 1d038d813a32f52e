//! Minimum-cost partial matching between rows (patrollers) and columns
//! (calls). Leaving a row or column unmatched costs nothing, so the empty
//! matching is always feasible.

/// Instances with at most this many row-column pairs are solved by enumeration.
pub const EXHAUSTIVE_LIMIT: usize = 16;

/// Sum of the selected costs, added in pair order.
pub fn objective(costs: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&(i, j)| costs[i][j]).sum()
}

fn dims(costs: &[Vec<f64>]) -> (usize, usize) {
    let m = costs.first().map_or(0, Vec::len);
    assert!(costs.iter().all(|r| r.len() == m), "cost matrix rows differ in length");
    (costs.len(), m)
}

/// Whether `a` beats `b`: lower objective, then fewer pairs, then the
/// lexicographically smaller sorted pair list.
fn better(a: (f64, &[(usize, usize)]), b: (f64, &[(usize, usize)])) -> bool {
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    if a.1.len() != b.1.len() {
        return a.1.len() < b.1.len();
    }
    a.1 < b.1
}

/// Enumerates every partial matching.
pub fn exhaustive(costs: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let (n, m) = dims(costs);
    let mut best: (f64, Vec<(usize, usize)>) = (0.0, Vec::new());
    let mut current = Vec::new();
    let mut used = vec![false; m];
    fn walk(
        i: usize,
        n: usize,
        costs: &[Vec<f64>],
        used: &mut [bool],
        current: &mut Vec<(usize, usize)>,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if i == n {
            let value = objective(costs, current);
            if better((value, current), (best.0, &best.1)) {
                *best = (value, current.clone());
            }
            return;
        }
        walk(i + 1, n, costs, used, current, best);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                current.push((i, j));
                walk(i + 1, n, costs, used, current, best);
                current.pop();
                used[j] = false;
            }
        }
    }
    walk(0, n, costs, &mut used, &mut current, &mut best);
    best.1
}

/// Hungarian algorithm on `min(c, 0)`; pairs whose cost is not negative are
/// dropped afterwards since skipping them is never worse.
pub fn hungarian(costs: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let (n, m) = dims(costs);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let transpose = n > m;
    let (rows, cols) = if transpose { (m, n) } else { (n, m) };
    let cost = |r: usize, c: usize| {
        let v = if transpose { costs[c][r] } else { costs[r][c] };
        v.min(0.0)
    };
    // potentials and matching with 1-based indexing, column 0 is a sentinel
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for r in 1..=rows {
        owner[0] = r;
        let mut c0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[c0] = true;
            let r0 = owner[c0];
            let mut delta = f64::INFINITY;
            let mut c1 = 0;
            for c in 1..=cols {
                if !used[c] {
                    let cur = cost(r0 - 1, c - 1) - u[r0] - v[c];
                    if cur < minv[c] {
                        minv[c] = cur;
                        way[c] = c0;
                    }
                    if minv[c] < delta {
                        delta = minv[c];
                        c1 = c;
                    }
                }
            }
            for c in 0..=cols {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            c0 = c1;
            if owner[c0] == 0 {
                break;
            }
        }
        loop {
            let c1 = way[c0];
            owner[c0] = owner[c1];
            c0 = c1;
            if c0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=cols)
        .filter(|&c| owner[c] != 0)
        .map(|c| if transpose { (c - 1, owner[c] - 1) } else { (owner[c] - 1, c - 1) })
        .filter(|&(i, j)| costs[i][j] < 0.0)
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Exact minimum over all partial matchings, pairs sorted.
pub fn solve(costs: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let (n, m) = dims(costs);
    if n * m <= EXHAUSTIVE_LIMIT {
        exhaustive(costs)
    } else {
        hungarian(costs)
    }
}
