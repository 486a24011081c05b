//! Random topologies for sweeps. Nodes are numbered `1..=n`, links are symmetric.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::netsim::Topology;
use crate::NodeId;

/// Link gain used by generated topologies, well above the default noise floor.
pub const GENERATED_GAIN_DBM: f64 = -60.0;

fn edge(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn to_topology(edges: &BTreeSet<(usize, usize)>) -> Topology {
    let mut t = Topology::new();
    for &(a, b) in edges {
        t.add_symmetric(NodeId(a as u16), NodeId(b as u16), GENERATED_GAIN_DBM);
    }
    t
}

fn connected(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    if n == 0 {
        return true;
    }
    let mut adj = vec![Vec::new(); n + 1];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n + 1];
    let mut stack = vec![1];
    seen[1] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == n
}

/// Random spanning tree plus random extra edges until the mean degree
/// reaches `mean_degree` (capped by the complete graph).
pub fn random_connected<R: Rng>(n: usize, mean_degree: usize, rng: &mut R) -> Topology {
    assert!(
        (1..u16::MAX as usize).contains(&n),
        "node count out of range"
    );
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut edges = BTreeSet::new();
    for i in 1..n {
        let parent = order[rng.gen_range(0..i)];
        edges.insert(edge(order[i], parent));
    }
    let target = (n * mean_degree / 2).min(n * (n - 1) / 2);
    while edges.len() < target {
        let a = rng.gen_range(1..=n);
        let b = rng.gen_range(1..=n);
        if a != b {
            edges.insert(edge(a, b));
        }
    }
    to_topology(&edges)
}

/// Connected `d`-regular graph: a circulant graph randomized by double-edge
/// swaps that keep every degree and connectivity.
pub fn random_regular<R: Rng>(n: usize, d: usize, rng: &mut R) -> Topology {
    assert!(
        d < n && (n * d).is_multiple_of(2),
        "no {d}-regular graph on {n} nodes"
    );
    assert!(n < u16::MAX as usize, "node count out of range");
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for k in 1..=d / 2 {
            edges.insert(edge(i + 1, (i + k) % n + 1));
        }
        if d % 2 == 1 {
            edges.insert(edge(i + 1, (i + n / 2) % n + 1));
        }
    }
    let swaps = 10 * edges.len();
    for _ in 0..swaps {
        let list: Vec<(usize, usize)> = edges.iter().copied().collect();
        let (a, b) = list[rng.gen_range(0..list.len())];
        let (c, e) = list[rng.gen_range(0..list.len())];
        let (c, e) = if rng.gen_bool(0.5) { (c, e) } else { (e, c) };
        if [a, b].contains(&c) || [a, b].contains(&e) {
            continue;
        }
        let (x, y) = (edge(a, c), edge(b, e));
        if edges.contains(&x) || edges.contains(&y) {
            continue;
        }
        let mut next = edges.clone();
        next.remove(&(a, b));
        next.remove(&edge(c, e));
        next.insert(x);
        next.insert(y);
        if connected(n, &next) {
            edges = next;
        }
    }
    to_topology(&edges)
}
