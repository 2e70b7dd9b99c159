use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::{ModelGraph, NodeId};

/// Kahn's algorithm over `nodes` restricted to `edges` whose endpoints both
/// lie in `nodes`. `pick` chooses which ready node to emit next; it receives
/// the ready list, which is kept sorted by node id.
fn kahn<F>(nodes: &[NodeId], edges: &[(NodeId, NodeId)], mut pick: F) -> Result<Vec<NodeId>, Vec<NodeId>>
where
    F: FnMut(&[NodeId]) -> usize,
{
    let slot: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut indeg = vec![0usize; nodes.len()];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut inn: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for &(a, b) in edges {
        if let (Some(&i), Some(&j)) = (slot.get(&a), slot.get(&b)) {
            out[i].push(j);
            inn[j].push(i);
            indeg[j] += 1;
        }
    }
    let mut ready: Vec<NodeId> = nodes
        .iter()
        .enumerate()
        .filter(|&(i, _)| indeg[i] == 0)
        .map(|(_, &n)| n)
        .collect();
    ready.sort_unstable();
    let mut order = Vec::with_capacity(nodes.len());
    while !ready.is_empty() {
        let k = pick(&ready);
        let n = ready.remove(k);
        order.push(n);
        for &j in &out[slot[&n]] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                let m = nodes[j];
                let at = ready.partition_point(|&r| r < m);
                ready.insert(at, m);
            }
        }
    }
    if order.len() == nodes.len() {
        return Ok(order);
    }
    // Every leftover node still has a leftover predecessor; walking back
    // must revisit a node, which closes a cycle.
    let mut pos = BTreeMap::new();
    let mut cur = (0..nodes.len()).find(|&i| indeg[i] > 0).expect("leftover node");
    let mut path = Vec::new();
    while !pos.contains_key(&cur) {
        pos.insert(cur, path.len());
        path.push(cur);
        cur = *inn[cur].iter().find(|&&p| indeg[p] > 0).expect("leftover predecessor");
    }
    let mut cycle: Vec<NodeId> = path[pos[&cur]..].iter().map(|&i| nodes[i]).collect();
    cycle.reverse();
    Err(cycle)
}

pub(super) fn kahn_order(graph: &ModelGraph) -> Result<Vec<NodeId>, Vec<NodeId>> {
    let nodes: Vec<NodeId> = (0..graph.len()).collect();
    kahn(&nodes, graph.edges(), |_| 0)
}

/// Topological order of `nodes` under `edges` (edges leaving the node set are
/// ignored). Ties are broken by a uniform choice among ready nodes, drawn
/// from `rng` only. On a cycle, returns the nodes of one cycle.
pub fn topological_sort_random<R: Rng + ?Sized>(
    nodes: &[NodeId],
    edges: &[(NodeId, NodeId)],
    rng: &mut R,
) -> Result<Vec<NodeId>, Vec<NodeId>> {
    kahn(nodes, edges, |ready| rng.gen_range(0..ready.len()))
}

impl ModelGraph {
    /// Random topological order of a subset of this graph's layers.
    pub fn random_order<R: Rng + ?Sized>(&self, nodes: &[NodeId], rng: &mut R) -> Vec<NodeId> {
        topological_sort_random(nodes, self.edges(), rng).expect("model graphs are acyclic")
    }
}

/// Weakly connected components of the subgraph induced by `nodes`.
/// Components are listed by their smallest node id, members sorted.
pub fn weakly_connected_components(graph: &ModelGraph, nodes: &[NodeId]) -> Vec<Vec<NodeId>> {
    let mut member = vec![false; graph.len()];
    for &n in nodes {
        member[n] = true;
    }
    let mut seen = vec![false; graph.len()];
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut components = Vec::new();
    for &start in &sorted {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(n) = stack.pop() {
            comp.push(n);
            let neighbours = graph.successors(n).iter().chain(graph.predecessors(n));
            for &(m, _) in neighbours {
                if member[m] && !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}
