//! Layer groups: sets of layers executed together with on-chip activations.

use serde::{Deserialize, Serialize};

use crate::model::{EdgeId, ModelGraph, NodeId};

/// A set of layers, kept sorted by node id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Group(Vec<NodeId>);

/// An activation tensor that a group reads: either a model input feeding a
/// source layer, or the output of some layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TensorRef {
    ModelInput(NodeId),
    Output(NodeId),
}

impl Group {
    pub fn new(mut nodes: Vec<NodeId>) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        Group(nodes)
    }

    pub fn singleton(node: NodeId) -> Self {
        Group(vec![node])
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.0.binary_search(&node).is_ok()
    }

    /// Members in the graph's deterministic topological order.
    pub fn ordered(&self, graph: &ModelGraph) -> Vec<NodeId> {
        graph
            .topo_order()
            .iter()
            .copied()
            .filter(|&n| self.contains(n))
            .collect()
    }

    /// Members with no consumer inside the group.
    pub fn sinks(&self, graph: &ModelGraph) -> Vec<NodeId> {
        self.0
            .iter()
            .copied()
            .filter(|&n| graph.successors(n).iter().all(|&(s, _)| !self.contains(s)))
            .collect()
    }

    /// Whether a member's output must be written out: it is a model output
    /// or some consumer lies outside the group.
    pub fn is_exported(&self, graph: &ModelGraph, node: NodeId) -> bool {
        graph.is_sink(node) || graph.successors(node).iter().any(|&(s, _)| !self.contains(s))
    }

    /// Edges with both endpoints inside the group.
    pub fn internal_edges<'g>(&'g self, graph: &'g ModelGraph) -> impl Iterator<Item = EdgeId> + 'g {
        graph
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| self.contains(a) && self.contains(b))
            .map(|(e, _)| e)
    }

    /// Tensors read from outside the group, with the members that read them.
    pub fn external_inputs(&self, graph: &ModelGraph) -> Vec<(TensorRef, Vec<NodeId>)> {
        let mut out: Vec<(TensorRef, Vec<NodeId>)> = Vec::new();
        for &n in &self.0 {
            let refs: Vec<TensorRef> = if graph.is_source(n) {
                vec![TensorRef::ModelInput(n)]
            } else {
                graph
                    .predecessors(n)
                    .iter()
                    .filter(|&&(p, _)| !self.contains(p))
                    .map(|&(p, _)| TensorRef::Output(p))
                    .collect()
            };
            for r in refs {
                match out.iter_mut().find(|(t, _)| *t == r) {
                    Some((_, readers)) => readers.push(n),
                    None => out.push((r, vec![n])),
                }
            }
        }
        out.sort();
        out
    }

    /// Checks that no directed path leaves the group and re-enters it.
    /// On failure returns `(member the path leaves from, member it re-enters)`.
    pub fn check_convex(&self, graph: &ModelGraph) -> Result<(), (NodeId, NodeId)> {
        let mut origin: Vec<Option<NodeId>> = vec![None; graph.len()];
        let mut stack = Vec::new();
        for &n in &self.0 {
            for &(s, _) in graph.successors(n) {
                if !self.contains(s) && origin[s].is_none() {
                    origin[s] = Some(n);
                    stack.push(s);
                }
            }
        }
        while let Some(x) = stack.pop() {
            for &(s, _) in graph.successors(x) {
                if self.contains(s) {
                    return Err((origin[x].expect("visited"), s));
                }
                if origin[s].is_none() {
                    origin[s] = origin[x];
                    stack.push(s);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;

    #[test]
    fn convexity_on_skip_block() {
        let g = skip_block(8, 4);
        assert!(Group::new(vec![0, 1, 2, 3]).check_convex(&g).is_ok());
        assert!(Group::new(vec![0, 1]).check_convex(&g).is_ok());
        assert_eq!(Group::new(vec![0, 3]).check_convex(&g), Err((0, 3)));
        assert_eq!(Group::new(vec![0, 1, 3]).check_convex(&g), Err((1, 3)));
    }

    #[test]
    fn sinks_exports_and_inputs() {
        let g = skip_block(8, 4);
        let grp = Group::new(vec![0, 1, 2]);
        assert_eq!(grp.sinks(&g), vec![2]);
        assert!(grp.is_exported(&g, 0));
        assert!(!grp.is_exported(&g, 1));
        assert_eq!(grp.external_inputs(&g), vec![(TensorRef::ModelInput(0), vec![0])]);
        let tail = Group::new(vec![3]);
        assert_eq!(
            tail.external_inputs(&g),
            vec![(TensorRef::Output(0), vec![3]), (TensorRef::Output(2), vec![3])]
        );
        assert_eq!(grp.internal_edges(&g).count(), 2);
    }
}
