//! CNN workloads as directed acyclic graphs of layers.
//!
//! A [`ModelGraph`] is built from a workload descriptor (see [`descriptor`]),
//! validated on construction, and carries its inferred tensor shapes so the
//! planning and cost code never has to re-derive them.

pub mod descriptor;
mod shape;
mod topo;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use descriptor::{parse_model, Descriptor};
pub use shape::{activation_footprints, infer_shapes, LayerFootprint, LayerShapes};
pub use topo::{topological_sort_random, weakly_connected_components};

/// Index of a layer inside a [`ModelGraph`].
pub type NodeId = usize;
/// Index of an activation edge inside a [`ModelGraph`].
pub type EdgeId = usize;

/// A C×H×W activation tensor shape (batch is always 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        TensorShape {
            channels,
            height,
            width,
        }
    }

    pub fn element_count(&self) -> u64 {
        self.channels as u64 * self.height as u64 * self.width as u64
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    PointwiseConv,
    PoolMax,
    PoolAvg,
    ElementwiseAdd,
    Concat,
    /// Nearest-neighbour upsampling; `stride` holds the scale factor.
    Upsample,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Conv,
        LayerKind::DepthwiseConv,
        LayerKind::PointwiseConv,
        LayerKind::PoolMax,
        LayerKind::PoolAvg,
        LayerKind::ElementwiseAdd,
        LayerKind::Concat,
        LayerKind::Upsample,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "depthwise_conv",
            LayerKind::PointwiseConv => "pointwise_conv",
            LayerKind::PoolMax => "pool_max",
            LayerKind::PoolAvg => "pool_avg",
            LayerKind::ElementwiseAdd => "elementwise_add",
            LayerKind::Concat => "concat",
            LayerKind::Upsample => "upsample",
        }
    }

    pub fn from_name(name: &str) -> Option<LayerKind> {
        LayerKind::ALL.into_iter().find(|k| k.as_str() == name)
    }

    /// Kinds that merge two or more producers.
    pub fn is_join(self) -> bool {
        matches!(self, LayerKind::ElementwiseAdd | LayerKind::Concat)
    }

    /// Kinds that slide a R×S window with a stride over their input.
    pub fn is_windowed(self) -> bool {
        matches!(
            self,
            LayerKind::Conv
                | LayerKind::DepthwiseConv
                | LayerKind::PointwiseConv
                | LayerKind::PoolMax
                | LayerKind::PoolAvg
        )
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Operator parameters of one layer. `kernel`, `stride` and `pad` are
/// `[rows, cols]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub pad: [usize; 2],
    /// Required for `conv` and `pointwise_conv`; derived for every other kind.
    pub out_channels: Option<usize>,
    pub bytes_per_element: usize,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            id: id.into(),
            kind,
            kernel: [1, 1],
            stride: [1, 1],
            pad: [0, 0],
            out_channels: None,
            bytes_per_element: 1,
        }
    }

    pub fn with_kernel(mut self, rows: usize, cols: usize) -> Self {
        self.kernel = [rows, cols];
        self
    }

    pub fn with_stride(mut self, rows: usize, cols: usize) -> Self {
        self.stride = [rows, cols];
        self
    }

    pub fn with_pad(mut self, rows: usize, cols: usize) -> Self {
        self.pad = [rows, cols];
        self
    }

    pub fn with_out_channels(mut self, m: usize) -> Self {
        self.out_channels = Some(m);
        self
    }

    pub fn with_bytes_per_element(mut self, bytes: usize) -> Self {
        self.bytes_per_element = bytes;
        self
    }

    /// Checks the parameter invariants that do not depend on tensor shapes.
    fn check(&self) -> Result<(), String> {
        let positive = |name: &str, v: [usize; 2]| {
            if v[0] == 0 || v[1] == 0 {
                Err(format!("{name} must be positive, got {v:?}"))
            } else {
                Ok(())
            }
        };
        positive("kernel", self.kernel)?;
        positive("stride", self.stride)?;
        if self.bytes_per_element == 0 {
            return Err("bytes_per_element must be positive".into());
        }
        if self.out_channels == Some(0) {
            return Err("out_channels must be positive".into());
        }
        match self.kind {
            LayerKind::Conv if self.out_channels.is_none() => Err("conv requires out_channels".into()),
            LayerKind::PointwiseConv => {
                if self.kernel != [1, 1] {
                    return Err(format!("pointwise_conv requires a 1x1 kernel, got {:?}", self.kernel));
                }
                if self.out_channels.is_none() {
                    return Err("pointwise_conv requires out_channels".into());
                }
                Ok(())
            }
            LayerKind::ElementwiseAdd | LayerKind::Concat | LayerKind::Upsample
                if self.kernel != [1, 1] || self.pad != [0, 0] =>
            {
                Err(format!("{} takes no kernel or padding", self.kind))
            }
            LayerKind::ElementwiseAdd | LayerKind::Concat if self.stride != [1, 1] => {
                Err(format!("{} takes no stride", self.kind))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("layer `{layer}` has unknown kind `{kind}`")]
    UnknownKind { layer: String, kind: String },
    #[error("duplicate layer id `{0}`")]
    DuplicateLayer(String),
    #[error("edge {from} -> {to} references unknown layer `{missing}`")]
    DanglingEdge { from: String, to: String, missing: String },
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: String, to: String },
    #[error("input shape given for unknown layer `{0}`")]
    DanglingInput(String),
    #[error("cycle detected through layers {0:?}")]
    Cycle(Vec<String>),
    #[error("graph is not weakly connected ({0} components)")]
    Disconnected(usize),
    #[error("graph has no layers")]
    Empty,
    #[error("layer `{layer}`: {reason}")]
    InvalidLayer { layer: String, reason: String },
    #[error("shape error at layer `{layer}`: {reason}")]
    Shape { layer: String, reason: String },
}

/// A validated CNN workload graph with inferred shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    name: String,
    layers: Vec<LayerSpec>,
    edges: Vec<(NodeId, NodeId)>,
    inputs: BTreeMap<NodeId, TensorShape>,
    preds: Vec<Vec<(NodeId, EdgeId)>>,
    succs: Vec<Vec<(NodeId, EdgeId)>>,
    topo: Vec<NodeId>,
    shapes: Vec<LayerShapes>,
}

impl ModelGraph {
    /// Builds and validates a graph. Edges are stored sorted by
    /// `(producer, consumer)` index so that edge ids are canonical.
    pub fn new(
        name: impl Into<String>,
        layers: Vec<LayerSpec>,
        edges: Vec<(NodeId, NodeId)>,
        inputs: BTreeMap<NodeId, TensorShape>,
    ) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Empty);
        }
        let n = layers.len();
        let mut seen = std::collections::HashSet::new();
        for l in &layers {
            if !seen.insert(l.id.as_str()) {
                return Err(ModelError::DuplicateLayer(l.id.clone()));
            }
            l.check().map_err(|reason| ModelError::InvalidLayer {
                layer: l.id.clone(),
                reason,
            })?;
        }
        let mut edges = edges;
        for &(a, b) in &edges {
            if a >= n || b >= n {
                let name = |i: usize| layers.get(i).map_or_else(|| format!("#{i}"), |l| l.id.clone());
                return Err(ModelError::DanglingEdge {
                    from: name(a),
                    to: name(b),
                    missing: if a >= n { name(a) } else { name(b) },
                });
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(ModelError::DuplicateEdge {
                from: layers[w[0].0].id.clone(),
                to: layers[w[0].1].id.clone(),
            });
        }
        if let Some(&k) = inputs.keys().find(|&&k| k >= n) {
            return Err(ModelError::DanglingInput(format!("#{k}")));
        }

        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for (e, &(a, b)) in edges.iter().enumerate() {
            succs[a].push((b, e));
            preds[b].push((a, e));
        }

        let mut graph = ModelGraph {
            name: name.into(),
            layers,
            edges,
            inputs,
            preds,
            succs,
            topo: Vec::new(),
            shapes: Vec::new(),
        };
        graph.topo = topo::kahn_order(&graph)
            .map_err(|cycle| ModelError::Cycle(cycle.into_iter().map(|i| graph.layers[i].id.clone()).collect()))?;
        let all: Vec<NodeId> = (0..n).collect();
        let components = weakly_connected_components(&graph, &all);
        if components.len() > 1 {
            return Err(ModelError::Disconnected(components.len()));
        }
        graph.shapes = infer_shapes(&graph)?;
        Ok(graph)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, id: NodeId) -> &LayerSpec {
        &self.layers[id]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.layers.iter().position(|l| l.id == name)
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_index(&self, from: NodeId, to: NodeId) -> Option<EdgeId> {
        self.edges.binary_search(&(from, to)).ok()
    }

    /// Shapes of model inputs, keyed by the source layer that reads them.
    pub fn inputs(&self) -> &BTreeMap<NodeId, TensorShape> {
        &self.inputs
    }

    pub fn predecessors(&self, node: NodeId) -> &[(NodeId, EdgeId)] {
        &self.preds[node]
    }

    pub fn successors(&self, node: NodeId) -> &[(NodeId, EdgeId)] {
        &self.succs[node]
    }

    pub fn is_source(&self, node: NodeId) -> bool {
        self.preds[node].is_empty()
    }

    pub fn is_sink(&self, node: NodeId) -> bool {
        self.succs[node].is_empty()
    }

    /// A deterministic topological order (lowest ready index first).
    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn shapes(&self, node: NodeId) -> &LayerShapes {
        &self.shapes[node]
    }

    pub fn output_shape(&self, node: NodeId) -> TensorShape {
        self.shapes[node].output
    }

    pub fn output_bytes(&self, node: NodeId) -> u64 {
        self.output_shape(node).element_count() * self.layers[node].bytes_per_element as u64
    }

    /// Weight count: M·C·R·S for conv, C·R·S for depthwise, M·C for pointwise.
    pub fn weight_count(&self, node: NodeId) -> u64 {
        let l = &self.layers[node];
        let s = &self.shapes[node];
        let c = s.inputs[0].channels as u64;
        let m = s.output.channels as u64;
        let rs = (l.kernel[0] * l.kernel[1]) as u64;
        match l.kind {
            LayerKind::Conv => m * c * rs,
            LayerKind::DepthwiseConv => c * rs,
            LayerKind::PointwiseConv => m * c,
            _ => 0,
        }
    }

    pub fn weight_bytes(&self, node: NodeId) -> u64 {
        self.weight_count(node) * self.layers[node].bytes_per_element as u64
    }

    /// Number of fused/split boundaries, i.e. the genome length.
    pub fn boundary_count(&self) -> usize {
        self.edges.len()
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn weight_counts_by_kind() {
        let g = chain(
            &[
                (LayerKind::Conv, 3, 1),
                (LayerKind::DepthwiseConv, 3, 1),
                (LayerKind::PointwiseConv, 1, 1),
                (LayerKind::PoolMax, 3, 2),
            ],
            TensorShape::new(4, 8, 8),
            8,
        );
        assert_eq!(g.weight_count(0), 8 * 4 * 9);
        assert_eq!(g.weight_count(1), 8 * 9);
        assert_eq!(g.weight_count(2), 8 * 8);
        assert_eq!(g.weight_count(3), 0);
    }

    #[test]
    fn edges_are_canonically_sorted() {
        let g = skip_block(8, 4);
        assert_eq!(g.edges(), &[(0, 1), (0, 3), (1, 2), (2, 3)]);
        assert_eq!(g.edge_index(0, 3), Some(1));
        assert_eq!(g.edge_index(3, 0), None);
    }

    #[test]
    fn pointwise_rejects_wide_kernel() {
        let layers = vec![LayerSpec::new("p", LayerKind::PointwiseConv)
            .with_kernel(3, 3)
            .with_out_channels(4)];
        let err = ModelGraph::new("x", layers, vec![], BTreeMap::from([(0, TensorShape::new(1, 4, 4))])).unwrap_err();
        assert!(matches!(err, ModelError::InvalidLayer { .. }));
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let c = |id: &str| LayerSpec::new(id, LayerKind::PointwiseConv).with_out_channels(2);
        let inputs = BTreeMap::from([(0, TensorShape::new(1, 4, 4)), (1, TensorShape::new(1, 4, 4))]);
        let err = ModelGraph::new("x", vec![c("a"), c("b")], vec![], inputs).unwrap_err();
        assert_eq!(err, ModelError::Disconnected(2));
    }
}
