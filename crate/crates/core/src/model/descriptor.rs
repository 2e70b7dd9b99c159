//! JSON workload descriptor.
//!
//! ```json
//! {
//!   "name": "tiny",
//!   "inputs": { "c1": [3, 32, 32] },
//!   "layers": [
//!     { "id": "c1", "kind": "conv", "kernel": [3, 3], "stride": [1, 1], "pad": [1, 1], "out_channels": 16 },
//!     { "id": "p1", "kind": "pointwise_conv", "out_channels": 32, "bytes_per_element": 2 }
//!   ],
//!   "edges": [["c1", "p1"]]
//! }
//! ```
//!
//! `kernel` and `stride` default to `[1, 1]`, `pad` to `[0, 0]` and
//! `bytes_per_element` to 1. `upsample` layers use `stride` as the scale
//! factor.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{LayerKind, LayerSpec, ModelError, ModelGraph, NodeId, TensorShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub name: String,
    pub inputs: BTreeMap<String, [usize; 3]>,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub edges: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub id: String,
    pub kind: String,
    #[serde(default = "ones")]
    pub kernel: [usize; 2],
    #[serde(default = "ones")]
    pub stride: [usize; 2],
    #[serde(default)]
    pub pad: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes_per_element: Option<usize>,
}

fn ones() -> [usize; 2] {
    [1, 1]
}

/// Parses and validates a workload descriptor.
pub fn parse_model(text: &str) -> Result<ModelGraph, ModelError> {
    let desc: Descriptor = serde_json::from_str(text).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    desc.build()
}

impl Descriptor {
    pub fn build(&self) -> Result<ModelGraph, ModelError> {
        let mut index: HashMap<&str, NodeId> = HashMap::new();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, entry) in self.layers.iter().enumerate() {
            let kind = LayerKind::from_name(&entry.kind).ok_or_else(|| ModelError::UnknownKind {
                layer: entry.id.clone(),
                kind: entry.kind.clone(),
            })?;
            if index.insert(entry.id.as_str(), i).is_some() {
                return Err(ModelError::DuplicateLayer(entry.id.clone()));
            }
            layers.push(LayerSpec {
                id: entry.id.clone(),
                kind,
                kernel: entry.kernel,
                stride: entry.stride,
                pad: entry.pad,
                out_channels: entry.out_channels,
                bytes_per_element: entry.bytes_per_element.unwrap_or(1),
            });
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for [from, to] in &self.edges {
            let lookup = |name: &String| {
                index
                    .get(name.as_str())
                    .copied()
                    .ok_or_else(|| ModelError::DanglingEdge {
                        from: from.clone(),
                        to: to.clone(),
                        missing: name.clone(),
                    })
            };
            edges.push((lookup(from)?, lookup(to)?));
        }
        let mut inputs = BTreeMap::new();
        for (name, &[c, h, w]) in &self.inputs {
            let node = *index
                .get(name.as_str())
                .ok_or_else(|| ModelError::DanglingInput(name.clone()))?;
            inputs.insert(node, TensorShape::new(c, h, w));
        }
        ModelGraph::new(self.name.clone(), layers, edges, inputs)
    }
}

impl ModelGraph {
    pub fn to_descriptor(&self) -> Descriptor {
        Descriptor {
            name: self.name().to_string(),
            inputs: self
                .inputs()
                .iter()
                .map(|(&n, s)| (self.layer(n).id.clone(), [s.channels, s.height, s.width]))
                .collect(),
            layers: self
                .layers()
                .iter()
                .map(|l| LayerEntry {
                    id: l.id.clone(),
                    kind: l.kind.as_str().to_string(),
                    kernel: l.kernel,
                    stride: l.stride,
                    pad: l.pad,
                    out_channels: l.out_channels,
                    bytes_per_element: Some(l.bytes_per_element),
                })
                .collect(),
            edges: self
                .edges()
                .iter()
                .map(|&(a, b)| [self.layer(a).id.clone(), self.layer(b).id.clone()])
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_descriptor()).expect("descriptor serializes")
    }
}
