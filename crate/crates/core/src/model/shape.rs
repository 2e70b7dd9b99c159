use serde::{Deserialize, Serialize};

use super::{LayerKind, ModelError, ModelGraph, NodeId, TensorShape};

/// Input tensor shapes (one per producer, in edge order; the model input for
/// sources) and the output shape of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShapes {
    pub inputs: Vec<TensorShape>,
    pub output: TensorShape,
}

/// Output extent of a sliding window along one axis:
/// `floor((extent + 2·pad − kernel) / stride) + 1`.
pub(crate) fn window_output_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Infers every layer's input and output shapes, walking the graph in
/// topological order.
pub fn infer_shapes(graph: &ModelGraph) -> Result<Vec<LayerShapes>, ModelError> {
    let mut out: Vec<Option<LayerShapes>> = vec![None; graph.len()];
    for &node in graph.topo_order() {
        let layer = graph.layer(node);
        let err = |reason: String| ModelError::Shape {
            layer: layer.id.clone(),
            reason,
        };
        let preds = graph.predecessors(node);
        let inputs: Vec<TensorShape> = if preds.is_empty() {
            let shape = graph
                .inputs()
                .get(&node)
                .copied()
                .ok_or_else(|| err("source layer has no input shape".into()))?;
            if shape.channels == 0 || shape.height == 0 || shape.width == 0 {
                return Err(err(format!("input shape {shape} has a zero dimension")));
            }
            vec![shape]
        } else {
            if graph.inputs().contains_key(&node) {
                return Err(err("input shape given for a layer with producers".into()));
            }
            preds
                .iter()
                .map(|&(p, _)| out[p].as_ref().expect("topological order").output)
                .collect()
        };

        if layer.kind.is_join() {
            if inputs.len() < 2 {
                return Err(err(format!("{} needs at least 2 producers", layer.kind)));
            }
        } else if inputs.len() != 1 {
            return Err(err(format!(
                "{} takes exactly one producer, got {}",
                layer.kind,
                inputs.len()
            )));
        }
        let first = inputs[0];

        let output = match layer.kind {
            kind if kind.is_windowed() => {
                let p = window_output_extent(first.height, layer.kernel[0], layer.stride[0], layer.pad[0]);
                let q = window_output_extent(first.width, layer.kernel[1], layer.stride[1], layer.pad[1]);
                let (Some(p), Some(q)) = (p, q) else {
                    return Err(err(format!(
                        "kernel {:?} with pad {:?} exceeds input {first}",
                        layer.kernel, layer.pad
                    )));
                };
                let m = match kind {
                    LayerKind::Conv | LayerKind::PointwiseConv => layer.out_channels.expect("checked"),
                    _ => first.channels,
                };
                TensorShape::new(m, p, q)
            }
            LayerKind::Upsample => TensorShape::new(
                first.channels,
                first.height * layer.stride[0],
                first.width * layer.stride[1],
            ),
            LayerKind::ElementwiseAdd => {
                if let Some(bad) = inputs.iter().find(|s| **s != first) {
                    return Err(err(format!("operand shapes differ: {first} vs {bad}")));
                }
                first
            }
            LayerKind::Concat => {
                if let Some(bad) = inputs
                    .iter()
                    .find(|s| (s.height, s.width) != (first.height, first.width))
                {
                    return Err(err(format!("spatial dims differ: {first} vs {bad}")));
                }
                TensorShape::new(inputs.iter().map(|s| s.channels).sum(), first.height, first.width)
            }
            _ => unreachable!(),
        };

        if let Some(m) = layer.out_channels {
            if m != output.channels {
                return Err(err(format!(
                    "out_channels {m} disagrees with inferred {}",
                    output.channels
                )));
            }
        }
        out[node] = Some(LayerShapes { inputs, output });
    }
    Ok(out.into_iter().map(|s| s.expect("every node visited")).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFootprint {
    pub node: NodeId,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

/// Per-layer activation footprint: bytes of all input tensors and of the
/// output tensor.
pub fn activation_footprints(graph: &ModelGraph) -> Vec<LayerFootprint> {
    (0..graph.len())
        .map(|node| {
            let preds = graph.predecessors(node);
            let input_bytes = if preds.is_empty() {
                graph.shapes(node).inputs[0].element_count() * graph.layer(node).bytes_per_element as u64
            } else {
                preds.iter().map(|&(p, _)| graph.output_bytes(p)).sum()
            };
            LayerFootprint {
                node,
                input_bytes,
                output_bytes: graph.output_bytes(node),
            }
        })
        .collect()
}
