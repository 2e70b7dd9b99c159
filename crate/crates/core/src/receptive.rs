//! Receptive-field backtracing and on-chip footprints of fused groups.
//!
//! A group is executed in passes: each pass produces one tile of every sink
//! layer, and the window each upstream layer must hold is found by walking
//! the group backwards, growing the window as `(w − 1)·stride + kernel`.
//! Rows that adjacent passes share are cached on chip, so no intermediate
//! element is ever computed twice.
//!
//! Two views are provided. [`backtrace_window`] gives the largest window
//! size of each layer over all tile placements, which is what capacity planning
//! needs. [`backtrace_region`] follows one positioned output region through
//! the group and returns the exact index sets touched at every layer,
//! including clipping at the feature-map borders.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchConfig;
use crate::group::{Group, TensorRef};
use crate::model::{EdgeId, LayerKind, LayerSpec, ModelGraph, NodeId, TensorShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tile {
    pub height: usize,
    pub width: usize,
}

impl Tile {
    pub fn new(height: usize, width: usize) -> Self {
        Tile { height, width }
    }

    pub fn area(&self) -> u64 {
        self.height as u64 * self.width as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Axis {
    Rows,
    Cols,
}

impl Axis {
    fn pick(self, v: [usize; 2]) -> usize {
        match self {
            Axis::Rows => v[0],
            Axis::Cols => v[1],
        }
    }

    fn extent(self, s: &TensorShape) -> usize {
        match self {
            Axis::Rows => s.height,
            Axis::Cols => s.width,
        }
    }
}

/// How one layer maps output indices back to input indices along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AxisMap {
    Window { kernel: usize, stride: usize, pad: usize },
    Upsample { factor: usize },
    Identity,
}

impl AxisMap {
    pub(crate) fn of(layer: &LayerSpec, axis: Axis) -> Self {
        match layer.kind {
            LayerKind::ElementwiseAdd | LayerKind::Concat => AxisMap::Identity,
            LayerKind::Upsample => AxisMap::Upsample {
                factor: axis.pick(layer.stride),
            },
            _ => AxisMap::Window {
                kernel: axis.pick(layer.kernel),
                stride: axis.pick(layer.stride),
                pad: axis.pick(layer.pad),
            },
        }
    }

    /// Smallest and largest input index read by outputs `lo..=hi`, clipped
    /// to `0..extent`. Every map is monotone, so this is the hull of the
    /// exact input set.
    fn hull(self, lo: usize, hi: usize, extent: usize) -> (usize, usize) {
        match self {
            AxisMap::Window { kernel, stride, pad } => {
                let a = (lo * stride).saturating_sub(pad);
                let b = (hi * stride + kernel - 1).saturating_sub(pad).min(extent - 1);
                (a.min(b), b)
            }
            AxisMap::Upsample { factor } => (lo / factor, hi / factor),
            AxisMap::Identity => (lo, hi),
        }
    }

    /// Input rows shared by vertically adjacent passes.
    fn overlap(self) -> usize {
        match self {
            AxisMap::Window { kernel, stride, .. } => kernel.saturating_sub(stride),
            // A pass boundary can split the rows replicated from one input row.
            AxisMap::Upsample { factor } => usize::from(factor > 1),
            AxisMap::Identity => 0,
        }
    }

    /// Marks in `input` every index that some index of `output` reads.
    fn mark(self, output: &AxisSet, input: &mut AxisSet) {
        let extent = input.len() as isize;
        for o in output.iter() {
            match self {
                AxisMap::Window { kernel, stride, pad } => {
                    let base = (o * stride) as isize - pad as isize;
                    let lo = base.max(0);
                    let hi = (base + kernel as isize).min(extent);
                    for i in lo..hi {
                        input.insert(i as usize);
                    }
                }
                AxisMap::Upsample { factor } => input.insert(o / factor),
                AxisMap::Identity => input.insert(o),
            }
        }
    }
}

/// A subset of indices `0..len` along one axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AxisSet(Vec<bool>);

impl AxisSet {
    pub fn empty(len: usize) -> Self {
        AxisSet(vec![false; len])
    }

    pub fn full(len: usize) -> Self {
        AxisSet(vec![true; len])
    }

    /// `range` clipped to `0..len`.
    pub fn from_range(len: usize, range: Range<usize>) -> Self {
        let mut s = Self::empty(len);
        for i in range.start..range.end.min(len) {
            s.0[i] = true;
        }
        s
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn insert(&mut self, i: usize) {
        self.0[i] = true;
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.get(i).copied().unwrap_or(false)
    }

    pub fn union_with(&mut self, other: &AxisSet) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= *b;
        }
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// Smallest range containing every member.
    pub fn hull(&self) -> Range<usize> {
        let mut it = self.iter();
        match it.next() {
            None => 0..0,
            Some(first) => first..it.last().unwrap_or(first) + 1,
        }
    }
}

/// Row and column index sets; the touched region is their product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Footprint2d {
    pub rows: AxisSet,
    pub cols: AxisSet,
}

impl Footprint2d {
    pub fn element_count(&self) -> u64 {
        self.rows.count() as u64 * self.cols.count() as u64
    }

    fn union_with(&mut self, other: &Footprint2d) {
        self.rows.union_with(&other.rows);
        self.cols.union_with(&other.cols);
    }
}

/// Output indices each member must produce, and input indices read from
/// each external tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demand {
    pub layers: BTreeMap<NodeId, Footprint2d>,
    pub external: BTreeMap<TensorRef, Footprint2d>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("group is empty")]
    EmptyGroup,
    #[error("group references layer #{0} outside the graph")]
    UnknownNode(NodeId),
    #[error("group is not convex: a path leaves layer #{0} and re-enters at layer #{1}")]
    NotConvex(NodeId, NodeId),
    #[error("sink tile must be at least 1x1")]
    ZeroTile,
    #[error("tile plan does not match the group")]
    PlanMismatch,
}

fn check_group(graph: &ModelGraph, group: &Group) -> Result<(), PlanError> {
    if group.is_empty() {
        return Err(PlanError::EmptyGroup);
    }
    if let Some(&n) = group.nodes().iter().find(|&&n| n >= graph.len()) {
        return Err(PlanError::UnknownNode(n));
    }
    group.check_convex(graph).map_err(|(a, b)| PlanError::NotConvex(a, b))
}

/// Walks the group backwards from `seeds` (output index sets of some
/// members), accumulating what every member and external tensor must
/// supply.
///
/// Demands from several consumers are merged per axis, so the result is the
/// product of the per-axis unions. That is exact whenever one consumer's
/// demand contains the others', which holds for same-padded layers.
pub(crate) fn propagate_demand(graph: &ModelGraph, group: &Group, mut seeds: BTreeMap<NodeId, Footprint2d>) -> Demand {
    let mut external: BTreeMap<TensorRef, Footprint2d> = BTreeMap::new();
    let mut layers = BTreeMap::new();
    for node in group.ordered(graph).into_iter().rev() {
        let out = &graph.shapes(node).output;
        let produced = seeds.remove(&node).unwrap_or_else(|| Footprint2d {
            rows: AxisSet::empty(out.height),
            cols: AxisSet::empty(out.width),
        });
        let layer = graph.layer(node);
        let inputs = &graph.shapes(node).inputs;
        let targets: Vec<(TensorRef, TensorShape)> = if graph.is_source(node) {
            vec![(TensorRef::ModelInput(node), inputs[0])]
        } else {
            graph
                .predecessors(node)
                .iter()
                .zip(inputs)
                .map(|(&(p, _), &s)| (TensorRef::Output(p), s))
                .collect()
        };
        for (tensor, shape) in targets {
            let mut need = Footprint2d {
                rows: AxisSet::empty(shape.height),
                cols: AxisSet::empty(shape.width),
            };
            AxisMap::of(layer, Axis::Rows).mark(&produced.rows, &mut need.rows);
            AxisMap::of(layer, Axis::Cols).mark(&produced.cols, &mut need.cols);
            let slot = match tensor {
                TensorRef::Output(p) if group.contains(p) => seeds.get_mut(&p),
                _ => external.get_mut(&tensor),
            };
            match (slot, tensor) {
                (Some(have), _) => have.union_with(&need),
                (None, TensorRef::Output(p)) if group.contains(p) => {
                    seeds.insert(p, need);
                }
                (None, _) => {
                    external.insert(tensor, need);
                }
            }
        }
        layers.insert(node, produced);
    }
    Demand { layers, external }
}

/// Exact index sets touched when every sink of the group produces the
/// output region `rows × cols` (clipped to each sink's extent).
pub fn backtrace_region(
    graph: &ModelGraph,
    group: &Group,
    rows: Range<usize>,
    cols: Range<usize>,
) -> Result<Demand, PlanError> {
    check_group(graph, group)?;
    let seeds = group
        .sinks(graph)
        .into_iter()
        .map(|s| {
            let out = graph.output_shape(s);
            let fp = Footprint2d {
                rows: AxisSet::from_range(out.height, rows.clone()),
                cols: AxisSet::from_range(out.width, cols.clone()),
            };
            (s, fp)
        })
        .collect();
    Ok(propagate_demand(graph, group, seeds))
}

/// Window sizes needed for one pass, per member output and per external
/// input tensor, for a given sink tile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub sink_tile: Tile,
    /// Output window each member produces per pass.
    pub windows: BTreeMap<NodeId, Tile>,
    /// Window read from each external tensor per pass.
    pub input_windows: BTreeMap<TensorRef, Tile>,
    /// Rows of the producer's output retained across passes, per internal edge.
    pub cache_rows: BTreeMap<EdgeId, usize>,
    /// Width of the cached rows: the producer's window width for full-row tiles.
    pub cache_width: BTreeMap<NodeId, usize>,
    /// Tiles needed to cover the largest sink.
    pub passes: u64,
}

struct AxisWindows {
    layers: BTreeMap<NodeId, usize>,
    external: BTreeMap<TensorRef, usize>,
}

fn merge(slot: &mut Option<(usize, usize)>, (a, b): (usize, usize)) {
    *slot = Some(match *slot {
        Some((lo, hi)) => (lo.min(a), hi.max(b)),
        None => (a, b),
    });
}

/// Largest extent along one axis that any placement of the sink tile
/// needs, for each member and external tensor. A longer tile contains
/// every shorter one, so windows grow monotonically with the tile.
fn axis_windows(graph: &ModelGraph, group: &Group, axis: Axis, tile: usize) -> AxisWindows {
    let order: Vec<NodeId> = group.ordered(graph).into_iter().rev().collect();
    let sinks: Vec<(NodeId, usize)> = group
        .sinks(graph)
        .into_iter()
        .map(|s| (s, axis.extent(&graph.output_shape(s))))
        .collect();
    let longest = sinks.iter().map(|&(_, e)| e).max().unwrap_or(1);
    let tile = tile.min(longest);
    let mut layers: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut external: BTreeMap<TensorRef, usize> = BTreeMap::new();
    for start in 0..=longest - tile {
        let mut need: BTreeMap<NodeId, Option<(usize, usize)>> = BTreeMap::new();
        let mut reads: BTreeMap<TensorRef, Option<(usize, usize)>> = BTreeMap::new();
        for &(s, extent) in &sinks {
            if start < extent {
                need.insert(s, Some((start, (start + tile).min(extent) - 1)));
            }
        }
        for &node in &order {
            let Some(Some((lo, hi))) = need.get(&node).copied() else {
                continue;
            };
            let w = layers.entry(node).or_insert(0);
            *w = (*w).max(hi - lo + 1);
            let map = AxisMap::of(graph.layer(node), axis);
            let inputs = &graph.shapes(node).inputs;
            let targets: Vec<(TensorRef, usize)> = if graph.is_source(node) {
                vec![(TensorRef::ModelInput(node), axis.extent(&inputs[0]))]
            } else {
                graph
                    .predecessors(node)
                    .iter()
                    .zip(inputs)
                    .map(|(&(p, _), s)| (TensorRef::Output(p), axis.extent(s)))
                    .collect()
            };
            for (tensor, in_extent) in targets {
                let span = map.hull(lo, hi, in_extent);
                match tensor {
                    TensorRef::Output(p) if group.contains(p) => merge(need.entry(p).or_insert(None), span),
                    _ => merge(reads.entry(tensor).or_insert(None), span),
                }
            }
        }
        for (tensor, span) in reads {
            if let Some((a, b)) = span {
                let w = external.entry(tensor).or_insert(0);
                *w = (*w).max(b - a + 1);
            }
        }
    }
    AxisWindows { layers, external }
}

/// Backtraces window sizes through the group for a sink tile.
///
/// Each window is the largest extent a member (or external tensor) covers
/// for any placement of the sink tile: `(w − 1)·stride + kernel` in the
/// interior, less where every placement clips at a border.
/// Sinks use `sink_tile` clamped to their own extent.
pub fn backtrace_window(graph: &ModelGraph, group: &Group, sink_tile: Tile) -> Result<TilePlan, PlanError> {
    check_group(graph, group)?;
    if sink_tile.height == 0 || sink_tile.width == 0 {
        return Err(PlanError::ZeroTile);
    }
    let rows = axis_windows(graph, group, Axis::Rows, sink_tile.height);
    let cols = axis_windows(graph, group, Axis::Cols, sink_tile.width);
    let full_cols = axis_windows(graph, group, Axis::Cols, usize::MAX);

    let mut vertical = 1u64;
    let mut passes = 1u64;
    for s in group.sinks(graph) {
        let out = graph.output_shape(s);
        let v = out.height.div_ceil(sink_tile.height.min(out.height)) as u64;
        let h = out.width.div_ceil(sink_tile.width.min(out.width)) as u64;
        vertical = vertical.max(v);
        passes = passes.max(v * h);
    }

    let windows: BTreeMap<NodeId, Tile> = rows
        .layers
        .iter()
        .map(|(&n, &h)| (n, Tile::new(h, cols.layers[&n])))
        .collect();
    let input_windows = rows
        .external
        .iter()
        .map(|(&t, &h)| (t, Tile::new(h, cols.external[&t])))
        .collect();
    let cache_rows = group
        .internal_edges(graph)
        .map(|e| {
            let (p, c) = graph.edges()[e];
            let rows = if vertical > 1 {
                AxisMap::of(graph.layer(c), Axis::Rows)
                    .overlap()
                    .min(windows[&p].height)
            } else {
                0
            };
            (e, rows)
        })
        .collect();
    Ok(TilePlan {
        sink_tile,
        windows,
        input_windows,
        cache_rows,
        cache_width: full_cols.layers,
        passes,
    })
}

/// On-chip activation storage for one pass, split by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FootprintReport {
    pub input_bytes: u64,
    /// Rows retained across passes.
    pub cached_bytes: u64,
    /// Intermediate values discarded once the pass has consumed them.
    pub transient_bytes: u64,
    pub output_bytes: u64,
    pub total_bytes: u64,
}

/// Sizes the activation-buffer footprint of one pass under `plan`.
///
/// For each producer with in-group consumers, the rows its consumers will
/// revisit in the next pass (`(kernel − stride)⁺`, largest over consumers)
/// are cached at full row width; the rest of its window is transient.
/// Inputs count their whole window; outputs count the tiles of members
/// without in-group consumers.
pub fn intermediate_footprint(
    graph: &ModelGraph,
    group: &Group,
    plan: &TilePlan,
) -> Result<FootprintReport, PlanError> {
    if plan.windows.len() != group.len() || group.nodes().iter().any(|n| !plan.windows.contains_key(n)) {
        return Err(PlanError::PlanMismatch);
    }
    let bytes = |node: NodeId| graph.layer(node).bytes_per_element as u64;
    let mut report = FootprintReport::default();

    for (&tensor, win) in &plan.input_windows {
        let (channels, bpe) = match tensor {
            TensorRef::ModelInput(n) => (graph.shapes(n).inputs[0].channels, bytes(n)),
            TensorRef::Output(p) => (graph.output_shape(p).channels, bytes(p)),
        };
        report.input_bytes += win.area() * channels as u64 * bpe;
    }

    let mut retained: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (&e, &rows) in &plan.cache_rows {
        let (p, c) = *graph.edges().get(e).ok_or(PlanError::PlanMismatch)?;
        if !group.contains(p) || !group.contains(c) {
            return Err(PlanError::PlanMismatch);
        }
        let r = retained.entry(p).or_insert(0);
        *r = (*r).max(rows);
    }

    for &node in group.nodes() {
        let win = plan.windows[&node];
        let per_px = graph.output_shape(node).channels as u64 * bytes(node);
        let has_internal_consumer = graph.successors(node).iter().any(|&(s, _)| group.contains(s));
        if has_internal_consumer {
            let rows = retained.get(&node).copied().unwrap_or(0);
            let width = plan.cache_width.get(&node).copied().ok_or(PlanError::PlanMismatch)?;
            report.cached_bytes += (rows * width) as u64 * per_px;
            report.transient_bytes += (win.height.saturating_sub(rows) * win.width) as u64 * per_px;
        } else {
            report.output_bytes += win.area() * per_px;
        }
    }
    report.total_bytes = report.input_bytes + report.cached_bytes + report.transient_bytes + report.output_bytes;
    Ok(report)
}

/// Sink tiles in search order: widths `1..=Q` of a single row, then heights
/// `2..=P` of full rows. Footprints are non-decreasing along this order.
pub fn tile_candidates(graph: &ModelGraph, group: &Group) -> Vec<Tile> {
    let (p, q) = group
        .sinks(graph)
        .iter()
        .map(|&s| graph.output_shape(s))
        .fold((1, 1), |(p, q), s| (p.max(s.height), q.max(s.width)));
    (1..=q)
        .map(|w| Tile::new(1, w))
        .chain((2..=p).map(|h| Tile::new(h, q)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TileSearch {
    Fits {
        plan: TilePlan,
        footprint: FootprintReport,
    },
    /// Even a 1×1 sink tile overflows the activation buffer.
    Infeasible {
        required_bytes: u64,
        capacity_bytes: u64,
    },
}

/// Largest sink tile whose footprint fits the activation buffer.
pub fn max_tile_for_capacity(graph: &ModelGraph, group: &Group, arch: &ArchConfig) -> Result<TileSearch, PlanError> {
    let candidates = tile_candidates(graph, group);
    let capacity = arch.activation_buffer_bytes;
    let eval = |t: Tile| -> Result<(TilePlan, FootprintReport), PlanError> {
        let plan = backtrace_window(graph, group, t)?;
        let fp = intermediate_footprint(graph, group, &plan)?;
        Ok((plan, fp))
    };
    let smallest = eval(candidates[0])?;
    if smallest.1.total_bytes > capacity {
        return Ok(TileSearch::Infeasible {
            required_bytes: smallest.1.total_bytes,
            capacity_bytes: capacity,
        });
    }
    // Invariant: candidates[lo] fits; candidates[hi] (if in range) does not.
    let (mut lo, mut hi) = (0usize, candidates.len());
    let mut best = smallest;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let attempt = eval(candidates[mid])?;
        if attempt.1.total_bytes <= capacity {
            lo = mid;
            best = attempt;
        } else {
            hi = mid;
        }
    }
    Ok(TileSearch::Fits {
        plan: best.0,
        footprint: best.1,
    })
}
