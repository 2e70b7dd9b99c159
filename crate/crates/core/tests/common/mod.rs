//! Reference implementations used as test oracles. They work element by
//! element on explicit 2-D grids and share no code with the planner.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use layerfuse_core::{
    ArchConfig, FusionGenome, Group, LayerKind, LayerSpec, ModelGraph, NodeId, TensorRef, TensorShape, Tile,
};

/// Set of (row, col) positions of one feature map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    cells: Vec<bool>,
}

impl Grid {
    pub fn empty(height: usize, width: usize) -> Self {
        Grid {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    pub fn rect(height: usize, width: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Self {
        let mut g = Self::empty(height, width);
        for r in rows.start..rows.end.min(height) {
            for c in cols.start..cols.end.min(width) {
                g.set(r, c);
            }
        }
        g
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::rect(height, width, 0..height, 0..width)
    }

    pub fn set(&mut self, r: usize, c: usize) {
        self.cells[r * self.width + c] = true;
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.width + c]
    }

    pub fn count(&self) -> u64 {
        self.cells.iter().filter(|&&b| b).count() as u64
    }

    pub fn union_with(&mut self, other: &Grid) {
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= b;
        }
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// Height and width of the bounding box; (0, 0) when empty.
    pub fn bbox(&self) -> (usize, usize) {
        let mut rows = (usize::MAX, 0);
        let mut cols = (usize::MAX, 0);
        let mut any = false;
        for (r, c) in self.positions() {
            any = true;
            rows = (rows.0.min(r), rows.1.max(r));
            cols = (cols.0.min(c), cols.1.max(c));
        }
        if any {
            (rows.1 - rows.0 + 1, cols.1 - cols.0 + 1)
        } else {
            (0, 0)
        }
    }
}

/// Input positions read to compute output position (i, j) of `layer`.
fn taps(layer: &LayerSpec, input: TensorShape, i: usize, j: usize, out: &mut Vec<(usize, usize)>) {
    out.clear();
    match layer.kind {
        LayerKind::ElementwiseAdd | LayerKind::Concat => out.push((i, j)),
        LayerKind::Upsample => out.push((i / layer.stride[0], j / layer.stride[1])),
        _ => {
            for r in 0..layer.kernel[0] {
                for c in 0..layer.kernel[1] {
                    let y = (i * layer.stride[0] + r) as isize - layer.pad[0] as isize;
                    let x = (j * layer.stride[1] + c) as isize - layer.pad[1] as isize;
                    if y >= 0 && x >= 0 && (y as usize) < input.height && (x as usize) < input.width {
                        out.push((y as usize, x as usize));
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    /// Output positions each member computes.
    pub layers: BTreeMap<NodeId, Grid>,
    /// Positions read from each tensor produced outside the member set.
    pub external: BTreeMap<TensorRef, Grid>,
}

/// Direct dependency tracing: starting from `seeds` (output positions of
/// some members), marks every position of every tensor that contributes.
pub fn trace(graph: &ModelGraph, members: &BTreeSet<NodeId>, seeds: BTreeMap<NodeId, Grid>) -> Trace {
    let mut need: BTreeMap<NodeId, Grid> = seeds;
    let mut external: BTreeMap<TensorRef, Grid> = BTreeMap::new();
    let mut layers = BTreeMap::new();
    let mut buf = Vec::new();
    for &n in graph.topo_order().iter().rev().filter(|n| members.contains(n)) {
        let out = graph.output_shape(n);
        let produced = need.remove(&n).unwrap_or_else(|| Grid::empty(out.height, out.width));
        let inputs = graph.shapes(n).inputs.clone();
        let sources: Vec<TensorRef> = if graph.is_source(n) {
            vec![TensorRef::ModelInput(n)]
        } else {
            graph
                .predecessors(n)
                .iter()
                .map(|&(p, _)| TensorRef::Output(p))
                .collect()
        };
        for (tensor, shape) in sources.into_iter().zip(inputs) {
            let mut grid = Grid::empty(shape.height, shape.width);
            for (i, j) in produced.positions() {
                taps(graph.layer(n), shape, i, j, &mut buf);
                for &(y, x) in &buf {
                    grid.set(y, x);
                }
            }
            let slot = match tensor {
                TensorRef::Output(p) if members.contains(&p) => need.entry(p),
                _ => {
                    let e = external
                        .entry(tensor)
                        .or_insert_with(|| Grid::empty(shape.height, shape.width));
                    e.union_with(&grid);
                    continue;
                }
            };
            slot.and_modify(|g| g.union_with(&grid)).or_insert(grid);
        }
        layers.insert(n, produced);
    }
    Trace { layers, external }
}

/// Members with no consumer inside the set.
pub fn sinks(graph: &ModelGraph, members: &BTreeSet<NodeId>) -> Vec<NodeId> {
    members
        .iter()
        .copied()
        .filter(|&n| graph.successors(n).iter().all(|(s, _)| !members.contains(s)))
        .collect()
}

/// Positions touched when every sink of the set produces `rows × cols`.
pub fn trace_region(
    graph: &ModelGraph,
    members: &BTreeSet<NodeId>,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Trace {
    let seeds = sinks(graph, members)
        .into_iter()
        .map(|s| {
            let o = graph.output_shape(s);
            (s, Grid::rect(o.height, o.width, rows.clone(), cols.clone()))
        })
        .collect();
    trace(graph, members, seeds)
}

/// Weight elements of one layer, counted from its kernel and shapes.
pub fn weight_elements(graph: &ModelGraph, n: NodeId) -> u64 {
    let l = graph.layer(n);
    let c = graph.shapes(n).inputs[0].channels as u64;
    let m = graph.output_shape(n).channels as u64;
    let rs = (l.kernel[0] * l.kernel[1]) as u64;
    match l.kind {
        LayerKind::Conv | LayerKind::PointwiseConv => m * c * rs,
        LayerKind::DepthwiseConv => c * rs,
        _ => 0,
    }
}

/// Groups of a genome by plain union of fused endpoints, or `None` when
/// some group is entered again after a path leaves it.
pub fn oracle_groups(graph: &ModelGraph, genome: &FusionGenome) -> Option<Vec<BTreeSet<NodeId>>> {
    let n = graph.len();
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for e in genome.fused_edges() {
            let (a, b) = graph.edges()[e];
            let m = label[a].min(label[b]);
            if label[a] != m || label[b] != m {
                label[a] = m;
                label[b] = m;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<NodeId>> = BTreeMap::new();
    for (v, &l) in label.iter().enumerate() {
        groups.entry(l).or_default().insert(v);
    }
    // Convexity: no path leaving a group may come back to it.
    for g in groups.values() {
        let mut stack: Vec<NodeId> = g
            .iter()
            .flat_map(|&v| graph.successors(v).iter().map(|&(s, _)| s))
            .filter(|s| !g.contains(s))
            .collect();
        let mut seen = BTreeSet::new();
        while let Some(v) = stack.pop() {
            if g.contains(&v) {
                return None;
            }
            if seen.insert(v) {
                stack.extend(graph.successors(v).iter().map(|&(s, _)| s));
            }
        }
    }
    Some(groups.into_values().collect())
}

/// DRAM bytes by class for one schedule, counted element by element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OracleDram {
    pub input_acts_read: u64,
    pub output_acts_written: u64,
    pub spill_written: u64,
    pub spill_read: u64,
    pub weights_read: u64,
}

/// Element-counting DRAM model. Each group computes every output of its
/// exported members once; the inputs it reads are counted once per group.
/// `tiles` gives each group's sink tile (needed only for weight reloads).
pub fn dram_oracle(graph: &ModelGraph, groups: &[BTreeSet<NodeId>], tiles: &[Tile], arch: &ArchConfig) -> OracleDram {
    let mut d = OracleDram::default();
    for (members, tile) in groups.iter().zip(tiles) {
        let mut seeds = BTreeMap::new();
        for &n in members {
            let o = graph.output_shape(n);
            let bytes = o.height as u64 * o.width as u64 * o.channels as u64 * graph.layer(n).bytes_per_element as u64;
            let external_consumer = graph.successors(n).iter().any(|(s, _)| !members.contains(s));
            if graph.successors(n).is_empty() {
                d.output_acts_written += bytes;
            } else if external_consumer {
                d.spill_written += bytes;
            }
            if graph.successors(n).is_empty() || external_consumer {
                seeds.insert(n, Grid::full(o.height, o.width));
            }
        }
        let t = trace(graph, members, seeds);
        for (tensor, grid) in &t.external {
            let (channels, bpe, is_input) = match *tensor {
                TensorRef::ModelInput(n) => (
                    graph.shapes(n).inputs[0].channels,
                    graph.layer(n).bytes_per_element,
                    true,
                ),
                TensorRef::Output(p) => (graph.output_shape(p).channels, graph.layer(p).bytes_per_element, false),
            };
            let bytes = grid.count() * channels as u64 * bpe as u64;
            if is_input {
                d.input_acts_read += bytes;
            } else {
                d.spill_read += bytes;
            }
        }
        let weights: u64 = members
            .iter()
            .map(|&n| weight_elements(graph, n) * graph.layer(n).bytes_per_element as u64)
            .sum();
        let passes = sinks(graph, members)
            .iter()
            .map(|&s| {
                let o = graph.output_shape(s);
                (o.height.div_ceil(tile.height.min(o.height)) * o.width.div_ceil(tile.width.min(o.width))) as u64
            })
            .max()
            .unwrap_or(1);
        d.weights_read += if weights <= arch.weight_buffer_bytes {
            weights
        } else {
            weights * passes
        };
    }
    d
}

/// Elements of a producer's output that are computed by one of the first
/// `k + 1` row bands and still needed by a later band, maximized over `k`.
/// Two-layer group: `producer` feeds `consumer`, which is the sink; bands
/// are `band` output rows of the full map width.
pub fn live_rows_oracle(graph: &ModelGraph, producer: NodeId, consumer: NodeId, band: usize) -> u64 {
    let members: BTreeSet<NodeId> = [producer, consumer].into();
    let out = graph.output_shape(consumer);
    let bands = out.height.div_ceil(band);
    let needs: Vec<Grid> = (0..bands)
        .map(|k| trace_region(graph, &members, k * band..(k + 1) * band, 0..out.width).layers[&producer].clone())
        .collect();
    let p = graph.output_shape(producer);
    let mut best = 0;
    for k in 0..bands.saturating_sub(1) {
        let mut before = Grid::empty(p.height, p.width);
        for g in &needs[..=k] {
            before.union_with(g);
        }
        let mut after = Grid::empty(p.height, p.width);
        for g in &needs[k + 1..] {
            after.union_with(g);
        }
        let live = before.positions().filter(|&(r, c)| after.get(r, c)).count() as u64;
        best = best.max(live);
    }
    best * p.channels as u64 * graph.layer(producer).bytes_per_element as u64
}

/// Chain of windowed layers with explicit padding, named `l0`, `l1`, ...
pub fn chain(layers: &[(LayerKind, usize, usize, usize)], input: TensorShape, channels: usize) -> ModelGraph {
    let specs = layers
        .iter()
        .enumerate()
        .map(|(i, &(kind, k, s, pad))| {
            let mut spec = LayerSpec::new(format!("l{i}"), kind)
                .with_kernel(k, k)
                .with_stride(s, s)
                .with_pad(pad, pad);
            if matches!(kind, LayerKind::Conv | LayerKind::PointwiseConv) {
                spec = spec.with_out_channels(channels);
            }
            spec
        })
        .collect();
    let edges = (1..layers.len()).map(|i| (i - 1, i)).collect();
    ModelGraph::new("chain", specs, edges, BTreeMap::from([(0, input)])).expect("valid chain")
}

/// Same-padded conv chain: `(kernel, stride)` per layer.
pub fn conv_chain(layers: &[(usize, usize)], hw: usize, channels: usize) -> ModelGraph {
    let spec: Vec<_> = layers.iter().map(|&(k, s)| (LayerKind::Conv, k, s, k / 2)).collect();
    chain(&spec, TensorShape::new(channels, hw, hw), channels)
}

/// A→B→C plus the skip A→D and C→D, joined by an add at D.
pub fn skip_block(hw: usize, channels: usize, k: usize) -> ModelGraph {
    let conv = |id: &str| {
        LayerSpec::new(id, LayerKind::Conv)
            .with_kernel(k, k)
            .with_pad(k / 2, k / 2)
            .with_out_channels(channels)
    };
    ModelGraph::new(
        "skip",
        vec![
            conv("A"),
            conv("B"),
            conv("C"),
            LayerSpec::new("D", LayerKind::ElementwiseAdd),
        ],
        vec![(0, 1), (1, 2), (2, 3), (0, 3)],
        BTreeMap::from([(0, TensorShape::new(channels, hw, hw))]),
    )
    .expect("valid skip block")
}

/// A feeding B and C, which meet at a concat D. B and C use kernels `kb`, `kc`.
pub fn diamond(hw: usize, channels: usize, kb: usize, kc: usize) -> ModelGraph {
    let conv = |id: &str, k: usize| {
        LayerSpec::new(id, LayerKind::Conv)
            .with_kernel(k, k)
            .with_pad(k / 2, k / 2)
            .with_out_channels(channels)
    };
    ModelGraph::new(
        "diamond",
        vec![
            conv("A", 3),
            conv("B", kb),
            conv("C", kc),
            LayerSpec::new("D", LayerKind::Concat),
        ],
        vec![(0, 1), (0, 2), (1, 3), (2, 3)],
        BTreeMap::from([(0, TensorShape::new(channels, hw, hw))]),
    )
    .expect("valid diamond")
}

/// Every combination of `choices` of length `len`.
pub fn sequences<T: Copy>(choices: &[T], len: usize) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |&c| {
                    let mut v = prefix.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    out
}

/// Band start indices to probe: all of them for short axes, otherwise
/// both borders and the middle.
fn probe_bands(extent: usize, size: usize) -> Vec<usize> {
    let bands = extent.div_ceil(size);
    let picks: BTreeSet<usize> = if bands <= 6 {
        (0..bands).collect()
    } else {
        [0, 1, bands / 2, bands - 2, bands - 1].into()
    };
    picks.into_iter().map(|b| b * size).collect()
}

/// Compares the planner with direct tracing on one group:
/// - every probed pass region equals the traced positions exactly, per
///   layer and per external tensor;
/// - every window of `backtrace_window` equals the largest traced bounding
///   box over all placements of the sink tile. Taps are separable, so each
///   axis is swept with the other held to a one-wide strip.
///
/// Returns the number of positioned comparisons.
pub fn check_receptive(graph: &ModelGraph, nodes: &[NodeId]) -> Result<u64, String> {
    use layerfuse_core::{backtrace_region, backtrace_window};

    let members: BTreeSet<NodeId> = nodes.iter().copied().collect();
    let group = Group::new(nodes.to_vec());
    let (p, q) = sinks(graph, &members)
        .iter()
        .map(|&s| graph.output_shape(s))
        .fold((1, 1), |(p, q), o| (p.max(o.height), q.max(o.width)));
    let mut tiles: Vec<Tile> = vec![
        Tile::new(1, 1),
        Tile::new(1, 3.min(q)),
        Tile::new(1, q),
        Tile::new(2.min(p), q),
        Tile::new(3.min(p), q),
    ];
    tiles.sort_by_key(|t| (t.height, t.width));
    tiles.dedup();

    let mut checks = 0;
    for tile in tiles {
        let plan = backtrace_window(graph, &group, tile).map_err(|e| e.to_string())?;
        let mut layer_max: BTreeMap<NodeId, (usize, usize)> = BTreeMap::new();
        let mut ext_max: BTreeMap<TensorRef, (usize, usize)> = BTreeMap::new();
        for r0 in probe_bands(p, tile.height) {
            for c0 in probe_bands(q, tile.width) {
                let rows = r0..r0 + tile.height;
                let cols = c0..c0 + tile.width;
                let traced = trace_region(graph, &members, rows.clone(), cols.clone());
                let region = backtrace_region(graph, &group, rows.clone(), cols.clone()).map_err(|e| e.to_string())?;
                checks += 1;
                let ctx = |what: String| format!("{} tile {:?} at ({r0},{c0}): {what}", graph.name(), tile);
                for (&n, grid) in &traced.layers {
                    let fp = region.layers.get(&n).ok_or_else(|| ctx(format!("layer {n} missing")))?;
                    if !same_cells(grid, &fp.rows, &fp.cols) {
                        return Err(ctx(format!("layer {} region differs", graph.layer(n).id)));
                    }
                }
                if region.external.len() != traced.external.len() {
                    return Err(ctx("external tensor sets differ".into()));
                }
                for (t, grid) in &traced.external {
                    let fp = region.external.get(t).ok_or_else(|| ctx(format!("{t:?} missing")))?;
                    if !same_cells(grid, &fp.rows, &fp.cols) {
                        return Err(ctx(format!("{t:?} region differs")));
                    }
                }
            }
        }
        let sweeps = (0..=p - tile.height.min(p))
            .map(|r0| (r0..r0 + tile.height, 0..1, true))
            .chain((0..=q - tile.width.min(q)).map(|c0| (0..1, c0..c0 + tile.width, false)));
        for (rows, cols, along_rows) in sweeps {
            let traced = trace_region(graph, &members, rows, cols);
            let pick = |b: (usize, usize)| if along_rows { b.0 } else { b.1 };
            for (&n, grid) in &traced.layers {
                let m = layer_max.entry(n).or_default();
                let v = if along_rows { &mut m.0 } else { &mut m.1 };
                *v = (*v).max(pick(grid.bbox()));
            }
            for (t, grid) in &traced.external {
                let m = ext_max.entry(*t).or_default();
                let v = if along_rows { &mut m.0 } else { &mut m.1 };
                *v = (*v).max(pick(grid.bbox()));
            }
        }
        for (n, (h, w)) in layer_max {
            let got = plan.windows[&n];
            if (got.height, got.width) != (h, w) {
                return Err(format!(
                    "{} tile {:?}: window of {} is {:?}, traced {h}x{w}",
                    graph.name(),
                    tile,
                    graph.layer(n).id,
                    got
                ));
            }
        }
        for (t, (h, w)) in ext_max {
            let got = plan.input_windows[&t];
            if (got.height, got.width) != (h, w) {
                return Err(format!(
                    "{} tile {:?}: input window {t:?} is {:?}, traced {h}x{w}",
                    graph.name(),
                    tile,
                    got
                ));
            }
        }
    }
    Ok(checks)
}

fn same_cells(grid: &Grid, rows: &layerfuse_core::AxisSet, cols: &layerfuse_core::AxisSet) -> bool {
    if rows.len() != grid.height || cols.len() != grid.width {
        return false;
    }
    (0..grid.height).all(|r| (0..grid.width).all(|c| grid.get(r, c) == (rows.contains(r) && cols.contains(c))))
}

/// Every non-empty member set of `graph` that forms a convex group.
pub fn convex_subsets(graph: &ModelGraph) -> Vec<Vec<NodeId>> {
    let n = graph.len();
    (1u32..1 << n)
        .map(|mask| (0..n).filter(|&v| mask >> v & 1 == 1).collect::<Vec<_>>())
        .filter(|nodes| {
            let g = Group::new(nodes.clone());
            g.check_convex(graph).is_ok() && layerfuse_core::model::weakly_connected_components(graph, nodes).len() == 1
        })
        .collect()
}

/// Compares `evaluate_schedule` DRAM bytes with the element-counting
/// oracle for every genome of `graph`. Returns the number of valid genomes.
pub fn check_traffic(graph: &ModelGraph, arch: &ArchConfig) -> Result<u64, String> {
    use layerfuse_core::evaluate_schedule;

    let edges = graph.edge_count();
    let mut valid = 0;
    for mask in 0..1u64 << edges {
        let genome = FusionGenome::from_mask(edges, mask);
        let got = evaluate_schedule(graph, &genome, arch);
        let Some(groups) = oracle_groups(graph, &genome) else {
            if got.is_ok() {
                return Err(format!("{} genome {genome}: oracle says non-convex", graph.name()));
            }
            continue;
        };
        let got = got.map_err(|e| format!("{} genome {genome}: {e}", graph.name()))?;
        valid += 1;
        // Pair the library's groups with the oracle's by membership.
        let mut tiles = Vec::new();
        for members in &groups {
            let g = got
                .groups
                .iter()
                .find(|s| s.plan.group.nodes().iter().copied().eq(members.iter().copied()))
                .ok_or_else(|| format!("{} genome {genome}: group {members:?} missing", graph.name()))?;
            tiles.push(g.plan.plan.sink_tile);
        }
        let want = dram_oracle(graph, &groups, &tiles, arch);
        let d = got.total.dram;
        let have = OracleDram {
            input_acts_read: d.input_acts_read,
            output_acts_written: d.output_acts_written,
            spill_written: d.spill_written,
            spill_read: d.spill_read,
            weights_read: d.weights_read,
        };
        if have != want {
            return Err(format!(
                "{} genome {genome}: library {have:?}, oracle {want:?}",
                graph.name()
            ));
        }
    }
    Ok(valid)
}

/// Conv chain with random depth (2..=8), kernels, strides and channel
/// counts, drawn from `seed`.
pub fn random_chain(seed: u64) -> ModelGraph {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(2..=8);
    let hw = [16, 24, 32, 48, 56][rng.gen_range(0..5)];
    let mut extent = hw;
    let mut specs = Vec::new();
    for i in 0..depth {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let s = if extent >= 8 && rng.gen_bool(0.25) { 2 } else { 1 };
        extent = (extent + 2 * (k / 2) - k) / s + 1;
        specs.push(
            LayerSpec::new(format!("l{i}"), LayerKind::Conv)
                .with_kernel(k, k)
                .with_stride(s, s)
                .with_pad(k / 2, k / 2)
                .with_out_channels([8, 16, 32, 64][rng.gen_range(0..4)]),
        );
    }
    let channels = [3, 8, 16, 32][rng.gen_range(0..4)];
    ModelGraph::new(
        format!("random-{seed}"),
        specs,
        (1..depth).map(|i| (i - 1, i)).collect(),
        BTreeMap::from([(0, TensorShape::new(channels, hw, hw))]),
    )
    .expect("valid random chain")
}
