//! Fusion genomes and the partitions they induce.
//!
//! A genome holds one bit per activation edge: fused edges keep the
//! activation on chip, split edges spill it to DRAM. Groups are the weakly
//! connected components of the fused edges, and a genome is valid when
//! every group is convex and fits the activation buffer.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchConfig;
use crate::group::Group;
use crate::model::{EdgeId, ModelGraph, NodeId};
use crate::receptive::{
    backtrace_window, intermediate_footprint, max_tile_for_capacity, FootprintReport, PlanError, Tile, TilePlan,
    TileSearch,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FusionGenome(Vec<bool>);

impl FusionGenome {
    /// Every edge split: the layer-by-layer schedule.
    pub fn all_split(graph: &ModelGraph) -> Self {
        FusionGenome(vec![false; graph.edge_count()])
    }

    pub fn all_fused(graph: &ModelGraph) -> Self {
        FusionGenome(vec![true; graph.edge_count()])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        FusionGenome(bits)
    }

    /// Genome whose fused edges are exactly `edges`.
    pub fn from_fused(graph: &ModelGraph, edges: &[EdgeId]) -> Self {
        let mut g = Self::all_split(graph);
        for &e in edges {
            g.0[e] = true;
        }
        g
    }

    /// Genome over `edge_count` edges whose fused set is the set bits of `mask`.
    pub fn from_mask(edge_count: usize, mask: u64) -> Self {
        FusionGenome((0..edge_count).map(|e| mask >> e & 1 == 1).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_fused(&self, edge: EdgeId) -> bool {
        self.0[edge]
    }

    pub fn fused_edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(e, _)| e)
    }

    pub fn fused_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for FusionGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Single-edge edit of a genome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Combine(EdgeId),
    Separate(EdgeId),
}

impl Action {
    pub fn edge(self) -> EdgeId {
        match self {
            Action::Combine(e) | Action::Separate(e) => e,
        }
    }

    pub fn inverse(self) -> Action {
        match self {
            Action::Combine(e) => Action::Separate(e),
            Action::Separate(e) => Action::Combine(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FusionError {
    #[error("genome has {got} bits but the graph has {expected} edges")]
    LengthMismatch { expected: usize, got: usize },
    #[error("edge #{0} does not exist")]
    EdgeOutOfRange(EdgeId),
    #[error("edge #{0} is already fused")]
    AlreadyFused(EdgeId),
    #[error("edge #{0} is already split")]
    AlreadySplit(EdgeId),
    #[error("fused group is not convex: a path leaves `{from}` and re-enters the group at `{to}`")]
    NotConvex { from: String, to: String },
    #[error("group [{}] needs {required_bytes} B of activation buffer even at a 1x1 tile; capacity is {capacity_bytes} B", layers.join(", "))]
    Unschedulable {
        layers: Vec<String>,
        required_bytes: u64,
        capacity_bytes: u64,
    },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Groups induced by a genome, listed in a topological order of the
/// quotient graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    groups: Vec<Group>,
    group_of: Vec<usize>,
}

impl Partition {
    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group_of(&self, node: NodeId) -> usize {
        self.group_of[node]
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// The genome that fuses exactly the edges inside a group. Split edges
    /// whose endpoints share a group are fused in effect and show as fused.
    pub fn canonical_genome(&self, graph: &ModelGraph) -> FusionGenome {
        FusionGenome(
            graph
                .edges()
                .iter()
                .map(|&(a, b)| self.group_of[a] == self.group_of[b])
                .collect(),
        )
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Derives the groups of `genome` and checks that the quotient graph is
/// acyclic.
pub fn derive_groups(graph: &ModelGraph, genome: &FusionGenome) -> Result<Partition, FusionError> {
    if genome.len() != graph.edge_count() {
        return Err(FusionError::LengthMismatch {
            expected: graph.edge_count(),
            got: genome.len(),
        });
    }
    let n = graph.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for e in genome.fused_edges() {
        let (a, b) = graph.edges()[e];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    // Number groups by their smallest member.
    let mut label = vec![usize::MAX; n];
    let mut members: Vec<Vec<NodeId>> = Vec::new();
    let mut group_of = vec![0; n];
    for (v, slot) in group_of.iter_mut().enumerate() {
        let r = find(&mut parent, v);
        if label[r] == usize::MAX {
            label[r] = members.len();
            members.push(Vec::new());
        }
        *slot = label[r];
        members[label[r]].push(v);
    }

    let k = members.len();
    let mut indeg = vec![0usize; k];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &(a, b) in graph.edges() {
        let (ga, gb) = (group_of[a], group_of[b]);
        if ga != gb && !out[ga].contains(&gb) {
            out[ga].push(gb);
            indeg[gb] += 1;
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..k).filter(|&g| indeg[g] == 0).collect();
    let mut order = Vec::with_capacity(k);
    while let Some(g) = ready.pop_first() {
        order.push(g);
        for &h in &out[g] {
            indeg[h] -= 1;
            if indeg[h] == 0 {
                ready.insert(h);
            }
        }
    }
    if order.len() < k {
        // Any group on a quotient cycle is non-convex.
        let stuck = (0..k).find(|&g| indeg[g] > 0).expect("leftover group");
        let cyclic = (0..k)
            .filter(|&g| indeg[g] > 0)
            .find_map(|g| Group::new(members[g].clone()).check_convex(graph).err());
        let (a, b) = cyclic.unwrap_or((members[stuck][0], members[stuck][0]));
        return Err(FusionError::NotConvex {
            from: graph.layer(a).id.clone(),
            to: graph.layer(b).id.clone(),
        });
    }

    let mut rank = vec![0; k];
    for (i, &g) in order.iter().enumerate() {
        rank[g] = i;
    }
    let groups = order
        .iter()
        .map(|&g| Group::new(std::mem::take(&mut members[g])))
        .collect();
    let group_of = group_of.into_iter().map(|g| rank[g]).collect();
    Ok(Partition { groups, group_of })
}

/// Applies one action, rejecting edits that target an edge in the wrong
/// state or that break convexity. Capacity is not checked here.
pub fn apply_action(graph: &ModelGraph, genome: &FusionGenome, action: Action) -> Result<FusionGenome, FusionError> {
    let e = action.edge();
    if e >= genome.len() {
        return Err(FusionError::EdgeOutOfRange(e));
    }
    let mut next = genome.clone();
    match action {
        Action::Combine(_) if genome.0[e] => return Err(FusionError::AlreadyFused(e)),
        Action::Separate(_) if !genome.0[e] => return Err(FusionError::AlreadySplit(e)),
        Action::Combine(_) => next.0[e] = true,
        Action::Separate(_) => next.0[e] = false,
    }
    derive_groups(graph, &next)?;
    Ok(next)
}

/// Execution plan of one group: its largest fitting tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPlan {
    pub group: Group,
    pub plan: TilePlan,
    pub footprint: FootprintReport,
    /// Whether the group's weights fit the weight buffer at once.
    pub weights_fit: bool,
    /// Channel blocks per pass. Above 1 only for a single layer whose
    /// full-channel 1x1 tile overflows the buffer; fused groups keep
    /// channels whole.
    pub channel_blocks: u64,
}

fn widest_channels(graph: &ModelGraph, node: NodeId) -> u64 {
    let shapes = graph.shapes(node);
    shapes
        .inputs
        .iter()
        .chain([&shapes.output])
        .map(|s| s.channels as u64)
        .max()
        .unwrap_or(1)
}

pub fn plan_group(graph: &ModelGraph, group: &Group, arch: &ArchConfig) -> Result<GroupPlan, FusionError> {
    let weights: u64 = group.nodes().iter().map(|&n| graph.weight_bytes(n)).sum();
    let weights_fit = weights <= arch.weight_buffer_bytes;
    match max_tile_for_capacity(graph, group, arch)? {
        TileSearch::Fits { plan, footprint } => Ok(GroupPlan {
            group: group.clone(),
            plan,
            footprint,
            weights_fit,
            channel_blocks: 1,
        }),
        TileSearch::Infeasible {
            required_bytes,
            capacity_bytes,
        } => {
            // A lone layer can still be mapped by splitting its channels.
            let blocks = required_bytes.div_ceil(capacity_bytes.max(1));
            if let [node] = group.nodes() {
                if blocks <= widest_channels(graph, *node) {
                    let plan = backtrace_window(graph, group, Tile::new(1, 1))?;
                    let footprint = intermediate_footprint(graph, group, &plan)?;
                    return Ok(GroupPlan {
                        group: group.clone(),
                        plan,
                        footprint,
                        weights_fit,
                        channel_blocks: blocks,
                    });
                }
            }
            Err(FusionError::Unschedulable {
                layers: group.nodes().iter().map(|&n| graph.layer(n).id.clone()).collect(),
                required_bytes,
                capacity_bytes,
            })
        }
    }
}

/// Full validity check: convex groups that each fit the activation buffer.
pub fn validate(graph: &ModelGraph, genome: &FusionGenome, arch: &ArchConfig) -> Result<Vec<GroupPlan>, FusionError> {
    let partition = derive_groups(graph, genome)?;
    partition.groups().iter().map(|g| plan_group(graph, g, arch)).collect()
}
