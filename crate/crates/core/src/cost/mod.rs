//! Analytical energy, latency and EDP model.
//!
//! Intra-layer mapping is idealized: every MAC runs at the array's peak
//! rate, DRAM transfers overlap with compute, and a group's latency is the
//! larger of the two. Groups run back to back.

mod schedule;

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::group::{Group, TensorRef};
use crate::model::{LayerKind, ModelGraph, NodeId};
use crate::receptive::{
    backtrace_window, intermediate_footprint, propagate_demand, AxisSet, Footprint2d, PlanError, Tile, TilePlan,
};

pub use schedule::{evaluate_layerwise, evaluate_schedule, Evaluator, GroupSchedule, ScheduleEval};

/// DRAM bytes by tensor class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DramTraffic {
    /// Model input tensors read by source layers.
    pub input_acts_read: u64,
    pub weights_read: u64,
    /// Model outputs written by sink layers.
    pub output_acts_written: u64,
    /// Activations written at a group boundary.
    pub spill_written: u64,
    /// Activations read back by a later group.
    pub spill_read: u64,
}

impl DramTraffic {
    pub fn activation_bytes(&self) -> u64 {
        self.input_acts_read + self.output_acts_written + self.spill_written + self.spill_read
    }

    pub fn total(&self) -> u64 {
        self.activation_bytes() + self.weights_read
    }
}

impl Add for DramTraffic {
    type Output = DramTraffic;

    fn add(self, o: DramTraffic) -> DramTraffic {
        DramTraffic {
            input_acts_read: self.input_acts_read + o.input_acts_read,
            weights_read: self.weights_read + o.weights_read,
            output_acts_written: self.output_acts_written + o.output_acts_written,
            spill_written: self.spill_written + o.spill_written,
            spill_read: self.spill_read + o.spill_read,
        }
    }
}

/// On-chip bytes moved at each storage level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OnChipTraffic {
    pub activation_buffer: u64,
    pub weight_buffer: u64,
    pub pe_scratchpad: u64,
}

impl Add for OnChipTraffic {
    type Output = OnChipTraffic;

    fn add(self, o: OnChipTraffic) -> OnChipTraffic {
        OnChipTraffic {
            activation_buffer: self.activation_buffer + o.activation_buffer,
            weight_buffer: self.weight_buffer + o.weight_buffer,
            pe_scratchpad: self.pe_scratchpad + o.pe_scratchpad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub energy_pj: f64,
    pub cycles: u64,
    pub clock_hz: u64,
    /// Energy × delay, in pJ·s.
    pub edp: f64,
    pub dram: DramTraffic,
    pub onchip: OnChipTraffic,
    pub mac_count: u64,
    pub pj_per_mac: f64,
    /// Group boundaries that wrote an activation tensor to DRAM.
    pub offload_events: u32,
}

impl EvalResult {
    fn new(
        arch: &ArchConfig,
        dram: DramTraffic,
        onchip: OnChipTraffic,
        mac_count: u64,
        cycles: u64,
        offload_events: u32,
    ) -> Self {
        let e = &arch.energy;
        let energy_pj = dram.total() as f64 * e.dram_access
            + onchip.activation_buffer as f64 * e.activation_buffer_access
            + onchip.weight_buffer as f64 * e.weight_buffer_access
            + onchip.pe_scratchpad as f64 * e.pe_scratchpad_access
            + mac_count as f64 * e.mac;
        Self::assemble(
            energy_pj,
            cycles,
            arch.clock_hz,
            dram,
            onchip,
            mac_count,
            offload_events,
        )
    }

    fn assemble(
        energy_pj: f64,
        cycles: u64,
        clock_hz: u64,
        dram: DramTraffic,
        onchip: OnChipTraffic,
        mac_count: u64,
        offload_events: u32,
    ) -> Self {
        EvalResult {
            energy_pj,
            cycles,
            clock_hz,
            edp: energy_pj * (cycles as f64 / clock_hz as f64),
            dram,
            onchip,
            mac_count,
            pj_per_mac: if mac_count > 0 {
                energy_pj / mac_count as f64
            } else {
                0.0
            },
            offload_events,
        }
    }

    pub fn seconds(&self) -> f64 {
        self.cycles as f64 / self.clock_hz as f64
    }
}

impl Add for EvalResult {
    type Output = EvalResult;

    /// Sequential composition: energies, cycles and counters add.
    fn add(self, o: EvalResult) -> EvalResult {
        debug_assert_eq!(self.clock_hz, o.clock_hz);
        EvalResult::assemble(
            self.energy_pj + o.energy_pj,
            self.cycles + o.cycles,
            self.clock_hz,
            self.dram + o.dram,
            self.onchip + o.onchip,
            self.mac_count + o.mac_count,
            self.offload_events + o.offload_events,
        )
    }
}

/// What the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Edp,
    Energy,
    Cycles,
    DramBytes,
}

impl Objective {
    pub fn value(self, r: &EvalResult) -> f64 {
        match self {
            Objective::Edp => r.edp,
            Objective::Energy => r.energy_pj,
            Objective::Cycles => r.cycles as f64,
            Objective::DramBytes => r.dram.total() as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Edp => "edp",
            Objective::Energy => "energy",
            Objective::Cycles => "cycles",
            Objective::DramBytes => "dram_bytes",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edp" => Ok(Objective::Edp),
            "energy" => Ok(Objective::Energy),
            "cycles" => Ok(Objective::Cycles),
            "dram_bytes" | "dram-bytes" => Ok(Objective::DramBytes),
            _ => Err(format!(
                "unknown objective `{s}` (expected edp, energy, cycles or dram_bytes)"
            )),
        }
    }
}

/// Multiply-accumulates of one layer: `M·P·Q·C·R·S` for conv, `C·P·Q·R·S`
/// for depthwise, `M·P·Q·C` for pointwise, none otherwise.
pub fn mac_count(graph: &ModelGraph, node: NodeId) -> u64 {
    let out = graph.output_shape(node);
    let pq = out.height as u64 * out.width as u64;
    pq * graph.weight_count(node)
}

/// Bytes moved through PE scratchpads: two operand reads per MAC, the
/// window reads of pooling, and `n + 1` accesses per element of an n-ary add.
fn scratchpad_bytes(graph: &ModelGraph, node: NodeId) -> u64 {
    let layer = graph.layer(node);
    let bpe = layer.bytes_per_element as u64;
    let out = graph.output_shape(node).element_count();
    match layer.kind {
        LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::PointwiseConv => 2 * mac_count(graph, node) * bpe,
        LayerKind::PoolMax | LayerKind::PoolAvg => (layer.kernel[0] * layer.kernel[1]) as u64 * out * bpe,
        LayerKind::ElementwiseAdd => (graph.predecessors(node).len() as u64 + 1) * out * bpe,
        LayerKind::Concat | LayerKind::Upsample => 0,
    }
}

fn tensor_bytes(graph: &ModelGraph, tensor: TensorRef, elements: u64) -> u64 {
    match tensor {
        TensorRef::ModelInput(n) => {
            elements * graph.shapes(n).inputs[0].channels as u64 * graph.layer(n).bytes_per_element as u64
        }
        TensorRef::Output(p) => {
            elements * graph.output_shape(p).channels as u64 * graph.layer(p).bytes_per_element as u64
        }
    }
}

/// Evaluates one group executed with `plan`.
///
/// DRAM: every external input element the group actually reads is fetched
/// once (halo rows stay cached); exported outputs are written once; weights
/// are loaded once if they fit the weight buffer and once per pass otherwise.
pub fn evaluate_group(
    graph: &ModelGraph,
    group: &Group,
    plan: &TilePlan,
    arch: &ArchConfig,
) -> Result<EvalResult, PlanError> {
    if plan.windows.len() != group.len() || group.nodes().iter().any(|n| !plan.windows.contains_key(n)) {
        return Err(PlanError::PlanMismatch);
    }
    let mut dram = DramTraffic::default();
    let mut offloads = 0u32;

    let seeds = group
        .nodes()
        .iter()
        .filter(|&&n| group.is_exported(graph, n))
        .map(|&n| {
            let out = graph.output_shape(n);
            let fp = Footprint2d {
                rows: AxisSet::full(out.height),
                cols: AxisSet::full(out.width),
            };
            (n, fp)
        })
        .collect();
    let demand = propagate_demand(graph, group, seeds);
    for (&tensor, fp) in &demand.external {
        let bytes = tensor_bytes(graph, tensor, fp.element_count());
        match tensor {
            TensorRef::ModelInput(_) => dram.input_acts_read += bytes,
            TensorRef::Output(_) => dram.spill_read += bytes,
        }
    }

    let mut weight_bytes = 0u64;
    let mut act_buffer = 0u64;
    let mut scratchpad = 0u64;
    let mut macs = 0u64;
    for &n in group.nodes() {
        let out_bytes = graph.output_bytes(n);
        if graph.is_sink(n) {
            dram.output_acts_written += out_bytes;
        } else if group.is_exported(graph, n) {
            dram.spill_written += out_bytes;
            offloads += 1;
        }
        weight_bytes += graph.weight_bytes(n);
        let in_bytes: u64 = if graph.is_source(n) {
            tensor_bytes(graph, TensorRef::ModelInput(n), {
                let s = graph.shapes(n).inputs[0];
                s.height as u64 * s.width as u64
            })
        } else {
            graph.predecessors(n).iter().map(|&(p, _)| graph.output_bytes(p)).sum()
        };
        act_buffer += in_bytes + out_bytes;
        scratchpad += scratchpad_bytes(graph, n);
        macs += mac_count(graph, n);
    }
    // DRAM activation traffic is staged through the activation buffer.
    act_buffer += dram.activation_bytes();

    let weights_fit = weight_bytes <= arch.weight_buffer_bytes;
    dram.weights_read = if weights_fit {
        weight_bytes
    } else {
        weight_bytes * plan.passes
    };
    let onchip = OnChipTraffic {
        activation_buffer: act_buffer,
        weight_buffer: dram.weights_read + weight_bytes * plan.passes,
        pe_scratchpad: scratchpad,
    };

    let compute = macs.div_ceil(arch.peak_macs_per_cycle());
    let memory = (dram.total() as u128 * arch.clock_hz as u128).div_ceil(arch.dram_bytes_per_sec as u128) as u64;
    Ok(EvalResult::new(arch, dram, onchip, macs, compute.max(memory), offloads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tile: Tile,
    pub footprint_bytes: u64,
    /// `None` when the tile overflows the activation buffer.
    pub pj_per_mac: Option<f64>,
}

/// pJ/MAC of a group at each sink tile in `tiles`.
pub fn pj_per_mac_sweep(
    graph: &ModelGraph,
    group: &Group,
    arch: &ArchConfig,
    tiles: &[Tile],
) -> Result<Vec<SweepPoint>, PlanError> {
    tiles
        .iter()
        .map(|&tile| {
            let plan = backtrace_window(graph, group, tile)?;
            let fp = intermediate_footprint(graph, group, &plan)?;
            let pj_per_mac = if fp.total_bytes <= arch.activation_buffer_bytes {
                Some(evaluate_group(graph, group, &plan, arch)?.pj_per_mac)
            } else {
                None
            };
            Ok(SweepPoint {
                tile,
                footprint_bytes: fp.total_bytes,
                pj_per_mac,
            })
        })
        .collect()
}
