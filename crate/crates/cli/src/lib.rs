//! Command implementations behind the `layerfuse` binary.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use layerfuse_core::model::activation_footprints;
use layerfuse_core::{
    assets, parse_model, run_ga_with, ArchConfig, EvalResult, Evaluator, FootprintReport, FusionError, GaError,
    GaParams, GenerationStats, ModelGraph, ScheduleEval, Tile, KIB,
};
use serde::Serialize;

/// Smallest buffer size a ratio sweep may shift either buffer to.
pub const MIN_SWEEP_BUFFER: u64 = 16 * KIB;

/// Raised when the workload cannot be scheduled on the architecture at all.
#[derive(Debug)]
pub struct Unschedulable(pub String);

impl fmt::Display for Unschedulable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "workload is not schedulable: {}", self.0)
    }
}

impl std::error::Error for Unschedulable {}

fn ga_error(e: GaError) -> anyhow::Error {
    match e {
        GaError::Baseline(inner) => Unschedulable(inner.to_string()).into(),
        other => other.into(),
    }
}

/// Loads a workload from a descriptor file, or by bundled name.
pub fn load_workload(spec: &str) -> Result<ModelGraph> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return parse_model(&text).with_context(|| format!("invalid workload {}", path.display()));
    }
    match assets::bundled(spec) {
        Some(g) => Ok(g?),
        None => {
            let names: Vec<&str> = assets::BUNDLED.iter().map(|(n, _)| *n).collect();
            bail!(
                "no workload file `{spec}` and no bundled workload of that name (bundled: {})",
                names.join(", ")
            )
        }
    }
}

/// Loads an architecture from a preset name or a JSON file.
pub fn load_arch(spec: &str) -> Result<ArchConfig> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return ArchConfig::from_json(&text).with_context(|| format!("invalid architecture {}", path.display()));
    }
    Ok(ArchConfig::by_name(spec)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Improvement {
    pub energy: f64,
    pub cycles: f64,
    pub edp: f64,
}

impl Improvement {
    pub fn between(baseline: &EvalResult, best: &EvalResult) -> Self {
        Improvement {
            energy: baseline.energy_pj / best.energy_pj,
            cycles: baseline.cycles as f64 / best.cycles as f64,
            edp: baseline.edp / best.edp,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OffloadCounts {
    pub baseline: u32,
    pub best: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub layers: Vec<String>,
    pub tile: Tile,
    pub passes: u64,
    pub footprint: FootprintReport,
    pub weights_fit: bool,
    pub channel_blocks: u64,
    pub eval: EvalResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaSummary {
    pub params: GaParams,
    pub best_fitness: f64,
    pub evaluations: u64,
    pub distinct_groups: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport {
    pub workload: String,
    pub arch: String,
    pub baseline: EvalResult,
    pub best: EvalResult,
    pub improvement: Improvement,
    pub offload_events: OffloadCounts,
    /// Groups in execution order.
    pub groups: Vec<GroupReport>,
    pub fused_edges: Vec<[String; 2]>,
    pub ga: GaSummary,
}

fn group_reports(graph: &ModelGraph, schedule: &ScheduleEval) -> Vec<GroupReport> {
    schedule
        .groups
        .iter()
        .map(|g| GroupReport {
            layers: g
                .plan
                .group
                .ordered(graph)
                .into_iter()
                .map(|n| graph.layer(n).id.clone())
                .collect(),
            tile: g.plan.plan.sink_tile,
            passes: g.plan.plan.passes,
            footprint: g.plan.footprint,
            weights_fit: g.plan.weights_fit,
            channel_blocks: g.plan.channel_blocks,
            eval: g.eval,
        })
        .collect()
}

/// Optimizes one workload, calling `on_generation` after each generation.
pub fn cmd_run<F>(graph: &ModelGraph, arch: &ArchConfig, params: &GaParams, on_generation: F) -> Result<ScheduleReport>
where
    F: FnMut(&GenerationStats),
{
    arch.validate()?;
    let ev = Evaluator::new(graph, arch);
    let r = run_ga_with(&ev, params, on_generation).map_err(ga_error)?;
    let fused_edges = r
        .best_genome
        .fused_edges()
        .map(|e| {
            let (a, b) = graph.edges()[e];
            [graph.layer(a).id.clone(), graph.layer(b).id.clone()]
        })
        .collect();
    Ok(ScheduleReport {
        workload: graph.name().to_string(),
        arch: arch.name.clone(),
        baseline: r.baseline.total,
        best: r.best.total,
        improvement: Improvement::between(&r.baseline.total, &r.best.total),
        offload_events: OffloadCounts {
            baseline: r.baseline.total.offload_events,
            best: r.best.total.offload_events,
        },
        groups: group_reports(graph, &r.best),
        fused_edges,
        ga: GaSummary {
            params: params.clone(),
            best_fitness: r.best_fitness,
            evaluations: r.evaluations,
            distinct_groups: r.distinct_groups,
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    /// Bytes moved from the weight buffer to the activation buffer.
    pub shift_bytes: i64,
    pub activation_kib: f64,
    pub weight_kib: f64,
    pub total_kib: f64,
    pub activation_bytes: u64,
    pub weight_bytes: u64,
    pub energy_pj: f64,
    pub cycles: u64,
    pub edp: f64,
    pub offload_events: u32,
}

/// Re-optimizes the workload while trading `step_bytes` between the two
/// buffers, `steps` times in each direction. Total capacity is constant.
pub fn cmd_sweep_ratio(
    graph: &ModelGraph,
    arch: &ArchConfig,
    params: &GaParams,
    step_bytes: u64,
    steps: u32,
) -> Result<Vec<SweepRow>> {
    arch.validate()?;
    let span = if step_bytes == 0 { 0 } else { steps as i64 };
    let mut rows = Vec::new();
    for k in -span..=span {
        let shift = k * step_bytes as i64;
        let act = arch.activation_buffer_bytes as i64 + shift;
        let wgt = arch.weight_buffer_bytes as i64 - shift;
        if act < MIN_SWEEP_BUFFER as i64 || wgt < MIN_SWEEP_BUFFER as i64 {
            bail!(
                "shifting {shift} B leaves activation {act} B / weight {wgt} B; both buffers must keep at least {MIN_SWEEP_BUFFER} B"
            );
        }
        let mut shifted = arch.clone();
        shifted.activation_buffer_bytes = act as u64;
        shifted.weight_buffer_bytes = wgt as u64;
        let report = cmd_run(graph, &shifted, params, |_| {})?;
        rows.push(SweepRow {
            shift_bytes: shift,
            activation_kib: act as f64 / KIB as f64,
            weight_kib: wgt as f64 / KIB as f64,
            total_kib: (act + wgt) as f64 / KIB as f64,
            activation_bytes: act as u64,
            weight_bytes: wgt as u64,
            energy_pj: report.best.energy_pj,
            cycles: report.best.cycles,
            edp: report.best.edp,
            offload_events: report.best.offload_events,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct FootprintRow {
    pub index: usize,
    pub layer: String,
    pub kind: String,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FootprintTable {
    pub workload: String,
    /// Activation buffer capacity of each preset, in bytes.
    pub capacities: BTreeMap<String, u64>,
    pub layers: Vec<FootprintRow>,
}

/// Per-layer activation footprints in topological order.
pub fn cmd_footprints(graph: &ModelGraph) -> FootprintTable {
    let capacities = ArchConfig::presets()
        .iter()
        .map(|a| (a.name.clone(), a.activation_buffer_bytes))
        .collect();
    let by_node: BTreeMap<_, _> = activation_footprints(graph).into_iter().map(|f| (f.node, f)).collect();
    let layers = graph
        .topo_order()
        .iter()
        .enumerate()
        .map(|(index, &n)| FootprintRow {
            index,
            layer: graph.layer(n).id.clone(),
            kind: graph.layer(n).kind.as_str().to_string(),
            input_bytes: by_node[&n].input_bytes,
            output_bytes: by_node[&n].output_bytes,
        })
        .collect();
    FootprintTable {
        workload: graph.name().to_string(),
        capacities,
        layers,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

fn json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn csv_of<F>(header: &[&str], fill: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    fill(&mut w)?;
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn render_report(report: &ScheduleReport, format: Format) -> Result<String> {
    match format {
        Format::Json => json(report),
        Format::Csv => csv_of(
            &[
                "group",
                "layers",
                "tile_h",
                "tile_w",
                "passes",
                "footprint_bytes",
                "energy_pj",
                "cycles",
                "edp",
                "dram_bytes",
                "offload_events",
            ],
            |w| {
                for (i, g) in report.groups.iter().enumerate() {
                    w.write_record([
                        i.to_string(),
                        g.layers.join("+"),
                        g.tile.height.to_string(),
                        g.tile.width.to_string(),
                        g.passes.to_string(),
                        g.footprint.total_bytes.to_string(),
                        g.eval.energy_pj.to_string(),
                        g.eval.cycles.to_string(),
                        g.eval.edp.to_string(),
                        g.eval.dram.total().to_string(),
                        g.eval.offload_events.to_string(),
                    ])?;
                }
                Ok(())
            },
        ),
    }
}

pub fn render_sweep(rows: &[SweepRow], format: Format) -> Result<String> {
    match format {
        Format::Json => json(rows),
        Format::Csv => {
            // Header comes from the field names.
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            Ok(String::from_utf8(w.into_inner()?)?)
        }
    }
}

pub fn render_footprints(table: &FootprintTable, format: Format) -> Result<String> {
    match format {
        Format::Json => json(table),
        Format::Csv => {
            let caps: Vec<String> = table.capacities.keys().map(|k| format!("{k}_capacity_bytes")).collect();
            let mut header = vec!["index", "layer", "kind", "input_bytes", "output_bytes"];
            header.extend(caps.iter().map(String::as_str));
            csv_of(&header, |w| {
                for r in &table.layers {
                    let mut rec = vec![
                        r.index.to_string(),
                        r.layer.clone(),
                        r.kind.clone(),
                        r.input_bytes.to_string(),
                        r.output_bytes.to_string(),
                    ];
                    rec.extend(table.capacities.values().map(u64::to_string));
                    w.write_record(rec)?;
                }
                Ok(())
            })
        }
    }
}

pub fn render_presets(format: Format) -> Result<String> {
    let presets = ArchConfig::presets();
    match format {
        Format::Json => json(&presets),
        Format::Csv => csv_of(
            &[
                "name",
                "pe_x",
                "pe_y",
                "macs_per_pe",
                "activation_buffer_bytes",
                "weight_buffer_bytes",
                "clock_hz",
                "dram_bytes_per_sec",
            ],
            |w| {
                for a in &presets {
                    w.write_record([
                        a.name.clone(),
                        a.pe_x.to_string(),
                        a.pe_y.to_string(),
                        a.macs_per_pe.to_string(),
                        a.activation_buffer_bytes.to_string(),
                        a.weight_buffer_bytes.to_string(),
                        a.clock_hz.to_string(),
                        a.dram_bytes_per_sec.to_string(),
                    ])?;
                }
                Ok(())
            },
        ),
    }
}

/// Writes `text` to `out`, or to standard output when `out` is `None`.
pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Exit status for an error: 2 if the workload cannot be scheduled, else 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let unschedulable = err.chain().any(|e| {
        e.is::<Unschedulable>() || matches!(e.downcast_ref::<FusionError>(), Some(FusionError::Unschedulable { .. }))
    });
    if unschedulable {
        2
    } else {
        1
    }
}
