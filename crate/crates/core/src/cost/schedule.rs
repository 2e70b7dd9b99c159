use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use dashmap::DashMap;

use super::{evaluate_group, EvalResult};
use crate::arch::ArchConfig;
use crate::fusion::{derive_groups, plan_group, FusionError, FusionGenome, GroupPlan, Partition};
use crate::group::Group;
use crate::model::ModelGraph;

/// One group of a schedule with its plan and cost.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSchedule {
    pub plan: GroupPlan,
    pub eval: EvalResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEval {
    /// Groups in execution order.
    pub groups: Vec<Arc<GroupSchedule>>,
    pub total: EvalResult,
}

/// Schedule evaluator for one graph and architecture. A group's plan and
/// cost depend only on its members, so they are memoized across calls.
pub struct Evaluator<'a> {
    graph: &'a ModelGraph,
    arch: &'a ArchConfig,
    cache: DashMap<Group, Result<Arc<GroupSchedule>, FusionError>>,
    calls: AtomicU64,
}

impl<'a> Evaluator<'a> {
    pub fn new(graph: &'a ModelGraph, arch: &'a ArchConfig) -> Self {
        Evaluator {
            graph,
            arch,
            cache: DashMap::new(),
            calls: AtomicU64::new(0),
        }
    }

    pub fn graph(&self) -> &'a ModelGraph {
        self.graph
    }

    pub fn arch(&self) -> &'a ArchConfig {
        self.arch
    }

    /// Schedules evaluated so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Distinct groups planned so far.
    pub fn distinct_groups(&self) -> usize {
        self.cache.len()
    }

    pub fn group(&self, group: &Group) -> Result<Arc<GroupSchedule>, FusionError> {
        if let Some(hit) = self.cache.get(group) {
            return hit.clone();
        }
        let computed = plan_group(self.graph, group, self.arch).and_then(|plan| {
            let eval = evaluate_group(self.graph, group, &plan.plan, self.arch)?;
            Ok(Arc::new(GroupSchedule { plan, eval }))
        });
        self.cache.entry(group.clone()).or_insert(computed).clone()
    }

    pub fn partition(&self, partition: &Partition) -> Result<ScheduleEval, FusionError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let groups = partition
            .groups()
            .iter()
            .map(|g| self.group(g))
            .collect::<Result<Vec<_>, _>>()?;
        let total = groups
            .iter()
            .map(|g| g.eval)
            .reduce(|a, b| a + b)
            .expect("graphs have at least one layer");
        Ok(ScheduleEval { groups, total })
    }

    pub fn evaluate(&self, genome: &FusionGenome) -> Result<ScheduleEval, FusionError> {
        self.partition(&derive_groups(self.graph, genome)?)
    }
}

pub fn evaluate_schedule(
    graph: &ModelGraph,
    genome: &FusionGenome,
    arch: &ArchConfig,
) -> Result<ScheduleEval, FusionError> {
    Evaluator::new(graph, arch).evaluate(genome)
}

/// The layer-by-layer baseline: every activation goes through DRAM.
pub fn evaluate_layerwise(graph: &ModelGraph, arch: &ArchConfig) -> Result<ScheduleEval, FusionError> {
    evaluate_schedule(graph, &FusionGenome::all_split(graph), arch)
}
