//! Layer-fusion scheduling for CNN inference on spatial accelerators.
//!
//! A workload is a DAG of layers ([`ModelGraph`]). A [`FusionGenome`]
//! marks which activation edges stay on chip; the resulting groups are
//! tiled with [`backtrace_window`], costed with [`evaluate_group`], and the
//! genome space is searched with [`run_ga`].

pub mod arch;
pub mod assets;
pub mod cost;
pub mod fusion;
pub mod ga;
pub mod group;
pub mod model;
pub mod receptive;

pub use arch::{ArchConfig, ArchError, EnergyTable, KIB};
pub use cost::{
    evaluate_group, evaluate_layerwise, evaluate_schedule, mac_count, pj_per_mac_sweep, DramTraffic, EvalResult,
    Evaluator, GroupSchedule, Objective, OnChipTraffic, ScheduleEval, SweepPoint,
};
pub use fusion::{
    apply_action, derive_groups, plan_group, validate, Action, FusionError, FusionGenome, GroupPlan, Partition,
};
pub use ga::{
    exhaustive_oracle, fitness, run_ga, run_ga_with, ExhaustiveResult, GaError, GaParams, GaResult, GenerationStats,
};
pub use group::{Group, TensorRef};
pub use model::{parse_model, EdgeId, LayerKind, LayerSpec, ModelError, ModelGraph, NodeId, TensorShape};
pub use receptive::{
    backtrace_region, backtrace_window, intermediate_footprint, max_tile_for_capacity, tile_candidates, AxisSet,
    Demand, Footprint2d, FootprintReport, PlanError, Tile, TilePlan, TileSearch,
};
