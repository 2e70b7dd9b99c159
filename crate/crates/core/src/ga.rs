//! Genetic search over fusion genomes, plus an exhaustive reference search
//! for small graphs.
//!
//! Each generation mutates every individual, pools parents and mutants,
//! keeps the best `elites` plus `random_survivors` others, and refills the
//! population by cycling the survivors. Every random draw comes from a
//! ChaCha8 stream keyed by (generation, individual), so a run depends only
//! on its seed, not on thread scheduling.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchConfig;
use crate::cost::{Evaluator, Objective, ScheduleEval};
use crate::fusion::{derive_groups, FusionError, FusionGenome};
use crate::model::ModelGraph;

/// Attempts per mutation before the individual is left unchanged.
const MUTATION_RETRIES: usize = 16;

/// Largest edge count the exhaustive search accepts.
pub const EXHAUSTIVE_MAX_EDGES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population: usize,
    pub elites: usize,
    pub random_survivors: usize,
    pub generations: usize,
    pub mutations: usize,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 100,
            elites: 10,
            random_survivors: 5,
            generations: 500,
            mutations: 1,
            seed: 0,
            objective: Objective::Edp,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), GaError> {
        let bad = |m: &str| Err(GaError::InvalidParams(m.to_string()));
        if self.population == 0 {
            return bad("population must be positive");
        }
        if self.elites == 0 {
            return bad("elites must be positive");
        }
        if self.elites + self.random_survivors > self.population {
            return bad("elites + random_survivors must not exceed population");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaError {
    #[error("invalid GA parameters: {0}")]
    InvalidParams(String),
    #[error("the layer-by-layer baseline is not schedulable: {0}")]
    Baseline(FusionError),
    #[error("exhaustive search supports at most {max} edges, graph has {edges}")]
    TooManyEdges { edges: usize, max: usize },
    #[error("candidate objective is {0}; fitness is undefined")]
    DegenerateObjective(f64),
}

/// Baseline objective over candidate objective: above 1 means better.
pub fn fitness(baseline: f64, candidate: f64) -> Result<f64, GaError> {
    if candidate > 0.0 && candidate.is_finite() {
        Ok(baseline / candidate)
    } else {
        Err(GaError::DegenerateObjective(candidate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    #[serde(rename = "best_objective_value")]
    pub best_objective: f64,
}

#[derive(Debug, Clone)]
pub struct GaResult {
    pub best_genome: FusionGenome,
    pub best: ScheduleEval,
    pub baseline: ScheduleEval,
    pub best_fitness: f64,
    /// One entry for the initial population, then one per generation.
    pub history: Vec<GenerationStats>,
    pub evaluations: u64,
    pub distinct_groups: usize,
}

#[derive(Clone)]
struct Individual {
    genome: FusionGenome,
    eval: ScheduleEval,
    objective: f64,
}

/// Total order used for selection: objective, then fewer fused edges, then
/// the genome bits.
fn rank(a: &Individual, b: &Individual) -> Ordering {
    a.objective
        .total_cmp(&b.objective)
        .then_with(|| a.genome.fused_count().cmp(&b.genome.fused_count()))
        .then_with(|| fused_list(&a.genome).cmp(&fused_list(&b.genome)))
}

fn fused_list(g: &FusionGenome) -> Vec<usize> {
    g.fused_edges().collect()
}

fn stream_rng(seed: u64, generation: usize, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | slot);
    rng
}

/// Flips one uniformly chosen edge, retrying until the result is a valid
/// schedule that differs from the parent. Genomes are kept canonical, so
/// every edge is eligible: split edges join two groups, fused edges try to
/// cut one.
fn mutate(ev: &Evaluator, parent: &Individual, objective: Objective, rng: &mut ChaCha8Rng) -> Individual {
    let edges = parent.genome.len();
    if edges == 0 {
        return parent.clone();
    }
    for _ in 0..MUTATION_RETRIES {
        let e = rng.gen_range(0..edges);
        let mut bits = parent.genome.bits().to_vec();
        bits[e] = !bits[e];
        let Ok(partition) = derive_groups(ev.graph(), &FusionGenome::from_bits(bits)) else {
            continue;
        };
        let genome = partition.canonical_genome(ev.graph());
        if genome == parent.genome {
            continue;
        }
        if let Ok(eval) = ev.partition(&partition) {
            let objective = objective.value(&eval.total);
            return Individual {
                genome,
                eval,
                objective,
            };
        }
    }
    parent.clone()
}

pub fn run_ga(graph: &ModelGraph, arch: &ArchConfig, params: &GaParams) -> Result<GaResult, GaError> {
    run_ga_with(&Evaluator::new(graph, arch), params, |_| {})
}

/// Runs the search, calling `on_generation` after each generation.
pub fn run_ga_with<F>(ev: &Evaluator, params: &GaParams, mut on_generation: F) -> Result<GaResult, GaError>
where
    F: FnMut(&GenerationStats),
{
    params.validate()?;
    let graph = ev.graph();
    let obj = params.objective;
    let base_genome = FusionGenome::all_split(graph);
    let baseline = ev.evaluate(&base_genome).map_err(GaError::Baseline)?;
    let base_obj = obj.value(&baseline.total);
    fitness(base_obj, base_obj)?;

    let seed_ind = Individual {
        genome: base_genome,
        eval: baseline.clone(),
        objective: base_obj,
    };
    let mut population = vec![seed_ind; params.population];
    let stats = |generation: usize, pop: &[Individual]| -> GenerationStats {
        let best = pop.iter().map(|i| i.objective).fold(f64::INFINITY, f64::min);
        let mean = pop.iter().map(|i| base_obj / i.objective).sum::<f64>() / pop.len() as f64;
        GenerationStats {
            generation,
            best_fitness: base_obj / best,
            mean_fitness: mean,
            best_objective: best,
        }
    };
    let mut history = vec![stats(0, &population)];
    on_generation(&history[0]);

    for generation in 1..=params.generations {
        let mutants: Vec<Individual> = population
            .par_iter()
            .enumerate()
            .map(|(i, ind)| {
                let mut rng = stream_rng(params.seed, generation, i as u64);
                let mut child = ind.clone();
                for _ in 0..params.mutations {
                    child = mutate(ev, &child, obj, &mut rng);
                }
                child
            })
            .collect();

        let mut seen = HashSet::new();
        let mut pool: Vec<Individual> = population
            .into_iter()
            .chain(mutants)
            .filter(|ind| seen.insert(ind.genome.clone()))
            .collect();
        pool.sort_by(rank);

        let elites = params.elites.min(pool.len());
        let rest = pool.len() - elites;
        let mut survivors: Vec<Individual> = pool[..elites].to_vec();
        let extra = params.random_survivors.min(rest);
        let mut rng = stream_rng(params.seed, generation, u32::MAX as u64);
        let mut picks = sample(&mut rng, rest, extra).into_vec();
        picks.sort_unstable();
        survivors.extend(picks.into_iter().map(|k| pool[elites + k].clone()));

        population = survivors.iter().cycle().take(params.population).cloned().collect();
        let s = stats(generation, &population);
        on_generation(&s);
        history.push(s);
    }

    let best = population.into_iter().min_by(rank).expect("population is non-empty");
    Ok(GaResult {
        best_fitness: fitness(base_obj, best.objective)?,
        best_genome: best.genome,
        best: best.eval,
        baseline,
        history,
        evaluations: ev.calls(),
        distinct_groups: ev.distinct_groups(),
    })
}

#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub best_genome: FusionGenome,
    pub best: ScheduleEval,
    pub best_objective: f64,
    /// Genomes that produced a valid schedule.
    pub valid: u64,
    pub total: u64,
}

/// Evaluates all 2^E genomes. Ties go to fewer fused edges, then to the
/// lexicographically smallest fused edge list.
pub fn exhaustive_oracle(
    graph: &ModelGraph,
    arch: &ArchConfig,
    objective: Objective,
) -> Result<ExhaustiveResult, GaError> {
    let edges = graph.edge_count();
    if edges > EXHAUSTIVE_MAX_EDGES {
        return Err(GaError::TooManyEdges {
            edges,
            max: EXHAUSTIVE_MAX_EDGES,
        });
    }
    let ev = Evaluator::new(graph, arch);
    let total = 1u64 << edges;
    let found: Vec<Individual> = (0..total)
        .into_par_iter()
        .filter_map(|mask| {
            let genome = FusionGenome::from_mask(edges, mask);
            let eval = ev.evaluate(&genome).ok()?;
            let objective = objective.value(&eval.total);
            Some(Individual {
                genome,
                eval,
                objective,
            })
        })
        .collect();
    let valid = found.len() as u64;
    let best = found.into_iter().min_by(rank).ok_or_else(|| {
        GaError::Baseline(
            ev.evaluate(&FusionGenome::all_split(graph))
                .expect_err("the all-split genome is valid whenever any genome is"),
        )
    })?;
    Ok(ExhaustiveResult {
        best_genome: best.genome,
        best: best.eval,
        best_objective: best.objective,
        valid,
        total,
    })
}
