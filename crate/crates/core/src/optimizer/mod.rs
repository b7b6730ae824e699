//! Maximization of the objective over hierarchical structures: seeded
//! simulated annealing with restarts and an exhaustive oracle for small
//! instances.

mod brute;
mod moves;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use brute::{brute_force, candidate_count, MAX_BRUTE_FORCE_CANDIDATES, MAX_BRUTE_FORCE_COMPONENTS};
pub use moves::{is_applicable, propose_move, Move, MoveKind};

use crate::config::RunConfig;
use crate::objective::{EnergyBreakdown, PlausibilityModel, Scorer};
use crate::plant::{HierarchicalStructure, PlantInstance};
use crate::rules::Rulebook;

/// Ĝ_conn threshold used to seed the search.
pub const INITIAL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("instance has no components")]
    EmptyInstance,
    #[error("instance too large for exhaustive search: {components} components, {candidates} candidates")]
    InstanceTooLarge { components: usize, candidates: u128 },
}

/// Outcome of a search. For [`brute_force`], `iterations` counts the
/// enumerated candidates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub best: HierarchicalStructure,
    pub best_score: EnergyBreakdown,
    pub iterations: u64,
    pub restarts: u64,
    pub accepted_moves: u64,
    pub seed: u64,
}

/// Connected components of the thresholded connectivity graph as sections,
/// argmax classes, all sections in a single line of class 0.
pub fn initial_solution(inst: &PlantInstance, threshold: f64) -> HierarchicalStructure {
    let n = inst.n();
    let conn = inst.g_conn();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && conn[[i, j]] >= threshold {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut section_of = vec![0; n];
    let mut ids = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        let r = root(&mut parent, i);
        if ids[r] == usize::MAX {
            ids[r] = next;
            next += 1;
        }
        section_of[i] = ids[r];
    }
    let s = HierarchicalStructure {
        section_of,
        line_of: vec![0; next],
        component_class: inst.detections().iter().map(|d| argmax(d.probs())).collect(),
        section_class: vec![0; next],
        line_class: vec![0],
    };
    let rel = inst.g_rel();
    let nt = inst.vocab().n_section();
    let section_class = s
        .sections()
        .iter()
        .map(|members| {
            if members.len() < 2 {
                return 0;
            }
            let totals: Vec<f64> = (0..nt)
                .map(|t| {
                    let mut sum = 0.0;
                    for &i in members {
                        for &j in members {
                            if i != j {
                                sum += rel[[i, j, t]];
                            }
                        }
                    }
                    sum
                })
                .collect();
            argmax(&totals)
        })
        .collect();
    HierarchicalStructure { section_class, ..s }
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Best structure seen so far; ties go to the smaller line-normalized form.
struct Incumbent {
    structure: HierarchicalStructure,
    score: EnergyBreakdown,
}

impl Incumbent {
    fn offer(&mut self, candidate: &HierarchicalStructure, score: EnergyBreakdown) {
        if score.total < self.score.total {
            return;
        }
        let normalized = candidate.normalize_lines();
        if score.total > self.score.total || normalized < self.structure {
            self.structure = normalized;
            self.score = score;
        }
    }
}

/// Simulated annealing from [`initial_solution`], one independent chain per
/// restart with its own stream of the seeded generator.
pub fn anneal(
    inst: &PlantInstance,
    rulebook: &Rulebook,
    model: &PlausibilityModel,
    config: &RunConfig,
) -> Result<SearchReport, OptimizerError> {
    if inst.n() == 0 {
        return Err(OptimizerError::EmptyInstance);
    }
    let scorer = Scorer::new(inst, rulebook, model, config);
    let schedule = config.annealing;
    let start = initial_solution(inst, INITIAL_THRESHOLD).canonicalize();
    let start_score = scorer.score(&start);
    let mut best = Incumbent {
        structure: start.normalize_lines(),
        score: start_score,
    };
    let mut accepted = 0u64;
    for restart in 0..schedule.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64);
        let mut current = start.clone();
        let mut current_total = start_score.total;
        let mut t = schedule.t0;
        for _ in 0..schedule.iters {
            let candidate = propose_move(&current, inst, &mut rng).apply(&current);
            let score = scorer.score(&candidate);
            let delta = score.total - current_total;
            if delta >= 0.0 || rng.gen::<f64>() < (delta / t).exp() {
                accepted += 1;
                best.offer(&candidate, score);
                current = candidate;
                current_total = score.total;
            }
            t *= schedule.cooling;
        }
    }
    Ok(SearchReport {
        best: best.structure,
        best_score: best.score,
        iterations: (schedule.iters * schedule.restarts) as u64,
        restarts: schedule.restarts as u64,
        accepted_moves: accepted,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests;
