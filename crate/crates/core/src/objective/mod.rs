//! The reconstruction objective
//!
//! `S = λ1·E_node + λ2·E_edge + λ3·E_struct − λ4·E_norm − λ5·E_reg`
//!
//! Every logarithm clamps its argument at the configured epsilon so that the
//! objective stays finite for zero-probability evidence.

mod compliance;
mod plausibility;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compliance::{phi_line, phi_section, EXTRA_CLASS_PENALTY};
pub use plausibility::{
    fit_plausibility, CompositionRow, CompositionTable, ModelDocument, PlausibilityModel, TableEntryDocument,
    TableRowDocument, DEFAULT_MODEL_EPSILON, DEFAULT_SMOOTHING,
};

use crate::config::RunConfig;
use crate::plant::{HierarchicalStructure, PlantInstance};
use crate::rules::Rulebook;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("unknown section class {0}")]
    UnknownSectionClass(usize),
    #[error("unknown line class {0}")]
    UnknownLineClass(usize),
    #[error("unknown component class {0}")]
    UnknownComponentClass(usize),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("registry holds conflicting records for plant `{0}`")]
    ConflictingRecord(String),
    #[error("smoothing must be positive, got {0}")]
    BadSmoothing(f64),
    #[error("composition count must be positive, got {0}")]
    BadCount(f64),
}

/// Values of the five energy terms and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e_node: f64,
    pub e_edge: f64,
    pub e_struct: f64,
    pub e_norm: f64,
    pub e_reg: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(lambdas: &[f64; 5], e_node: f64, e_edge: f64, e_struct: f64, e_norm: f64, e_reg: f64) -> Self {
        let total = lambdas[0] * e_node + lambdas[1] * e_edge + lambdas[2] * e_struct
            - lambdas[3] * e_norm
            - lambdas[4] * e_reg;
        Self {
            e_node,
            e_edge,
            e_struct,
            e_norm,
            e_reg,
            total,
        }
    }
}

/// Components grouped by section and sections grouped by line, in id order.
struct Groups {
    sections: Vec<usize>,
    section_start: Vec<usize>,
    lines: Vec<usize>,
    line_start: Vec<usize>,
}

impl Groups {
    fn new(s: &HierarchicalStructure) -> Self {
        let (sections, section_start) = bucket(&s.section_of, s.n_sections());
        let (lines, line_start) = bucket(&s.line_of, s.n_lines());
        Self {
            sections,
            section_start,
            lines,
            line_start,
        }
    }

    fn section(&self, k: usize) -> &[usize] {
        &self.sections[self.section_start[k]..self.section_start[k + 1]]
    }

    fn line(&self, j: usize) -> &[usize] {
        &self.lines[self.line_start[j]..self.line_start[j + 1]]
    }
}

/// Stable counting sort of item indices by group id.
fn bucket(group_of: &[usize], groups: usize) -> (Vec<usize>, Vec<usize>) {
    let mut start = vec![0usize; groups + 1];
    for &g in group_of {
        start[g + 1] += 1;
    }
    for g in 0..groups {
        start[g + 1] += start[g];
    }
    let mut fill = start.clone();
    let mut items = vec![0; group_of.len()];
    for (i, &g) in group_of.iter().enumerate() {
        items[fill[g]] = i;
        fill[g] += 1;
    }
    (items, start)
}

fn sorted_classes(buf: &mut Vec<usize>, members: &[usize], class_of: &[usize]) {
    buf.clear();
    buf.extend(members.iter().map(|&m| class_of[m]));
    buf.sort_unstable();
}

/// Sums in ascending order, so line totals do not depend on line numbering.
fn order_free_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_unstable_by(f64::total_cmp);
    v.into_iter().sum()
}

fn node_term(s: &HierarchicalStructure, log_p: impl Fn(usize, usize) -> f64) -> f64 {
    s.component_class.iter().enumerate().map(|(i, &c)| log_p(i, c)).sum()
}

fn edge_term(s: &HierarchicalStructure, g: &Groups, log_pair: impl Fn(usize, usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for k in 0..s.n_sections() {
        let members = g.section(k);
        let t = s.section_class[k];
        for &i in members {
            for &j in members {
                if i != j {
                    total += log_pair(i, j, t);
                }
            }
        }
    }
    total
}

fn struct_term(s: &HierarchicalStructure, g: &Groups, model: &PlausibilityModel) -> f64 {
    let mut buf = Vec::new();
    let mut sections = 0.0;
    for k in 0..s.n_sections() {
        sorted_classes(&mut buf, g.section(k), &s.component_class);
        sections += model.section_log_prob(s.section_class[k], &buf);
    }
    let lines = order_free_sum((0..s.n_lines()).map(|j| {
        sorted_classes(&mut buf, g.line(j), &s.section_class);
        model.line_log_prob(s.line_class[j], &buf)
    }));
    sections / s.n_sections() as f64 + lines / s.n_lines() as f64
}

fn norm_term(s: &HierarchicalStructure, g: &Groups, rulebook: &Rulebook, eps: f64) -> f64 {
    let mut buf = Vec::new();
    let mut phi_t = 0.0;
    for k in 0..s.n_sections() {
        sorted_classes(&mut buf, g.section(k), &s.component_class);
        phi_t += phi_section(s.section_class[k], &buf, rulebook).unwrap_or(0.0);
    }
    let phi_l = order_free_sum((0..s.n_lines()).map(|j| {
        sorted_classes(&mut buf, g.line(j), &s.section_class);
        phi_line(s.line_class[j], &buf, rulebook).unwrap_or(0.0)
    }));
    let compliance = 0.5 * phi_t / s.n_sections() as f64 + 0.5 * phi_l / s.n_lines() as f64;
    -compliance.max(eps).ln()
}

fn reg_term(s: &HierarchicalStructure, g: &Groups, alphas: &[f64; 3]) -> f64 {
    let squares: f64 = (0..s.n_sections())
        .map(|k| {
            let size = g.section(k).len() as f64;
            size * size
        })
        .sum();
    alphas[0] * s.n_sections() as f64 + alphas[1] * s.n_lines() as f64 + alphas[2] * squares
}

#[inline]
fn clamped_ln(p: f64, eps: f64) -> f64 {
    p.max(eps).ln()
}

/// `Σ_i ln max(p̂_i(y_i), ε)`.
pub fn e_node(s: &HierarchicalStructure, inst: &PlantInstance, eps: f64) -> f64 {
    node_term(s, |i, c| clamped_ln(inst.prob(i, c), eps))
}

/// Sum over sections and ordered within-section pairs of
/// `ln(max(G_conn[i,j], ε) · max(G_rel[i,j,y_T], ε))`.
pub fn e_edge(s: &HierarchicalStructure, inst: &PlantInstance, eps: f64) -> f64 {
    let (conn, rel) = (inst.g_conn(), inst.g_rel());
    edge_term(s, &Groups::new(s), |i, j, t| {
        (conn[[i, j]].max(eps) * rel[[i, j, t]].max(eps)).ln()
    })
}

/// Mean section log-plausibility plus mean line log-plausibility.
pub fn e_struct(s: &HierarchicalStructure, _inst: &PlantInstance, model: &PlausibilityModel) -> f64 {
    struct_term(s, &Groups::new(s), model)
}

/// `−ln(max(0.5·mean φ_T + 0.5·mean φ_L, ε))`.
pub fn e_norm(s: &HierarchicalStructure, _inst: &PlantInstance, rulebook: &Rulebook, eps: f64) -> f64 {
    norm_term(s, &Groups::new(s), rulebook, eps)
}

/// `α1·|T| + α2·|L| + α3·Σ|T_k|²`.
pub fn e_reg(s: &HierarchicalStructure, alphas: &[f64; 3]) -> f64 {
    reg_term(s, &Groups::new(s), alphas)
}

/// Evaluates all terms of the objective on the canonical form of `s`.
pub fn score(
    s: &HierarchicalStructure,
    inst: &PlantInstance,
    rulebook: &Rulebook,
    model: &PlausibilityModel,
    config: &RunConfig,
) -> EnergyBreakdown {
    Scorer::new(inst, rulebook, model, config).score(s)
}

/// Objective evaluator with per-instance logarithm tables cached.
///
/// Produces bit-identical results to [`score`].
pub struct Scorer<'a> {
    rulebook: &'a Rulebook,
    model: &'a PlausibilityModel,
    lambdas: [f64; 5],
    alphas: [f64; 3],
    eps: f64,
    n_component_classes: usize,
    n_section_classes: usize,
    n: usize,
    node_log: Vec<f64>,
    pair_log: Vec<f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(inst: &PlantInstance, rulebook: &'a Rulebook, model: &'a PlausibilityModel, config: &RunConfig) -> Self {
        let eps = config.epsilon;
        let n = inst.n();
        let nc = inst.vocab().n_component();
        let nt = inst.vocab().n_section();
        let mut node_log = Vec::with_capacity(n * nc);
        for i in 0..n {
            for c in 0..nc {
                node_log.push(clamped_ln(inst.prob(i, c), eps));
            }
        }
        let (conn, rel) = (inst.g_conn(), inst.g_rel());
        let mut pair_log = Vec::with_capacity(n * n * nt);
        for i in 0..n {
            for j in 0..n {
                for t in 0..nt {
                    pair_log.push((conn[[i, j]].max(eps) * rel[[i, j, t]].max(eps)).ln());
                }
            }
        }
        Self {
            rulebook,
            model,
            lambdas: config.lambdas,
            alphas: config.alphas,
            eps,
            n_component_classes: nc,
            n_section_classes: nt,
            n,
            node_log,
            pair_log,
        }
    }

    pub fn lambdas(&self) -> &[f64; 5] {
        &self.lambdas
    }

    pub fn score(&self, s: &HierarchicalStructure) -> EnergyBreakdown {
        if s.is_canonical() {
            self.score_canonical(s)
        } else {
            self.score_canonical(&s.canonicalize())
        }
    }

    fn score_canonical(&self, s: &HierarchicalStructure) -> EnergyBreakdown {
        let g = Groups::new(s);
        let nc = self.n_component_classes;
        let (n, nt) = (self.n, self.n_section_classes);
        let e_node = node_term(s, |i, c| self.node_log[i * nc + c]);
        let e_edge = edge_term(s, &g, |i, j, t| self.pair_log[(i * n + j) * nt + t]);
        let e_struct = struct_term(s, &g, self.model);
        let e_norm = norm_term(s, &g, self.rulebook, self.eps);
        let e_reg = reg_term(s, &g, &self.alphas);
        EnergyBreakdown::new(&self.lambdas, e_node, e_edge, e_struct, e_norm, e_reg)
    }
}

#[cfg(test)]
mod tests;
