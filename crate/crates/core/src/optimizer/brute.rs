//! Exhaustive maximization for small instances.
//!
//! Candidates are enumerated as restricted-growth strings for the section
//! partition, section classes, restricted-growth strings for the line
//! partition, line classes and finally component classes. A fast
//! incremental value screens candidates; anything within a relative
//! tolerance of the incumbent is rescored exactly with [`Scorer`].

use super::{OptimizerError, SearchReport};
use crate::config::RunConfig;
use crate::objective::{phi_line, phi_section, PlausibilityModel, Scorer};
use crate::plant::{HierarchicalStructure, PlantInstance};
use crate::rules::Rulebook;

pub const MAX_BRUTE_FORCE_COMPONENTS: usize = 7;
pub const MAX_BRUTE_FORCE_CANDIDATES: u128 = 100_000_000;

const SCREEN_TOLERANCE: f64 = 1e-9;

/// Number of structures over `n` components with the given vocabulary sizes:
/// `Σ_K S(n,K)·nc^n·nt^K·Σ_M S(K,M)·nl^M`.
pub fn candidate_count(n: usize, nc: usize, nt: usize, nl: usize) -> u128 {
    let stirling = stirling2(n);
    let pow = |b: usize, e: usize| (b as u128).pow(e as u32);
    (1..=n)
        .map(|k| {
            let lines: u128 = (1..=k).map(|m| stirling[k][m] * pow(nl, m)).sum();
            stirling[n][k] * pow(nc, n) * pow(nt, k) * lines
        })
        .sum()
}

fn stirling2(n: usize) -> Vec<Vec<u128>> {
    let mut s = vec![vec![0u128; n + 1]; n + 1];
    s[0][0] = 1;
    for i in 1..=n {
        for k in 1..=i {
            s[i][k] = k as u128 * s[i - 1][k] + s[i - 1][k - 1];
        }
    }
    s
}

/// All restricted-growth strings of length `n`, in lexicographic order.
pub(crate) fn restricted_growth_strings(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let limit = if prefix.is_empty() { 0 } else { max + 1 };
        for v in 0..=limit {
            prefix.push(v);
            extend(prefix, n, max.max(v), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(n), n, 0, &mut out);
    out
}

/// Advances a mixed-radix counter; false once it wraps to all zeros.
fn odometer(digits: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for (pos, d) in digits.iter_mut().enumerate().rev() {
        *d += 1;
        if *d < radix(pos) {
            return true;
        }
        *d = 0;
    }
    false
}

/// Component-class choices for one section under one section class.
struct SectionOptions {
    /// λ1·node + λ3·section log-plausibility / K
    value: Vec<f64>,
    phi: Vec<f64>,
}

struct Best {
    structure: Option<HierarchicalStructure>,
    fast: f64,
    exact: f64,
}

/// Exact maximizer of the objective; ties go to the lexicographically
/// smallest canonical structure.
pub fn brute_force(
    inst: &PlantInstance,
    rulebook: &Rulebook,
    model: &PlausibilityModel,
    config: &RunConfig,
) -> Result<SearchReport, OptimizerError> {
    let n = inst.n();
    if n == 0 {
        return Err(OptimizerError::EmptyInstance);
    }
    let vocab = inst.vocab();
    let (nc, nt, nl) = (vocab.n_component(), vocab.n_section(), vocab.n_line());
    let total = candidate_count(n, nc, nt, nl);
    if n > MAX_BRUTE_FORCE_COMPONENTS || total > MAX_BRUTE_FORCE_CANDIDATES {
        return Err(OptimizerError::InstanceTooLarge {
            components: n,
            candidates: total,
        });
    }
    let scorer = Scorer::new(inst, rulebook, model, config);
    let [l1, l2, l3, l4, l5] = config.lambdas;
    let [a1, a2, a3] = config.alphas;
    let eps = config.epsilon;
    let node_log = |i: usize, c: usize| inst.prob(i, c).max(eps).ln();
    let (conn, rel) = (inst.g_conn(), inst.g_rel());

    let line_partitions: Vec<Vec<Vec<usize>>> = (0..=n).map(restricted_growth_strings).collect();
    let mut best = Best {
        structure: None,
        fast: f64::NEG_INFINITY,
        exact: f64::NEG_INFINITY,
    };
    let mut count = 0u64;
    let mut classes_buf = Vec::new();

    for section_of in restricted_growth_strings(n) {
        let k_count = section_of.iter().max().map_or(0, |m| m + 1);
        let kf = k_count as f64;
        let mut members = vec![Vec::new(); k_count];
        for (i, &k) in section_of.iter().enumerate() {
            members[k].push(i);
        }
        let size_penalty: f64 = members.iter().map(|m| (m.len() * m.len()) as f64).sum();
        // edge[k][t]
        let edge: Vec<Vec<f64>> = members
            .iter()
            .map(|m| {
                (0..nt)
                    .map(|t| {
                        let mut sum = 0.0;
                        for &i in m {
                            for &j in m {
                                if i != j {
                                    sum += (conn[[i, j]].max(eps) * rel[[i, j, t]].max(eps)).ln();
                                }
                            }
                        }
                        sum
                    })
                    .collect()
            })
            .collect();
        // options[k][t], class assignments enumerated as base-nc numbers,
        // first member most significant
        let options: Vec<Vec<SectionOptions>> = members
            .iter()
            .map(|m| {
                (0..nt)
                    .map(|t| {
                        let count = nc.pow(m.len() as u32);
                        let mut value = Vec::with_capacity(count);
                        let mut phi = Vec::with_capacity(count);
                        let mut digits = vec![0; m.len()];
                        loop {
                            let node: f64 = m.iter().zip(&digits).map(|(&i, &c)| node_log(i, c)).sum();
                            classes_buf.clear();
                            classes_buf.extend_from_slice(&digits);
                            classes_buf.sort_unstable();
                            value.push(l1 * node + l3 * model.section_log_prob(t, &classes_buf) / kf);
                            phi.push(phi_section(t, &classes_buf, rulebook).unwrap_or(0.0));
                            if !odometer(&mut digits, |_| nc) {
                                break;
                            }
                        }
                        SectionOptions { value, phi }
                    })
                    .collect()
            })
            .collect();

        let mut section_class = vec![0; k_count];
        loop {
            let edge_total: f64 = (0..k_count).map(|k| edge[k][section_class[k]]).sum();
            // every component-class combination for these section classes
            let opts: Vec<&SectionOptions> = (0..k_count).map(|k| &options[k][section_class[k]]).collect();
            let mut combos: Vec<(f64, f64)> = Vec::with_capacity(nc.pow(n as u32));
            let mut digits = vec![0; k_count];
            loop {
                let mut value = 0.0;
                let mut phi = 0.0;
                for (o, &d) in opts.iter().zip(&digits) {
                    value += o.value[d];
                    phi += o.phi[d];
                }
                combos.push((value, phi));
                if !odometer(&mut digits, |pos| opts[pos].value.len()) {
                    break;
                }
            }

            for line_of in &line_partitions[k_count] {
                let m_count = line_of.iter().max().map_or(0, |m| m + 1);
                let mf = m_count as f64;
                let mut line_sections = vec![Vec::new(); m_count];
                for (k, &j) in line_of.iter().enumerate() {
                    line_sections[j].push(section_class[k]);
                }
                for l in line_sections.iter_mut() {
                    l.sort_unstable();
                }
                let reg = a1 * kf + a2 * mf + a3 * size_penalty;
                let mut line_class = vec![0; m_count];
                loop {
                    let mut plaus = 0.0;
                    let mut phi_l = 0.0;
                    for (j, l) in line_sections.iter().enumerate() {
                        plaus += model.line_log_prob(line_class[j], l);
                        phi_l += phi_line(line_class[j], l, rulebook).unwrap_or(0.0);
                    }
                    let base = l2 * edge_total + l3 * plaus / mf - l5 * reg;
                    let phi_line_mean = 0.5 * phi_l / mf;
                    for (idx, &(value, phi)) in combos.iter().enumerate() {
                        count += 1;
                        let compliance = (0.5 * phi / kf + phi_line_mean).max(eps);
                        let fast = base + value + l4 * compliance.ln();
                        let tol = SCREEN_TOLERANCE * best.fast.abs().max(1.0);
                        if fast < best.fast - tol {
                            continue;
                        }
                        let candidate = HierarchicalStructure {
                            section_of: section_of.clone(),
                            line_of: line_of.clone(),
                            component_class: decode_classes(idx, &members, nc, n),
                            section_class: section_class.clone(),
                            line_class: line_class.clone(),
                        };
                        let exact = scorer.score(&candidate).total;
                        let better = match &best.structure {
                            None => true,
                            Some(b) => exact > best.exact || (exact == best.exact && candidate < *b),
                        };
                        if better {
                            best = Best {
                                structure: Some(candidate),
                                fast,
                                exact,
                            };
                        }
                    }
                    if !odometer(&mut line_class, |_| nl) {
                        break;
                    }
                }
            }
            if !odometer(&mut section_class, |_| nt) {
                break;
            }
        }
    }

    let structure = best.structure.expect("at least one candidate");
    let best_score = scorer.score(&structure);
    Ok(SearchReport {
        best: structure,
        best_score,
        iterations: count,
        restarts: 0,
        accepted_moves: 0,
        seed: config.seed,
    })
}

/// Component classes for combination `idx`, where sections are mixed-radix
/// digits (last section least significant) and each section's digit is a
/// base-`nc` number over its members.
fn decode_classes(mut idx: usize, members: &[Vec<usize>], nc: usize, n: usize) -> Vec<usize> {
    let mut classes = vec![0; n];
    for m in members.iter().rev() {
        let radix = nc.pow(m.len() as u32);
        let mut digit = idx % radix;
        idx /= radix;
        for &i in m.iter().rev() {
            classes[i] = digit % nc;
            digit /= nc;
        }
    }
    classes
}
