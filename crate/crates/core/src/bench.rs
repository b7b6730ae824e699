//! Synthetic ground-truth plants, noise models and reconstruction metrics.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Dirichlet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::objective::{CompositionRow, PlausibilityModel};
use crate::pipeline::{reconstruct, PipelineError};
use crate::plant::{BBox, ClassVocabularies, Detection, HierarchicalStructure, PlantInstance, MEASUREMENT_LINE, REGULATION_LINE};
use crate::rules::Rulebook;

/// Cutoffs reported by [`evaluate`].
pub const RECALL_KS: [usize; 3] = [20, 50, 100];

/// Maximum number of lines in a sampled plant.
pub const MAX_SAMPLED_LINES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("prediction covers {pred} components but the truth covers {truth}")]
    IdSpace { pred: usize, truth: usize },
    #[error("relation tensor is {got:?}, expected {expected:?}")]
    TensorShape { got: (usize, usize, usize), expected: (usize, usize, usize) },
    #[error("truth relation set is empty")]
    EmptyTruth,
    #[error("invalid noise spec: {0}")]
    Noise(String),
    #[error("model has no registry lines to sample from")]
    EmptyModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_prob: f64,
    pub p_edge_flip: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if !(self.sigma_prob >= 0.0 && self.sigma_prob.is_finite()) {
            return Err(BenchError::Noise(format!("sigma_prob {} must be finite and >= 0", self.sigma_prob)));
        }
        if !(0.0..=1.0).contains(&self.p_edge_flip) {
            return Err(BenchError::Noise(format!("p_edge_flip {} outside [0, 1]", self.p_edge_flip)));
        }
        Ok(())
    }
}

fn sample_composition<R: Rng + ?Sized>(row: Option<&CompositionRow>, rng: &mut R) -> Vec<usize> {
    let observed: Vec<(&[usize], f64)> = row.map(|r| r.observed().collect()).unwrap_or_default();
    if observed.is_empty() {
        return vec![0];
    }
    let weights = WeightedIndex::new(observed.iter().map(|(_, c)| *c)).expect("positive counts");
    observed[weights.sample(rng)].0.to_vec()
}

/// Samples a plant from the registry statistics: 1 to 3 lines with types
/// drawn by registry frequency, then compositions drawn by observed counts.
///
/// Returns the line-normalized ground truth and its noise-free instance.
pub fn sample_structure<R: Rng + ?Sized>(
    model: &PlausibilityModel,
    vocab: &ClassVocabularies,
    rng: &mut R,
) -> Result<(HierarchicalStructure, PlantInstance), BenchError> {
    let line_types = WeightedIndex::new(model.line_type_counts()).map_err(|_| BenchError::EmptyModel)?;
    let n_lines = rng.gen_range(1..=MAX_SAMPLED_LINES);
    let mut line_class = Vec::new();
    let mut line_of = Vec::new();
    let mut section_class = Vec::new();
    // component classes grouped by section, before shuffling ids
    let mut section_members: Vec<Vec<usize>> = Vec::new();
    for j in 0..n_lines {
        let lt = line_types.sample(rng);
        line_class.push(lt);
        for t in sample_composition(model.line_table().rows().get(lt), rng) {
            line_of.push(j);
            section_class.push(t);
            section_members.push(sample_composition(model.section_table().rows().get(t), rng));
        }
    }
    let n: usize = section_members.iter().map(Vec::len).sum();
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut section_of = vec![0; n];
    let mut component_class = vec![0; n];
    let mut next = ids.into_iter();
    for (k, members) in section_members.iter().enumerate() {
        for &c in members {
            let id = next.next().expect("one id per component");
            section_of[id] = k;
            component_class[id] = c;
        }
    }
    let truth = HierarchicalStructure {
        section_of,
        line_of,
        component_class,
        section_class,
        line_class,
    }
    .normalize_lines();
    let inst = ground_truth_instance(&truth, vocab);
    Ok((truth, inst))
}

/// Noise-free evidence for `s`: one-hot classes, complete connectivity
/// within sections and relations one-hot at the section class.
pub fn ground_truth_instance(s: &HierarchicalStructure, vocab: &ClassVocabularies) -> PlantInstance {
    let n = s.n_components();
    let (nc, nt) = (vocab.n_component(), vocab.n_section());
    let per_row = (n as f64).sqrt().ceil().max(1.0) as usize;
    let detections = (0..n)
        .map(|i| {
            let mut probs = vec![0.0; nc];
            probs[s.component_class[i]] = 1.0;
            let bbox = BBox::new(60.0 * (i % per_row) as f64, 60.0 * (i / per_row) as f64, 24.0, 24.0);
            Detection::new(i, bbox, probs).expect("one-hot distribution")
        })
        .collect();
    let mut conn = Array2::zeros((n, n));
    let mut rel = Array3::zeros((n, n, nt));
    for i in 0..n {
        for j in 0..n {
            if i != j && s.section_of[i] == s.section_of[j] {
                conn[[i, j]] = 1.0;
                rel[[i, j, s.section_class[s.section_of[i]]]] = 1.0;
            }
        }
    }
    PlantInstance::new(vocab.clone(), detections, conn, rel).expect("consistent ground truth")
}

/// Mixes every class distribution with Dirichlet(σ·1) noise at weight
/// σ/(1+σ) and resets each graph entry to 0.5 with probability
/// `p_edge_flip`.
pub fn corrupt_instance(inst: &PlantInstance, spec: &NoiseSpec) -> Result<PlantInstance, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nc = inst.vocab().n_component();
    let weight = spec.sigma_prob / (1.0 + spec.sigma_prob);
    let noise = (spec.sigma_prob > 0.0 && nc >= 2)
        .then(|| Dirichlet::new_with_size(spec.sigma_prob, nc).expect("positive concentration"));
    let probs: Vec<Vec<f64>> = inst
        .detections()
        .iter()
        .map(|d| match &noise {
            Some(dirichlet) => {
                let mut q: Vec<f64> = dirichlet.sample(&mut rng);
                if !q.iter().all(|x| x.is_finite()) {
                    // underflow at tiny concentrations
                    q = vec![1.0 / nc as f64; nc];
                }
                let mixed: Vec<f64> = d.probs().iter().zip(&q).map(|(p, q)| (1.0 - weight) * p + weight * q).collect();
                let sum: f64 = mixed.iter().sum();
                mixed.into_iter().map(|x| x / sum).collect()
            }
            None => d.probs().to_vec(),
        })
        .collect();
    let mut conn = inst.g_conn().clone();
    let mut rel = inst.g_rel().clone();
    if spec.p_edge_flip > 0.0 {
        let n = inst.n();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(spec.p_edge_flip) {
                    conn[[i, j]] = 0.5;
                }
            }
        }
        for x in rel.iter_mut() {
            if rng.gen_bool(spec.p_edge_flip) {
                *x = 0.5;
            }
        }
    }
    let detections = inst
        .detections()
        .iter()
        .zip(probs)
        .map(|(d, p)| Detection::new(d.id(), d.bbox(), p).expect("mixture of distributions"))
        .collect();
    Ok(PlantInstance::new(inst.vocab().clone(), detections, conn, rel).expect("entries stay in [0, 1]"))
}

fn check_ids(pred: &HierarchicalStructure, truth: &HierarchicalStructure) -> Result<(), BenchError> {
    if pred.n_components() != truth.n_components() {
        return Err(BenchError::IdSpace {
            pred: pred.n_components(),
            truth: truth.n_components(),
        });
    }
    Ok(())
}

/// Fraction of components with the correct class.
pub fn component_accuracy(pred: &HierarchicalStructure, truth: &HierarchicalStructure) -> Result<f64, BenchError> {
    check_ids(pred, truth)?;
    let n = truth.n_components();
    if n == 0 {
        return Ok(1.0);
    }
    let correct = pred.component_class.iter().zip(&truth.component_class).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / n as f64)
}

/// One-to-one alignment of true to predicted sections: pairs are taken by
/// decreasing intersection, ties to the lower true then lower predicted id.
/// Returns the matched predicted section and intersection per true section.
fn match_sections(pred: &HierarchicalStructure, truth: &HierarchicalStructure) -> Vec<Option<(usize, usize)>> {
    let mut inter = vec![vec![0usize; pred.n_sections()]; truth.n_sections()];
    for (i, &k) in truth.section_of.iter().enumerate() {
        inter[k][pred.section_of[i]] += 1;
    }
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (k, row) in inter.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            if c > 0 {
                pairs.push((c, k, p));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matched = vec![None; truth.n_sections()];
    let mut used = vec![false; pred.n_sections()];
    for (c, k, p) in pairs {
        if matched[k].is_none() && !used[p] {
            matched[k] = Some((p, c));
            used[p] = true;
        }
    }
    matched
}

/// Size-weighted mean overlap of each true section with its matched
/// predicted section.
pub fn section_score(pred: &HierarchicalStructure, truth: &HierarchicalStructure) -> Result<f64, BenchError> {
    check_ids(pred, truth)?;
    let n = truth.n_components();
    if n == 0 {
        return Ok(1.0);
    }
    let matched: usize = match_sections(&pred.canonicalize(), &truth.canonicalize())
        .iter()
        .flatten()
        .map(|&(_, inter)| inter)
        .sum();
    Ok(matched as f64 / n as f64)
}

/// Fraction of true sections in lines of `line_type` whose matched
/// predicted section has the right class and covers at least half of them;
/// `None` when there are no such sections.
pub fn typed_section_accuracy(
    pred: &HierarchicalStructure,
    truth: &HierarchicalStructure,
    line_type: usize,
) -> Result<Option<f64>, BenchError> {
    check_ids(pred, truth)?;
    let pred = pred.canonicalize();
    let truth = truth.canonicalize();
    let sections = truth.sections();
    let matches = match_sections(&pred, &truth);
    let mut total = 0usize;
    let mut hits = 0usize;
    for (k, members) in sections.iter().enumerate() {
        if truth.line_class[truth.line_of[k]] != line_type {
            continue;
        }
        total += 1;
        if let Some((p, inter)) = matches[k] {
            if pred.section_class[p] == truth.section_class[k] && 2 * inter >= members.len() {
                hits += 1;
            }
        }
    }
    Ok((total > 0).then(|| hits as f64 / total as f64))
}

/// Ordered within-section pairs labelled with the section class.
pub fn truth_triplets(s: &HierarchicalStructure) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (k, members) in s.sections().iter().enumerate() {
        for &i in members {
            for &j in members {
                if i != j {
                    out.push((i, j, s.section_class[k]));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Share of `truth` among the `k` highest-scoring entries of `g_rel_pred`,
/// ties ranked by flat index.
pub fn recall_at_k(g_rel_pred: &Array3<f64>, truth: &[(usize, usize, usize)], k: usize) -> Result<f64, BenchError> {
    if truth.is_empty() {
        return Err(BenchError::EmptyTruth);
    }
    let (n, m, t) = g_rel_pred.dim();
    let mut order: Vec<usize> = (0..n * m * t).collect();
    let flat: Vec<f64> = g_rel_pred.iter().copied().collect();
    order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    let mut top = vec![false; flat.len()];
    for &idx in order.iter().take(k) {
        top[idx] = true;
    }
    let mut hits = 0usize;
    for &(i, j, c) in truth {
        if i >= n || j >= m || c >= t {
            return Err(BenchError::TensorShape {
                got: (n, m, t),
                expected: (i + 1, j + 1, c + 1),
            });
        }
        hits += usize::from(top[(i * m + j) * t + c]);
    }
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub component_accuracy: f64,
    pub section_score: f64,
    pub regulation_section_acc: Option<f64>,
    pub measurement_section_acc: Option<f64>,
    /// keyed by K; empty when the truth has no within-section pairs
    pub recall_at_k: BTreeMap<usize, f64>,
}

/// All metrics of `pred` against `truth`, with relation recall computed on
/// `g_rel_pred`.
pub fn evaluate(
    pred: &HierarchicalStructure,
    truth: &HierarchicalStructure,
    g_rel_pred: &Array3<f64>,
    vocab: &ClassVocabularies,
) -> Result<EvalReport, BenchError> {
    let triplets = truth_triplets(truth);
    let recall_at_k = if triplets.is_empty() {
        BTreeMap::new()
    } else {
        RECALL_KS
            .iter()
            .map(|&k| Ok((k, recall_at_k(g_rel_pred, &triplets, k)?)))
            .collect::<Result<_, BenchError>>()?
    };
    let typed = |label: &str| -> Result<Option<f64>, BenchError> {
        match vocab.line_index(label) {
            Some(l) => typed_section_accuracy(pred, truth, l),
            None => Ok(None),
        }
    };
    Ok(EvalReport {
        component_accuracy: component_accuracy(pred, truth)?,
        section_score: section_score(pred, truth)?,
        regulation_section_acc: typed(REGULATION_LINE)?,
        measurement_section_acc: typed(MEASUREMENT_LINE)?,
        recall_at_k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub instances: usize,
    pub sigma_levels: Vec<f64>,
    pub p_edge_flip: f64,
    pub seed: u64,
}

/// One (instance, noise level) outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub instance: usize,
    pub sigma_prob: f64,
    pub p_edge_flip: f64,
    pub n_components: usize,
    pub exact: bool,
    pub report: EvalReport,
}

#[derive(Debug, Error)]
pub enum BenchRunError {
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Samples `instances` plants, corrupts each at every sigma level and
/// reconstructs it without OCR evidence. Every instance uses its own
/// sample and noise seeds derived from `settings.seed`, shared across
/// levels.
pub fn run_benchmark(
    model: &PlausibilityModel,
    vocab: &ClassVocabularies,
    rulebook: &Rulebook,
    config: &RunConfig,
    settings: &BenchSettings,
) -> Result<Vec<BenchRow>, BenchRunError> {
    let mut rows = Vec::new();
    let mut seeds = ChaCha8Rng::seed_from_u64(settings.seed);
    for instance in 0..settings.instances {
        let sample_seed: u64 = seeds.gen();
        let noise_seed: u64 = seeds.gen();
        let (truth, clean) = sample_structure(model, vocab, &mut ChaCha8Rng::seed_from_u64(sample_seed))?;
        for &sigma_prob in &settings.sigma_levels {
            let spec = NoiseSpec {
                sigma_prob,
                p_edge_flip: settings.p_edge_flip,
                seed: noise_seed,
            };
            let noisy = corrupt_instance(&clean, &spec)?;
            let rec = reconstruct(&noisy, &[], &[], rulebook, model, config)?;
            let report = evaluate(&rec.report.best, &truth, noisy.g_rel(), vocab)?;
            rows.push(BenchRow {
                instance,
                sigma_prob,
                p_edge_flip: settings.p_edge_flip,
                n_components: truth.n_components(),
                exact: rec.report.best == truth,
                report,
            });
        }
    }
    Ok(rows)
}

/// Delimited table with one row per (instance, noise level); absent values
/// are empty fields.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "instance,sigma_prob,p_edge_flip,n_components,exact,component_accuracy,section_score,\
         regulation_section_acc,measurement_section_acc",
    );
    for k in RECALL_KS {
        out.push_str(&format!(",recall_at_{k}"));
    }
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            r.instance,
            r.sigma_prob,
            r.p_edge_flip,
            r.n_components,
            r.exact,
            r.report.component_accuracy,
            r.report.section_score,
            opt(r.report.regulation_section_acc),
            opt(r.report.measurement_section_acc),
        ));
        for k in RECALL_KS {
            out.push(',');
            out.push_str(&opt(r.report.recall_at_k.get(&k).copied()));
        }
        out.push('\n');
    }
    out
}

/// Means over the rows of one noise level. Optional metrics average over
/// the rows where they are defined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    pub sigma_prob: f64,
    pub p_edge_flip: f64,
    pub instances: usize,
    pub exact_fraction: f64,
    pub component_accuracy: f64,
    pub section_score: f64,
    pub regulation_section_acc: Option<f64>,
    pub measurement_section_acc: Option<f64>,
    pub recall_at_k: BTreeMap<usize, f64>,
}

/// One summary per distinct (sigma, flip) level, in first-seen order.
pub fn summarize(rows: &[BenchRow]) -> Vec<LevelSummary> {
    fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
        let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        (count > 0).then(|| sum / count as f64)
    }
    let mut levels: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        if !levels.contains(&(r.sigma_prob, r.p_edge_flip)) {
            levels.push((r.sigma_prob, r.p_edge_flip));
        }
    }
    levels
        .into_iter()
        .map(|(sigma_prob, p_edge_flip)| {
            let level: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.sigma_prob == sigma_prob && r.p_edge_flip == p_edge_flip)
                .collect();
            let recall_at_k = RECALL_KS
                .iter()
                .filter_map(|k| mean(level.iter().filter_map(|r| r.report.recall_at_k.get(k).copied())).map(|m| (*k, m)))
                .collect();
            LevelSummary {
                sigma_prob,
                p_edge_flip,
                instances: level.len(),
                exact_fraction: mean(level.iter().map(|r| f64::from(u8::from(r.exact)))).unwrap_or(0.0),
                component_accuracy: mean(level.iter().map(|r| r.report.component_accuracy)).unwrap_or(0.0),
                section_score: mean(level.iter().map(|r| r.report.section_score)).unwrap_or(0.0),
                regulation_section_acc: mean(level.iter().filter_map(|r| r.report.regulation_section_acc)),
                measurement_section_acc: mean(level.iter().filter_map(|r| r.report.measurement_section_acc)),
                recall_at_k,
            }
        })
        .collect()
}
