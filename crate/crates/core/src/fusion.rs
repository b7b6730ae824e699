//! Association of OCR codes with detected symbols and fusion of equipment
//! evidence into the scene-graph class probabilities.

use serde::Serialize;
use thiserror::Error;

use crate::ingest::{EquipmentRow, OcrCode};
use crate::plant::{ClassVocabularies, PlantError, PlantInstance};
use crate::rules::Rulebook;

/// Largest problem solved by exhaustive search; bigger ones use the
/// potential-based assignment solver.
pub const EXHAUSTIVE_LIMIT: usize = 8;

/// Relative tolerance under which two total distances count as tied.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("probability vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodePair {
    pub code: usize,
    pub detection: usize,
    pub distance: f64,
}

/// One-to-one pairing of OCR codes with detections.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodeAssignment {
    /// sorted by code index
    pub pairs: Vec<CodePair>,
    pub unmatched_codes: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
    pub cutoff: f64,
}

impl CodeAssignment {
    pub fn total_distance(&self) -> f64 {
        self.pairs.iter().map(|p| p.distance).sum()
    }

    pub fn detection_for(&self, code: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.code == code).map(|p| p.detection)
    }

    pub fn code_for(&self, detection: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.detection == detection).map(|p| p.code)
    }
}

/// Distance cutoff: `factor` times the median bbox diagonal.
pub fn match_cutoff(inst: &PlantInstance, factor: f64) -> f64 {
    let mut diagonals: Vec<f64> = inst.detections().iter().map(|d| d.bbox().diagonal()).collect();
    if diagonals.is_empty() {
        return 0.0;
    }
    diagonals.sort_by(f64::total_cmp);
    let mid = diagonals.len() / 2;
    let median = if diagonals.len() % 2 == 1 {
        diagonals[mid]
    } else {
        0.5 * (diagonals[mid - 1] + diagonals[mid])
    };
    factor * median
}

/// Euclidean distance between every code and every detection centroid;
/// `None` where the distance exceeds `cutoff`.
pub fn distance_matrix(codes: &[OcrCode], inst: &PlantInstance, cutoff: f64) -> Vec<Vec<Option<f64>>> {
    codes
        .iter()
        .map(|c| {
            inst.detections()
                .iter()
                .map(|d| {
                    let (cx, cy) = d.bbox().centroid();
                    let dist = (c.x - cx).hypot(c.y - cy);
                    (dist <= cutoff).then_some(dist)
                })
                .collect()
        })
        .collect()
}

/// Matches codes to detections maximizing the number of pairs within the
/// cutoff, then minimizing the total distance. Ties go to the assignment
/// whose per-code detection ids are lexicographically smallest.
pub fn match_codes(codes: &[OcrCode], inst: &PlantInstance, cutoff_factor: f64) -> CodeAssignment {
    let cutoff = match_cutoff(inst, cutoff_factor);
    let dist = distance_matrix(codes, inst, cutoff);
    let n_det = inst.n();
    let chosen = if codes.len().max(n_det) <= EXHAUSTIVE_LIMIT {
        exhaustive_assignment(&dist, n_det)
    } else {
        potential_assignment(&dist, n_det)
    };
    let mut pairs = Vec::new();
    let mut used = vec![false; n_det];
    let mut unmatched_codes = Vec::new();
    for (code, slot) in chosen.iter().enumerate() {
        match slot {
            Some(d) => {
                used[*d] = true;
                pairs.push(CodePair {
                    code,
                    detection: *d,
                    distance: dist[code][*d].expect("assigned pairs respect the cutoff"),
                });
            }
            None => unmatched_codes.push(code),
        }
    }
    CodeAssignment {
        pairs,
        unmatched_codes,
        unmatched_detections: (0..n_det).filter(|&d| !used[d]).collect(),
        cutoff,
    }
}

/// Depth-first search over codes in index order, trying detections in id
/// order before leaving a code unmatched.
fn exhaustive_assignment(dist: &[Vec<Option<f64>>], n_det: usize) -> Vec<Option<usize>> {
    struct Search<'a> {
        dist: &'a [Vec<Option<f64>>],
        used: Vec<bool>,
        current: Vec<Option<usize>>,
        best: Vec<Option<usize>>,
        best_key: (usize, f64),
    }
    impl Search<'_> {
        fn run(&mut self, code: usize, matched: usize, total: f64) {
            if code == self.dist.len() {
                let (bm, bt) = self.best_key;
                let better = matched > bm || (matched == bm && total < bt - TIE_TOLERANCE * bt.max(1.0));
                if better {
                    self.best_key = (matched, total);
                    self.best.clone_from(&self.current);
                }
                return;
            }
            for d in 0..self.used.len() {
                if let (false, Some(x)) = (self.used[d], self.dist[code][d]) {
                    self.used[d] = true;
                    self.current[code] = Some(d);
                    self.run(code + 1, matched + 1, total + x);
                    self.used[d] = false;
                }
            }
            self.current[code] = None;
            self.run(code + 1, matched, total);
        }
    }
    let mut search = Search {
        dist,
        used: vec![false; n_det],
        current: vec![None; dist.len()],
        best: vec![None; dist.len()],
        best_key: (0, 0.0),
    };
    search.run(0, 0, 0.0);
    search.best
}

/// Minimum-cost assignment with shortest augmenting paths and vertex
/// potentials. Forbidden and dummy pairs cost more than any set of real
/// pairs, so the solution has maximum cardinality first.
fn potential_assignment(dist: &[Vec<Option<f64>>], n_det: usize) -> Vec<Option<usize>> {
    let n_codes = dist.len();
    let size = n_codes.max(n_det);
    if size == 0 {
        return Vec::new();
    }
    let real_sum: f64 = dist.iter().flatten().flatten().sum();
    let big = 2.0 * real_sum + 1.0;
    let cost = |r: usize, c: usize| -> f64 {
        if r < n_codes && c < n_det {
            dist[r][c].unwrap_or(big)
        } else {
            big
        }
    };
    // 1-based rows/columns, column 0 is the virtual source
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut row_of = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for r in 1..=size {
        row_of[0] = r;
        let mut col = 0;
        let mut min_to = vec![f64::INFINITY; size + 1];
        let mut visited = vec![false; size + 1];
        loop {
            visited[col] = true;
            let row = row_of[col];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for c in 1..=size {
                if visited[c] {
                    continue;
                }
                let reduced = cost(row - 1, c - 1) - u[row] - v[c];
                if reduced < min_to[c] {
                    min_to[c] = reduced;
                    way[c] = col;
                }
                if min_to[c] < delta {
                    delta = min_to[c];
                    next = c;
                }
            }
            for c in 0..=size {
                if visited[c] {
                    u[row_of[c]] += delta;
                    v[c] -= delta;
                } else {
                    min_to[c] -= delta;
                }
            }
            col = next;
            if row_of[col] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col];
            row_of[col] = row_of[prev];
            col = prev;
            if col == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n_codes];
    for c in 1..=size {
        let r = row_of[c];
        if r >= 1 && r <= n_codes && c <= n_det && dist[r - 1][c - 1].is_some() {
            out[r - 1] = Some(c - 1);
        }
    }
    out
}

/// Class distribution implied by an equipment row: `gamma` on the
/// catalogue-resolved class and the rest spread evenly; uniform when the row
/// is absent or unresolvable.
pub fn equip_distribution(row: Option<&EquipmentRow>, rulebook: &Rulebook, vocab: &ClassVocabularies, gamma: f64) -> Vec<f64> {
    let n = vocab.n_component();
    if n == 1 {
        return vec![1.0];
    }
    let resolved = row
        .and_then(|r| rulebook.resolve(&r.type_label, &r.subtype_label))
        .map(|e| e.class)
        .filter(|&c| c < n);
    match resolved {
        Some(c) => {
            let rest = (1.0 - gamma) / (n - 1) as f64;
            (0..n).map(|i| if i == c { gamma } else { rest }).collect()
        }
        None => vec![1.0 / n as f64; n],
    }
}

/// `normalize(beta·p_sgg + (1 − beta)·p_equip)`.
pub fn fuse_probs(p_sgg: &[f64], p_equip: &[f64], beta: f64) -> Result<Vec<f64>, FusionError> {
    if p_sgg.len() != p_equip.len() {
        return Err(FusionError::LengthMismatch(p_sgg.len(), p_equip.len()));
    }
    let mixed: Vec<f64> = p_sgg
        .iter()
        .zip(p_equip)
        .map(|(a, b)| beta * a + (1.0 - beta) * b)
        .collect();
    let sum: f64 = mixed.iter().sum();
    Ok(mixed.into_iter().map(|x| x / sum).collect())
}

/// Matches codes, derives equipment evidence for every detection and fuses
/// it into the instance's class probabilities. Codes resolve to the first
/// equipment row carrying the same code.
pub fn fuse_instance(
    inst: &PlantInstance,
    codes: &[OcrCode],
    equipment: &[EquipmentRow],
    rulebook: &Rulebook,
    beta: f64,
    gamma: f64,
    cutoff_factor: f64,
) -> Result<(PlantInstance, CodeAssignment), FusionError> {
    let assignment = match_codes(codes, inst, cutoff_factor);
    let vocab = inst.vocab();
    let probs = inst
        .detections()
        .iter()
        .map(|d| {
            let row = assignment
                .code_for(d.id())
                .and_then(|c| equipment.iter().find(|r| r.code == codes[c].code));
            let p_equip = equip_distribution(row, rulebook, vocab, gamma);
            fuse_probs(d.probs(), &p_equip, beta)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((inst.with_probs(probs)?, assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::tests::vocab;
    use crate::plant::{BBox, Detection};
    use ndarray::{Array2, Array3};
    use proptest::prelude::*;

    fn at(points: &[(f64, f64)]) -> PlantInstance {
        let n = points.len();
        let dets = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Detection::new(i, BBox::new(x - 1.0, y - 1.0, 2.0, 2.0), vec![1.0, 0.0]).unwrap())
            .collect();
        PlantInstance::new(vocab(2, 1), dets, Array2::zeros((n, n)), Array3::zeros((n, n, 1))).unwrap()
    }

    fn code(x: f64, y: f64) -> OcrCode {
        OcrCode {
            code: String::new(),
            x,
            y,
        }
    }

    #[test]
    fn nearest_detection_wins() {
        let inst = at(&[(11.0, 10.0), (50.0, 50.0)]);
        let a = match_codes(&[code(10.0, 10.0)], &inst, 1.5);
        assert_eq!(a.pairs.len(), 1);
        assert_eq!(a.pairs[0].detection, 0);
        assert_eq!(a.unmatched_detections, vec![1]);
    }

    #[test]
    fn equidistant_codes_lower_index_wins() {
        let inst = at(&[(10.0, 10.0)]);
        let a = match_codes(&[code(9.0, 10.0), code(11.0, 10.0)], &inst, 1.5);
        assert_eq!(a.pairs.len(), 1);
        assert_eq!(a.pairs[0].code, 0);
        assert_eq!(a.unmatched_codes, vec![1]);
    }

    #[test]
    fn cutoff_excludes_far_codes() {
        let inst = at(&[(10.0, 10.0), (20.0, 10.0)]);
        // diagonal 2·√2, cutoff ≈ 4.24
        let a = match_codes(&[code(100.0, 100.0)], &inst, 1.5);
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_codes, vec![0]);
        assert!((a.cutoff - 1.5 * 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs() {
        let inst = at(&[]);
        let a = match_codes(&[code(0.0, 0.0)], &inst, 1.5);
        assert_eq!(a.unmatched_codes, vec![0]);
        let inst = at(&[(0.0, 0.0)]);
        let a = match_codes(&[], &inst, 1.5);
        assert_eq!(a.unmatched_detections, vec![0]);
    }

    #[test]
    fn cardinality_beats_distance() {
        // greedy nearest for code 0 would steal detection 0 from code 1
        let inst = at(&[(0.0, 0.0), (3.0, 0.0)]);
        let a = match_codes(&[code(1.0, 0.0), code(-1.0, 0.0)], &inst, 1.5);
        assert_eq!(a.pairs.len(), 2);
        assert_eq!(a.detection_for(0), Some(1));
        assert_eq!(a.detection_for(1), Some(0));
    }

    #[test]
    fn solvers_agree_on_cost() {
        let mut rng_state = 7u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let n_codes = 1 + (next() * 7.0) as usize;
            let n_det = 1 + (next() * 7.0) as usize;
            let dist: Vec<Vec<Option<f64>>> = (0..n_codes)
                .map(|_| (0..n_det).map(|_| (next() < 0.7).then(|| next() * 10.0)).collect())
                .collect();
            let a = exhaustive_assignment(&dist, n_det);
            let b = potential_assignment(&dist, n_det);
            let cost = |s: &[Option<usize>]| -> (usize, f64) {
                let m = s.iter().flatten().count();
                let t = s.iter().enumerate().filter_map(|(c, d)| d.map(|d| dist[c][d].unwrap())).sum();
                (m, t)
            };
            let (ca, cb) = (cost(&a), cost(&b));
            assert_eq!(ca.0, cb.0);
            assert!((ca.1 - cb.1).abs() < 1e-9);
        }
    }

    #[test]
    fn equipment_distribution_cases() {
        let v = vocab(4, 1);
        let mut rb = Rulebook::permissive(1, 2);
        rb.catalogue.insert(
            crate::plant::ComponentClass::new("type2", "std"),
            crate::rules::CatalogueEntry {
                class: 2,
                mandatory_characteristics: vec![],
            },
        );
        let row = EquipmentRow {
            code: "1".into(),
            type_label: "type2".into(),
            subtype_label: "std".into(),
            description: String::new(),
            specs: Default::default(),
        };
        let p = equip_distribution(Some(&row), &rb, &v, 0.9);
        let rest = (1.0 - 0.9) / 3.0;
        assert_eq!(p, vec![rest, rest, 0.9, rest]);
        assert_eq!(equip_distribution(None, &rb, &v, 0.9), vec![0.25; 4]);
        let unknown = EquipmentRow {
            type_label: "pump".into(),
            ..row
        };
        assert_eq!(equip_distribution(Some(&unknown), &rb, &v, 0.9), vec![0.25; 4]);
        let v1 = crate::plant::ClassVocabularies::new(
            vec![crate::plant::ComponentClass::new("a", "b")],
            vec!["s".into()],
            vec!["measurement".into(), "regulation".into()],
        )
        .unwrap();
        assert_eq!(equip_distribution(None, &rb, &v1, 0.3), vec![1.0]);
    }

    #[test]
    fn fuse_examples() {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&fuse_probs(&[0.8, 0.2], &[0.2, 0.8], 0.5).unwrap(), &[0.5, 0.5]));
        assert!(close(&fuse_probs(&[0.8, 0.2], &[0.3, 0.7], 1.0).unwrap(), &[0.8, 0.2]));
        assert!(close(&fuse_probs(&[1.0, 0.0], &[0.0, 1.0], 0.3).unwrap(), &[0.3, 0.7]));
        assert_eq!(fuse_probs(&[1.0], &[0.5, 0.5], 0.3), Err(FusionError::LengthMismatch(1, 2)));
    }

    fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.001f64..1.0, len).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn fused_output_is_distribution(
            (p, q) in (1usize..6).prop_flat_map(|n| (distribution(n), distribution(n))),
            beta in 0.0f64..=1.0,
        ) {
            let f = fuse_probs(&p, &q, beta).unwrap();
            prop_assert!(f.iter().all(|&x| x >= 0.0));
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn identical_evidence_keeps_argmax(p in (1usize..6).prop_flat_map(distribution), beta in 0.0f64..=1.0) {
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i);
            prop_assert_eq!(argmax(&fuse_probs(&p, &p, beta).unwrap()), argmax(&p));
        }
    }
}
