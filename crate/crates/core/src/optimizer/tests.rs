use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::config::AnnealingSchedule;
use crate::ingest::{RegistryLine, RegistryRecord, RegistrySection};
use crate::objective::{fit_plausibility, score};
use crate::plant::tests::{all_structures, vocab};
use crate::plant::{validate_structure, BBox, Detection};

fn instance(probs: Vec<Vec<f64>>, conn: Array2<f64>, rel: Array3<f64>) -> PlantInstance {
    let nc = probs[0].len();
    let nt = rel.dim().2;
    let dets = probs
        .into_iter()
        .enumerate()
        .map(|(i, p)| Detection::new(i, BBox::new(i as f64, 0.0, 1.0, 1.0), p).unwrap())
        .collect();
    PlantInstance::new(vocab(nc, nt), dets, conn, rel).unwrap()
}

fn simple_model(nc: usize, nt: usize) -> PlausibilityModel {
    let record = RegistryRecord {
        plant_id: "p".into(),
        lines: vec![RegistryLine {
            line_type: 0,
            sections: vec![RegistrySection {
                section_type: 0,
                components: vec![0],
            }],
        }],
    };
    fit_plausibility(&[record], &vocab(nc, nt), 1.0).unwrap()
}

struct Problem {
    inst: PlantInstance,
    rulebook: Rulebook,
    model: PlausibilityModel,
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, nc: usize, nt: usize) -> Problem {
    let probs = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..nc).map(|_| rng.gen_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect();
    let conn = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>());
    let rel = Array3::from_shape_fn((n, n, nt), |_| rng.gen::<f64>());
    let inst = instance(probs, conn, rel);
    let mut rulebook = Rulebook::permissive(nt, 2);
    for t in 0..nt {
        if rng.gen_bool(0.7) {
            rulebook.set_section_rule(t, vec![rng.gen_range(0..nc)], vec![rng.gen_range(0..nc)]);
        }
    }
    for l in 0..2 {
        rulebook.set_line_rule(l, vec![rng.gen_range(0..nt)]);
    }
    let records: Vec<RegistryRecord> = (0..4)
        .map(|p| RegistryRecord {
            plant_id: format!("p{p}"),
            lines: (0..rng.gen_range(1..3))
                .map(|_| RegistryLine {
                    line_type: rng.gen_range(0..2),
                    sections: (0..rng.gen_range(1..3))
                        .map(|_| RegistrySection {
                            section_type: rng.gen_range(0..nt),
                            components: (0..rng.gen_range(1..3)).map(|_| rng.gen_range(0..nc)).collect(),
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    let model = fit_plausibility(&records, inst.vocab(), 1.0).unwrap();
    Problem { inst, rulebook, model }
}

fn quick_config(seed: u64) -> RunConfig {
    RunConfig {
        annealing: AnnealingSchedule {
            t0: 1.0,
            cooling: 0.995,
            iters: 3000,
            restarts: 3,
        },
        seed,
        ..RunConfig::default()
    }
}

#[test]
fn initial_solution_examples() {
    let probs = vec![vec![1.0, 0.0]; 3];
    let inst = instance(probs.clone(), Array2::zeros((3, 3)), Array3::zeros((3, 3, 2)));
    let s = initial_solution(&inst, 0.5);
    assert_eq!(s.section_of, vec![0, 1, 2]);
    assert_eq!(s.line_of, vec![0, 0, 0]);
    assert_eq!(s.line_class, vec![0]);

    let mut conn = Array2::zeros((3, 3));
    conn[[0, 1]] = 0.9;
    let mut rel = Array3::zeros((3, 3, 2));
    rel[[0, 1, 1]] = 0.8;
    let inst = instance(probs.clone(), conn, rel);
    let s = initial_solution(&inst, 0.5);
    assert_eq!(s.section_of, vec![0, 0, 1]);
    assert_eq!(s.section_class, vec![1, 0]);
    assert_eq!(initial_solution(&inst, 1.01).section_of, vec![0, 1, 2]);

    let inst = instance(vec![vec![0.2, 0.8], vec![0.5, 0.5]], Array2::ones((2, 2)), Array3::zeros((2, 2, 1)));
    assert_eq!(initial_solution(&inst, 1.01).component_class, vec![1, 0]);
}

#[test]
fn brute_force_single_component() {
    let inst = instance(vec![vec![0.9, 0.1]], Array2::zeros((1, 1)), Array3::zeros((1, 1, 1)));
    let report = brute_force(&inst, &Rulebook::permissive(1, 2), &simple_model(2, 1), &RunConfig::default()).unwrap();
    assert_eq!(report.best.component_class, vec![0]);
    assert_eq!(report.best.n_sections(), 1);
    assert_eq!(report.best.n_lines(), 1);
    assert_eq!(report.iterations, 2 * 2);
}

#[test]
fn brute_force_groups_connected_pair() {
    let inst = instance(
        vec![vec![1.0], vec![1.0]],
        Array2::from_elem((2, 2), 0.99),
        Array3::from_elem((2, 2, 1), 0.99),
    );
    // the section rule is satisfied only by a pair
    let mut rb = Rulebook::permissive(1, 2);
    rb.set_section_rule(0, vec![0], vec![]);
    let model_records = vec![RegistryRecord {
        plant_id: "pair".into(),
        lines: vec![RegistryLine {
            line_type: 0,
            sections: vec![RegistrySection {
                section_type: 0,
                components: vec![0, 0],
            }],
        }],
    }];
    let model = fit_plausibility(&model_records, inst.vocab(), 1.0).unwrap();
    let report = brute_force(&inst, &rb, &model, &RunConfig::default()).unwrap();
    assert_eq!(report.best.section_of, vec![0, 0]);
    // the oracle agrees with scoring every structure
    let best = all_structures(2, 1, 1, 2)
        .into_iter()
        .map(|s| score(&s, &inst, &rb, &model, &RunConfig::default()).total)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.best_score.total, best);
}

#[test]
fn brute_force_matches_naive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..12 {
        let n = 1 + case % 3;
        let (nc, nt) = (1 + case % 2, 1 + (case / 2) % 2);
        let p = random_problem(&mut rng, n, nc, nt);
        let config = RunConfig::default();
        let report = brute_force(&p.inst, &p.rulebook, &p.model, &config).unwrap();
        let all = all_structures(n, nc, nt, 2);
        assert_eq!(report.iterations as usize, all.len());
        assert_eq!(report.iterations as u128, candidate_count(n, nc, nt, 2));
        let scorer = Scorer::new(&p.inst, &p.rulebook, &p.model, &config);
        let mut best: Option<(f64, HierarchicalStructure)> = None;
        for s in all {
            let total = scorer.score(&s).total;
            let better = match &best {
                None => true,
                Some((b, bs)) => total > *b || (total == *b && s < *bs),
            };
            if better {
                best = Some((total, s));
            }
        }
        let (total, structure) = best.unwrap();
        assert_eq!(report.best_score.total, total);
        assert_eq!(report.best, structure);
    }
}

#[test]
fn candidate_count_matches_bell_formula() {
    let bell = [1u128, 1, 2, 5];
    for n in 1..=3usize {
        for (nc, nt, nl) in [(1, 1, 2), (2, 3, 2), (3, 2, 2)] {
            // Bell(N) partitions, each with K blocks weighted by its class choices
            let mut expected = 0u128;
            let strings = super::brute::restricted_growth_strings(n);
            assert_eq!(strings.len() as u128, bell[n]);
            for rgs in strings {
                let k = rgs.iter().max().unwrap() + 1;
                let line_sum: u128 = super::brute::restricted_growth_strings(k)
                    .iter()
                    .map(|l| (nl as u128).pow((l.iter().max().unwrap() + 1) as u32))
                    .sum();
                expected += (nc as u128).pow(n as u32) * (nt as u128).pow(k as u32) * line_sum;
            }
            assert_eq!(candidate_count(n, nc, nt, nl), expected);
        }
    }
}

#[test]
fn brute_force_rejects_large_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_problem(&mut rng, 8, 1, 1);
    assert!(matches!(
        brute_force(&p.inst, &p.rulebook, &p.model, &RunConfig::default()),
        Err(OptimizerError::InstanceTooLarge { components: 8, .. })
    ));
    let p = random_problem(&mut rng, 5, 4, 3);
    assert!(matches!(
        brute_force(&p.inst, &p.rulebook, &p.model, &RunConfig::default()),
        Err(OptimizerError::InstanceTooLarge { .. })
    ));
}

#[test]
fn anneal_flat_landscape_scores_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_problem(&mut rng, 4, 2, 2);
    let config = RunConfig {
        lambdas: [0.0; 5],
        ..quick_config(1)
    };
    let report = anneal(&p.inst, &p.rulebook, &p.model, &config).unwrap();
    assert_eq!(report.best_score.total, 0.0);
    assert_eq!(validate_structure(&report.best, &p.inst), Ok(()));
}

#[test]
fn anneal_is_deterministic_and_never_regresses() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let n = rng.gen_range(1..6);
        let p = random_problem(&mut rng, n, 3, 2);
        let config = quick_config(rng.gen());
        let a = anneal(&p.inst, &p.rulebook, &p.model, &config).unwrap();
        let b = anneal(&p.inst, &p.rulebook, &p.model, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(validate_structure(&a.best, &p.inst), Ok(()));
        let start = score(&initial_solution(&p.inst, INITIAL_THRESHOLD), &p.inst, &p.rulebook, &p.model, &config);
        assert!(a.best_score.total >= start.total);
        assert_eq!(a.best_score, score(&a.best, &p.inst, &p.rulebook, &p.model, &config));
    }
}

#[test]
fn anneal_with_no_iterations_returns_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_problem(&mut rng, 3, 2, 2);
    let config = RunConfig {
        annealing: AnnealingSchedule {
            iters: 0,
            ..AnnealingSchedule::default()
        },
        ..RunConfig::default()
    };
    let report = anneal(&p.inst, &p.rulebook, &p.model, &config).unwrap();
    assert_eq!(report.best, initial_solution(&p.inst, INITIAL_THRESHOLD).normalize_lines());
    assert_eq!(report.accepted_moves, 0);
}

#[test]
fn anneal_recovers_unique_optimum() {
    // two sections {0,1} and {2}: evidence is certain everywhere
    let probs = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let mut conn = Array2::zeros((3, 3));
    conn[[0, 1]] = 1.0;
    conn[[1, 0]] = 1.0;
    let mut rel = Array3::zeros((3, 3, 2));
    rel[[0, 1, 0]] = 1.0;
    rel[[1, 0, 0]] = 1.0;
    let inst = instance(probs, conn, rel);
    let mut rb = Rulebook::permissive(2, 2);
    rb.set_section_rule(0, vec![0], vec![]);
    rb.set_section_rule(1, vec![1], vec![]);
    rb.set_line_rule(0, vec![0, 1]);
    let record = RegistryRecord {
        plant_id: "p".into(),
        lines: vec![RegistryLine {
            line_type: 0,
            sections: vec![
                RegistrySection {
                    section_type: 0,
                    components: vec![0, 0],
                },
                RegistrySection {
                    section_type: 1,
                    components: vec![1],
                },
            ],
        }],
    };
    let model = fit_plausibility(&[record], inst.vocab(), 1.0).unwrap();
    let config = quick_config(3);
    let report = anneal(&inst, &rb, &model, &config).unwrap();
    let oracle = brute_force(&inst, &rb, &model, &config).unwrap();
    let expected = HierarchicalStructure {
        section_of: vec![0, 0, 1],
        line_of: vec![0, 0],
        component_class: vec![0, 0, 1],
        section_class: vec![0, 1],
        line_class: vec![0],
    };
    assert_eq!(oracle.best, expected);
    assert_eq!(report.best, expected);
}

#[test]
fn anneal_matches_oracle_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut hits = 0;
    for _ in 0..10 {
        let n = rng.gen_range(1..5);
        let p = random_problem(&mut rng, n, 2, 2);
        let config = quick_config(rng.gen());
        let a = anneal(&p.inst, &p.rulebook, &p.model, &config).unwrap();
        let b = brute_force(&p.inst, &p.rulebook, &p.model, &config).unwrap();
        assert!(a.best_score.total <= b.best_score.total);
        hits += usize::from(a.best_score.total == b.best_score.total);
    }
    assert!(hits >= 9, "{hits}/10");
}

#[test]
fn line_normalization_keeps_score_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_problem(&mut rng, 4, 2, 2);
    let config = RunConfig::default();
    let scorer = Scorer::new(&p.inst, &p.rulebook, &p.model, &config);
    for s in all_structures(4, 1, 2, 2).iter().step_by(7) {
        assert_eq!(scorer.score(s), scorer.score(&s.normalize_lines()));
    }
}
