use ndarray::{Array2, Array3};
use proptest::prelude::*;

use super::*;
use crate::ingest::{RegistryLine, RegistryRecord, RegistrySection};
use crate::plant::tests::{all_structures, arb_structure, vocab};
use crate::plant::{BBox, Detection};

const EPS: f64 = 1e-9;

fn instance(probs: Vec<Vec<f64>>, conn: Array2<f64>, rel: Array3<f64>) -> PlantInstance {
    let nc = probs[0].len();
    let nt = rel.dim().2;
    let dets = probs
        .into_iter()
        .enumerate()
        .map(|(i, p)| Detection::new(i, BBox::new(0.0, 0.0, 1.0, 1.0), p).unwrap())
        .collect();
    PlantInstance::new(vocab(nc, nt), dets, conn, rel).unwrap()
}

fn pair_section(class: usize) -> HierarchicalStructure {
    HierarchicalStructure {
        section_of: vec![0, 0],
        line_of: vec![0],
        component_class: vec![0, 0],
        section_class: vec![class],
        line_class: vec![0],
    }
}

#[test]
fn node_energy_examples() {
    let inst = instance(vec![vec![1.0, 0.0], vec![1.0, 0.0]], Array2::zeros((2, 2)), Array3::zeros((2, 2, 1)));
    let s = HierarchicalStructure::singletons(2);
    assert_eq!(e_node(&s, &inst, EPS), 0.0);

    let inst = instance(vec![vec![0.5, 0.5], vec![0.5, 0.5]], Array2::zeros((2, 2)), Array3::zeros((2, 2, 1)));
    assert!((e_node(&s, &inst, EPS) - 2.0 * 0.5f64.ln()).abs() < 1e-12);

    let inst = instance(vec![vec![0.0, 1.0]], Array2::zeros((1, 1)), Array3::zeros((1, 1, 1)));
    let s = HierarchicalStructure::singletons(1);
    assert!((e_node(&s, &inst, EPS) - 1e-9f64.ln()).abs() < 1e-12);
}

#[test]
fn edge_energy_examples() {
    let p = vec![vec![1.0], vec![1.0]];
    let inst = instance(p.clone(), Array2::from_elem((2, 2), 0.3), Array3::from_elem((2, 2, 1), 0.3));
    assert_eq!(e_edge(&HierarchicalStructure::singletons(2), &inst, EPS), 0.0);

    let inst = instance(p.clone(), Array2::ones((2, 2)), Array3::ones((2, 2, 1)));
    assert_eq!(e_edge(&pair_section(0), &inst, EPS), 0.0);

    let inst = instance(p, Array2::from_elem((2, 2), 0.5), Array3::ones((2, 2, 1)));
    assert!((e_edge(&pair_section(0), &inst, EPS) - 2.0 * 0.5f64.ln()).abs() < 1e-12);
}

#[test]
fn reg_energy_examples() {
    let s = HierarchicalStructure {
        section_of: vec![0, 0, 1, 1, 1],
        line_of: vec![0, 0],
        component_class: vec![0; 5],
        section_class: vec![0, 0],
        line_class: vec![0],
    };
    assert_eq!(e_reg(&s, &[1.0, 1.0, 1.0]), 16.0);
    assert_eq!(e_reg(&s, &[0.0, 0.0, 0.0]), 0.0);
    let s = HierarchicalStructure::singletons(4);
    assert_eq!(e_reg(&s, &[0.3, 0.7, 1.0]), 0.3 * 4.0 + 0.7 + 4.0);
}

fn compliance_rulebook() -> Rulebook {
    // section 0 needs class 0; line 0 needs sections [0]; line 1 needs [1]
    let mut rb = Rulebook::permissive(2, 2);
    rb.set_section_rule(0, vec![0], vec![]);
    rb.set_section_rule(1, vec![1], vec![]);
    rb.set_line_rule(0, vec![0]);
    rb.set_line_rule(1, vec![1]);
    rb
}

#[test]
fn norm_energy_examples() {
    let inst = instance(vec![vec![1.0, 0.0]], Array2::zeros((1, 1)), Array3::zeros((1, 1, 2)));
    let rb = compliance_rulebook();
    let mut s = HierarchicalStructure::singletons(1);
    assert_eq!(e_norm(&s, &inst, &rb, EPS), 0.0);
    // section compliant, line requires section type 1
    s.line_class = vec![1];
    assert!((e_norm(&s, &inst, &rb, EPS) - 2f64.ln()).abs() < 1e-12);
    // nothing compliant
    s.component_class = vec![1];
    assert!((e_norm(&s, &inst, &rb, EPS) + 1e-9f64.ln()).abs() < 1e-12);
}

fn registry_record(id: &str, lines: &[(usize, &[(usize, &[usize])])]) -> RegistryRecord {
    RegistryRecord {
        plant_id: id.into(),
        lines: lines
            .iter()
            .map(|(lt, secs)| RegistryLine {
                line_type: *lt,
                sections: secs
                    .iter()
                    .map(|(st, comps)| RegistrySection {
                        section_type: *st,
                        components: comps.to_vec(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

#[test]
fn struct_energy_maximized_by_registry_composition() {
    // single plant: one measurement line with one section {0, 1, 1} of type 1
    let registry = vec![registry_record("p", &[(0, &[(1, &[0, 1, 1])])])];
    let model = fit_plausibility(&registry, &vocab(2, 2), 1.0).unwrap();
    let inst = instance(vec![vec![0.5, 0.5]; 3], Array2::zeros((3, 3)), Array3::zeros((3, 3, 2)));
    let target = HierarchicalStructure {
        section_of: vec![0, 0, 0],
        line_of: vec![0],
        component_class: vec![0, 1, 1],
        section_class: vec![1],
        line_class: vec![0],
    };
    let best = e_struct(&target, &inst, &model);
    let all = all_structures(3, 2, 2, 2);
    assert!(all.len() > 1000);
    for s in &all {
        let v = e_struct(s, &inst, &model);
        let same_composition = s.n_sections() == 1 && s.section_class == [1] && s.line_class == [0] && {
            let mut c = s.component_class.clone();
            c.sort_unstable();
            c == [0, 1, 1]
        };
        if same_composition {
            assert_eq!(v, best);
        } else {
            assert!(v < best, "{s:?} scores {v} >= {best}");
        }
    }
}

#[test]
fn struct_energy_floor_for_unseen() {
    let registry = vec![
        registry_record("a", &[(0, &[(0, &[0, 0])])]),
        registry_record("b", &[(0, &[(0, &[0, 0])]), (1, &[(0, &[0, 0])])]),
    ];
    let model = fit_plausibility(&registry, &vocab(2, 2), 1.0).unwrap();
    let inst = instance(vec![vec![0.5, 0.5]; 2], Array2::zeros((2, 2)), Array3::zeros((2, 2, 2)));
    // section type 0 saw {0, 0} three times: unseen floor 1 / (3 + 2)
    // line type 1 saw [0] once: unseen floor 1 / (1 + 2)
    let s = HierarchicalStructure {
        section_of: vec![0, 1],
        line_of: vec![0, 0],
        component_class: vec![1, 1],
        section_class: vec![0, 0],
        line_class: vec![1],
    };
    let expected = (1.0f64 / 5.0).ln() + (1.0f64 / 3.0).ln();
    assert!((e_struct(&s, &inst, &model) - expected).abs() < 1e-12);
}

fn f1() -> (PlantInstance, Rulebook, PlausibilityModel) {
    let mut conn = Array2::from_elem((3, 3), 0.2);
    conn[[0, 1]] = 0.9;
    conn[[1, 0]] = 0.8;
    let mut rel = Array3::from_elem((3, 3, 2), 0.1);
    rel[[0, 1, 0]] = 0.7;
    rel[[1, 0, 0]] = 0.6;
    rel[[1, 2, 1]] = 0.4;
    let inst = instance(
        vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.6, 0.3], vec![0.25, 0.25, 0.5]],
        conn,
        rel,
    );
    let mut rb = Rulebook::permissive(2, 2);
    rb.set_section_rule(0, vec![0, 1], vec![]);
    rb.set_section_rule(1, vec![2], vec![1]);
    rb.set_line_rule(0, vec![0, 1]);
    let registry = vec![
        registry_record("a", &[(0, &[(0, &[0, 1]), (1, &[2])])]),
        registry_record("b", &[(0, &[(0, &[0, 1]), (1, &[2, 1])]), (1, &[(1, &[2])])]),
    ];
    let model = fit_plausibility(&registry, &vocab(3, 2), 1.0).unwrap();
    (inst, rb, model)
}

#[test]
fn score_equals_term_sum_on_f1() {
    let (inst, rb, model) = f1();
    let config = RunConfig {
        lambdas: [1.0, 0.5, 2.0, 1.5, 0.25],
        ..RunConfig::default()
    };
    let s = HierarchicalStructure {
        section_of: vec![0, 0, 1],
        line_of: vec![0, 0],
        component_class: vec![0, 1, 2],
        section_class: vec![0, 1],
        line_class: vec![0],
    };
    let b = score(&s, &inst, &rb, &model, &config);
    let l = config.lambdas;
    let oracle = l[0] * e_node(&s, &inst, config.epsilon) + l[1] * e_edge(&s, &inst, config.epsilon)
        + l[2] * e_struct(&s, &inst, &model)
        - l[3] * e_norm(&s, &inst, &rb, config.epsilon)
        - l[4] * e_reg(&s, &config.alphas);
    assert_eq!(b.total, oracle);
    // hand arithmetic for the node and edge terms
    let node = 0.7f64.ln() + 0.6f64.ln() + 0.5f64.ln();
    let edge = (0.9f64 * 0.7).ln() + (0.8f64 * 0.6).ln();
    assert!((b.e_node - node).abs() < 1e-12);
    assert!((b.e_edge - edge).abs() < 1e-12);
    assert_eq!(b.e_norm, 0.0);
    assert_eq!(b.e_reg, 0.05 * 2.0 + 0.05 + 0.01 * 5.0);
}

#[test]
fn weight_isolation_and_cancellation() {
    let (inst, rb, model) = f1();
    let s = HierarchicalStructure {
        section_of: vec![0, 1, 1],
        line_of: vec![0, 1],
        component_class: vec![2, 0, 1],
        section_class: vec![1, 0],
        line_class: vec![1, 0],
    };
    let config = RunConfig {
        lambdas: [1.0, 0.0, 0.0, 0.0, 0.0],
        ..RunConfig::default()
    };
    let b = score(&s, &inst, &rb, &model, &config);
    assert_eq!(b.total, b.e_node);

    // certain evidence, full compliance, no regularization
    let one = instance(vec![vec![1.0, 0.0, 0.0]; 2], Array2::ones((2, 2)), Array3::ones((2, 2, 2)));
    let s = HierarchicalStructure {
        section_of: vec![0, 0],
        line_of: vec![0],
        component_class: vec![0, 0],
        section_class: vec![0],
        line_class: vec![0],
    };
    let mut rb = Rulebook::permissive(2, 2);
    rb.set_section_rule(0, vec![0], vec![]);
    let config = RunConfig {
        lambdas: [1.0, 1.0, 3.0, 1.0, 1.0],
        alphas: [0.0; 3],
        ..RunConfig::default()
    };
    let b = score(&s, &one, &rb, &model, &config);
    assert_eq!(b.total, 3.0 * b.e_struct);
}

#[test]
fn scorer_matches_free_function() {
    let (inst, rb, model) = f1();
    let config = RunConfig::default();
    let scorer = Scorer::new(&inst, &rb, &model, &config);
    for s in all_structures(3, 3, 2, 2).iter().step_by(97) {
        let b = scorer.score(s);
        assert_eq!(b.e_node, e_node(s, &inst, config.epsilon));
        assert_eq!(b.e_edge, e_edge(s, &inst, config.epsilon));
        assert_eq!(b.e_struct, e_struct(s, &inst, &model));
        assert_eq!(b.e_norm, e_norm(s, &inst, &rb, config.epsilon));
    }
}

proptest! {
    #[test]
    fn score_is_label_invariant_and_signed(s in arb_structure(3), lambdas in proptest::array::uniform5(0.0f64..3.0)) {
        let (inst, rb, model) = f1();
        let s = HierarchicalStructure { component_class: s.component_class.iter().map(|c| c % 3).collect(), section_class: s.section_class.iter().map(|c| c % 2).collect(), ..s };
        let config = RunConfig { lambdas, ..RunConfig::default() };
        let a = score(&s, &inst, &rb, &model, &config);
        let b = score(&s.canonicalize(), &inst, &rb, &model, &config);
        prop_assert_eq!(a, b);
        prop_assert!(a.e_node <= 0.0 && a.e_edge <= 0.0 && a.e_struct <= 0.0);
        prop_assert!(a.e_norm >= 0.0 && a.e_reg >= 0.0);
    }

    #[test]
    fn node_energy_monotone_in_assigned_probability(p in 0.01f64..0.98, bump in 0.0f64..1.0) {
        let s = HierarchicalStructure::singletons(1);
        let lo = instance(vec![vec![p, 1.0 - p]], Array2::zeros((1, 1)), Array3::zeros((1, 1, 1)));
        let q = p + (1.0 - p) * bump;
        let hi = instance(vec![vec![q, 1.0 - q]], Array2::zeros((1, 1)), Array3::zeros((1, 1, 1)));
        prop_assert!(e_node(&s, &hi, EPS) >= e_node(&s, &lo, EPS));
    }

    #[test]
    fn struct_energy_depends_on_composition_only(perm in Just(vec![2usize, 0, 1]).prop_shuffle()) {
        // relabel which components realize each section; compositions unchanged
        let (inst, _, model) = f1();
        let s = HierarchicalStructure {
            section_of: vec![0, 0, 1],
            line_of: vec![0, 0],
            component_class: vec![0, 1, 2],
            section_class: vec![0, 1],
            line_class: vec![0],
        };
        let t = HierarchicalStructure {
            section_of: perm.iter().map(|&p| s.section_of[p]).collect(),
            component_class: perm.iter().map(|&p| s.component_class[p]).collect(),
            ..s.clone()
        };
        prop_assert_eq!(e_struct(&s, &inst, &model), e_struct(&t, &inst, &model));
    }
}

#[test]
fn norm_energy_monotone_in_compliance() {
    // raising phi_T from 0.5 to 1 lowers e_norm
    let inst = instance(vec![vec![0.5, 0.5]; 2], Array2::zeros((2, 2)), Array3::zeros((2, 2, 1)));
    let mut rb = Rulebook::permissive(1, 2);
    rb.set_section_rule(0, vec![0, 1], vec![]);
    let mut s = pair_section(0);
    let half = e_norm(&s, &inst, &rb, EPS);
    s.component_class = vec![0, 1];
    let full = e_norm(&s, &inst, &rb, EPS);
    assert!(full < half);
    assert_eq!(full, 0.0);
}
