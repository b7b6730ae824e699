use approx::assert_abs_diff_eq;
use ndarray::{array, s, Array2, Array3};
use proptest::prelude::*;

use super::backward::{head_loss, relative_error};
use super::*;

fn config(n: usize, d: usize, layers: usize) -> HeadConfig {
    HeadConfig::new(n, d, layers, 3)
}

fn fixture() -> (DecoderTrace, RelationHeadState) {
    let c = config(3, 8, 2);
    (DecoderTrace::random(&c, 5, 11), init_state(c, 4).unwrap())
}

#[test]
fn init_is_seeded() {
    let c = config(4, 8, 2);
    assert_eq!(init_state(c, 0).unwrap(), init_state(c, 0).unwrap());
    assert_ne!(init_state(c, 0).unwrap().proj_q, init_state(c, 1).unwrap().proj_q);
    let bad = HeadConfig { d_model: 6, ..c };
    assert_eq!(init_state(bad, 0), Err(EgrtrError::Heads { d_model: 6, heads: 4 }));
}

#[test]
fn init_respects_fan_in_bounds_and_zero_biases() {
    let mut state = init_state(config(3, 16, 2), 9).unwrap();
    for p in state.params_mut() {
        if p.name.ends_with(".bias") {
            assert!(p.values.iter().all(|&v| v == 0.0), "{}", p.name);
        } else {
            let bound = 1.0 / (*p.shape.last().unwrap() as f64).sqrt();
            assert!(p.values.iter().all(|v| v.abs() < bound), "{}", p.name);
            assert!(p.values.iter().any(|&v| v != 0.0), "{}", p.name);
        }
    }
}

#[test]
fn tensors_are_keyed_by_position() {
    // a deeper relation decoder leaves the earlier tensors untouched
    let c = config(3, 8, 2);
    let a = init_state(c, 5).unwrap();
    let b = init_state(HeadConfig { n_rel_layers: 3, ..c }, 5).unwrap();
    assert_eq!(a.proj_q, b.proj_q);
    assert_eq!(a.rel_decoder[1], b.rel_decoder[1]);
}

#[test]
fn sinusoidal_examples() {
    let pe = sinusoidal_pe(6, 8).unwrap();
    assert_eq!(pe.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(pe, sinusoidal_pe(6, 8).unwrap());
    assert_eq!(pe[[1, 0]], 1f64.sin());
    assert_eq!(pe[[1, 3]], (1.0 / 10000f64.powf(0.25)).cos());
    assert_eq!(sinusoidal_pe(2, 5), Err(EgrtrError::OddWidth(5)));
}

fn hand_state() -> RelationHeadState {
    let c = HeadConfig {
        heads: 2,
        hidden: 1,
        ..HeadConfig::new(2, 2, 1, 1)
    };
    let mut state = RelationHeadState::zeros(c).unwrap();
    state.proj_q = Linear {
        weight: array![[1.0, 0.0], [0.0, 2.0]],
        bias: array![0.0, 1.0],
    };
    state.proj_k = Linear {
        weight: array![[0.0, 1.0], [1.0, 0.0]],
        bias: array![0.0, 0.0],
    };
    state.proj_sub = Linear {
        weight: Array2::eye(2),
        bias: array![1.0, 1.0],
    };
    state.proj_obj = Linear {
        weight: array![[2.0, 0.0], [0.0, 0.0]],
        bias: array![0.0, 0.0],
    };
    state
}

fn hand_trace() -> DecoderTrace {
    DecoderTrace {
        f_enc: array![[0.5, -0.5]],
        z: vec![array![[1.0, 2.0], [3.0, 4.0]], array![[0.0, 1.0], [1.0, 0.0]]],
    }
}

#[test]
fn local_relations_hand_fixture() {
    let (r_a, r_z) = build_local_relations(&hand_trace(), &hand_state()).unwrap();
    let expected_a = Array3::from_shape_vec(
        (2, 2, 4),
        vec![1., 5., 2., 1., 1., 5., 4., 3., 3., 9., 2., 1., 3., 9., 4., 3.],
    )
    .unwrap();
    let expected_z = Array3::from_shape_vec(
        (2, 2, 4),
        vec![1., 2., 0., 0., 1., 2., 2., 0., 2., 1., 0., 0., 2., 1., 2., 0.],
    )
    .unwrap();
    assert_eq!(r_a, vec![expected_a]);
    assert_eq!(r_z, expected_z);
}

#[test]
fn identity_projections_concatenate_rows() {
    let c = config(3, 4, 2);
    let mut state = RelationHeadState::zeros(c).unwrap();
    for l in [&mut state.proj_q, &mut state.proj_k] {
        l.weight = Array2::eye(4);
    }
    let trace = DecoderTrace::random(&c, 2, 3);
    let (r_a, _) = build_local_relations(&trace, &state).unwrap();
    for (l, r) in r_a.iter().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.slice(s![i, j, ..4]), trace.z[l].row(i));
                assert_eq!(r.slice(s![i, j, 4..]), trace.z[l].row(j));
            }
        }
    }
}

#[test]
fn first_half_ignores_object_index() {
    let (trace, state) = fixture();
    let (r_a, _) = build_local_relations(&trace, &state).unwrap();
    for r in &r_a {
        for i in 0..3 {
            for j in 1..3 {
                assert_eq!(r.slice(s![i, j, ..8]), r.slice(s![i, 0, ..8]));
            }
        }
    }
}

#[test]
fn trace_shape_is_checked() {
    let (mut trace, state) = fixture();
    trace.z.pop();
    assert!(matches!(build_local_relations(&trace, &state), Err(EgrtrError::Shape { .. })));
    let (mut trace, _) = fixture();
    trace.f_enc = Array2::zeros((4, 6));
    assert!(matches!(rel_transformer_forward(&trace, &state), Err(EgrtrError::Shape { .. })));
}

#[test]
fn transformer_output_shape() {
    for layers in 1..=4 {
        let c = config(2, 8, layers);
        let state = init_state(c, 1).unwrap();
        let experts = rel_transformer_forward(&DecoderTrace::random(&c, 3, 2), &state).unwrap();
        assert_eq!(experts.dim(), (layers + 1, 8));
    }
}

#[test]
fn zero_layers_reduce_to_normalized_queries() {
    let c = config(4, 8, 2);
    let mut state = RelationHeadState::zeros(c).unwrap();
    state.rel_queries = init_state(c, 3).unwrap().rel_queries;
    let experts = rel_transformer_forward(&DecoderTrace::random(&c, 3, 1), &state).unwrap();
    let expected = layer_norm(state.rel_queries.slice(s![..3, ..]));
    assert_eq!(experts, expected);
}

#[test]
fn encoder_order_is_irrelevant_without_positional_encoding() {
    let c = HeadConfig {
        encoder_pe: false,
        ..config(3, 8, 2)
    };
    let state = init_state(c, 6).unwrap();
    let trace = DecoderTrace::random(&c, 6, 8);
    let mut reversed = trace.clone();
    reversed.f_enc.invert_axis(ndarray::Axis(0));
    let a = rel_transformer_forward(&trace, &state).unwrap();
    let b = rel_transformer_forward(&reversed, &state).unwrap();
    assert_abs_diff_eq!(a, b, epsilon = 1e-12);

    // with the encoding on, token order matters
    let with_pe = init_state(HeadConfig { encoder_pe: true, ..c }, 6).unwrap();
    let a = rel_transformer_forward(&trace, &with_pe).unwrap();
    let b = rel_transformer_forward(&reversed, &with_pe).unwrap();
    assert!((&a - &b).iter().any(|v| v.abs() > 1e-9));
}

#[test]
fn zero_gate_weights_average_layers() {
    let (trace, mut state) = fixture();
    state.mlp_gate = Mlp::zeros(24, 16, 1);
    let (r_a, r_z) = build_local_relations(&trace, &state).unwrap();
    let experts = rel_transformer_forward(&trace, &state).unwrap();
    let (fused, gates) = gated_fusion(&r_a, &r_z, &experts, &state).unwrap();
    assert!(gates.iter().all(|&g| g == 0.5));
    let rtilde = expert_layers(&r_a, &r_z, &experts, &state.config).unwrap();
    let sum = rtilde.iter().fold(Array3::zeros(fused.dim()), |acc, r| acc + r);
    assert_abs_diff_eq!(fused, sum * 0.5, epsilon = 1e-12);
}

#[test]
fn single_layer_fusion_by_hand() {
    let mut state = hand_state();
    // gate logit = gelu(first feature)
    state.mlp_gate.hidden.weight[[0, 0]] = 1.0;
    state.mlp_gate.out.weight[[0, 0]] = 1.0;
    let trace = hand_trace();
    let (r_a, r_z) = build_local_relations(&trace, &state).unwrap();
    let experts = array![[0.25, -1.0], [2.0, 0.5]];
    let (fused, gates) = gated_fusion(&r_a, &r_z, &experts, &state).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let layer0: Vec<f64> = r_a[0].slice(s![i, j, ..]).iter().copied().chain([0.25, -1.0]).collect();
            let layer1: Vec<f64> = r_z.slice(s![i, j, ..]).iter().copied().chain([2.0, 0.5]).collect();
            let g0 = sigmoid(gelu(layer0[0]));
            let g1 = sigmoid(gelu(layer1[0]));
            assert_eq!(gates[[0, i, j]], g0);
            assert_eq!(gates[[1, i, j]], g1);
            for f in 0..6 {
                assert_abs_diff_eq!(fused[[i, j, f]], g0 * layer0[f] + g1 * layer1[f], epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn prediction_shapes_and_zero_weights() {
    let c = HeadConfig::new(4, 8, 2, 5);
    let state = init_state(c, 2).unwrap();
    let out = forward(&DecoderTrace::random(&c, 4, 0), &state).unwrap();
    assert_eq!(out.g_rel.dim(), (4, 4, 5));
    assert_eq!(out.g_conn.dim(), (4, 4));
    assert_eq!(out.fused.dim(), (4, 4, 24));
    assert_eq!(out.gates.dim(), (3, 4, 4));

    let zero = RelationHeadState::zeros(c).unwrap();
    let (g_rel, g_conn) = predict_graphs(&out.fused, &zero).unwrap();
    assert!(g_rel.iter().chain(g_conn.iter()).all(|&v| v == 0.5));
    assert!(matches!(predict_graphs(&Array3::zeros((4, 4, 8)), &zero), Err(EgrtrError::Shape { .. })));
}

#[test]
fn prediction_builds_an_instance() {
    use crate::plant::{BBox, ComponentClass, Detection};
    let c = HeadConfig::new(3, 8, 1, 2);
    let state = init_state(c, 0).unwrap();
    let out = forward(&DecoderTrace::random(&c, 4, 0), &state).unwrap();
    let vocab = ClassVocabularies::new(
        vec![ComponentClass::new("valve", "ball")],
        vec!["a".into(), "b".into()],
        vec!["measurement".into(), "regulation".into()],
    )
    .unwrap();
    let detections = (0..3)
        .map(|i| Detection::new(i, BBox::new(i as f64, 0.0, 1.0, 1.0), vec![1.0]).unwrap())
        .collect();
    let inst = instance_from_prediction(vocab, detections, &out).unwrap();
    assert!((0..3).all(|i| inst.g_conn()[[i, i]] == 0.0));
    assert_eq!(inst.g_conn()[[0, 1]], out.g_conn[[0, 1]]);
    assert_eq!(inst.g_rel(), &out.g_rel);
}

#[test]
fn forward_is_pure() {
    let (trace, state) = fixture();
    assert_eq!(forward(&trace, &state).unwrap(), forward(&trace, &state).unwrap());
}

#[test]
fn gradients_match_finite_differences() {
    let (trace, state) = fixture();
    let check = gradient_check(&trace, &state, 1e-5).unwrap();
    let c = &state.config;
    let fused = 3 * c.d_model;
    let per_mlp = |out: usize| fused * c.hidden + c.hidden + c.hidden * out + out;
    assert_eq!(check.parameters, 2 * per_mlp(1) + per_mlp(c.n_rel_classes));
    assert!(check.max_relative_error < 1e-4, "{check:?}");
}

#[test]
fn input_gradients_match_finite_differences() {
    let (trace, state) = fixture();
    let (r_a, r_z) = build_local_relations(&trace, &state).unwrap();
    let experts = rel_transformer_queries(&trace, &state).unwrap();
    let up = Upstream::ones(&state);
    let grads = head_backward(&r_a, &r_z, &experts, &state, &up).unwrap();
    let rtilde = expert_layers(&r_a, &r_z, &experts, &state.config).unwrap();
    let h = 1e-5;
    for l in 0..rtilde.len() {
        for idx in [(0, 0, 0), (1, 2, 5), (2, 1, 17), (2, 2, 23)] {
            let mut plus = rtilde.clone();
            plus[l][idx] += h;
            let mut minus = rtilde.clone();
            minus[l][idx] -= h;
            let numeric = (head_loss(&plus, &state, &up) - head_loss(&minus, &state, &up)) / (2.0 * h);
            assert!(relative_error(grads.rtilde[l][idx], numeric) < 1e-4, "layer {l} {idx:?}");
        }
        // expert rows feed every pair of their layer
        let mut plus = experts.clone();
        plus[[l, 3]] += h;
        let mut minus = experts.clone();
        minus[[l, 3]] -= h;
        let lp = head_loss(&expert_layers(&r_a, &r_z, &plus, &state.config).unwrap(), &state, &up);
        let lm = head_loss(&expert_layers(&r_a, &r_z, &minus, &state.config).unwrap(), &state, &up);
        assert!(relative_error(grads.experts[[l, 3]], (lp - lm) / (2.0 * h)) < 1e-4);
    }
}

#[test]
fn zero_upstream_and_unused_experts_have_zero_gradient() {
    let c = config(5, 8, 2);
    let state = init_state(c, 3).unwrap();
    let trace = DecoderTrace::random(&c, 4, 3);
    let (r_a, r_z) = build_local_relations(&trace, &state).unwrap();
    let experts = rel_transformer_queries(&trace, &state).unwrap();
    assert_eq!(experts.nrows(), 5);

    let zero = head_backward(&r_a, &r_z, &experts, &state, &Upstream::zeros(&state)).unwrap();
    let mut copy = state.clone();
    copy.mlp_gate = zero.mlp_gate;
    copy.mlp_rel = zero.mlp_rel;
    copy.mlp_conn = zero.mlp_conn;
    for p in copy.params_mut().into_iter().filter(|p| p.name.starts_with("mlp_")) {
        assert!(p.values.iter().all(|&v| v == 0.0), "{}", p.name);
    }

    let grads = head_backward(&r_a, &r_z, &experts, &state, &Upstream::ones(&state)).unwrap();
    assert!(grads.experts.slice(s![3.., ..]).iter().all(|&v| v == 0.0));
    assert!(grads.experts.slice(s![..3, ..]).iter().any(|&v| v != 0.0));
}

#[test]
fn weights_document_round_trips() {
    let (_, state) = fixture();
    let doc = state.to_document();
    let json = serde_json::to_string(&doc).unwrap();
    let back: WeightsDocument = serde_json::from_str(&json).unwrap();
    assert_eq!(RelationHeadState::from_document(&back).unwrap(), state);

    let mut bad = doc.clone();
    bad.tensors[0].shape = vec![1, 1];
    assert!(matches!(RelationHeadState::from_document(&bad), Err(EgrtrError::Shape { .. })));
    let mut bad = doc;
    bad.tensors.pop();
    assert!(matches!(RelationHeadState::from_document(&bad), Err(EgrtrError::Document(_))));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn outputs_stay_in_range(n in 2usize..6, d_pow in 2u32..5, layers in 1usize..4, classes in 1usize..4, seed in 0u64..1000) {
        let c = HeadConfig::new(n, 1 << d_pow, layers, classes);
        let state = init_state(c, seed).unwrap();
        let out = forward(&DecoderTrace::random(&c, 3, seed + 1), &state).unwrap();
        prop_assert!(out.g_rel.iter().chain(out.g_conn.iter()).all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(out.gates.iter().all(|&g| g > 0.0 && g < 1.0));
        for (l, r) in out.r_prime.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(r.slice(s![i, j, ..]), out.experts.row(l));
                }
            }
        }
    }
}
