//! Analytic gradients of `Σ u_rel·Ĝ_rel + Σ u_conn·Ĝ_conn` through the
//! gate MLP, the gated product-sum and the two prediction MLPs.

use ndarray::{s, Array2, Array3, Axis};

use super::layers::{sigmoid, Mlp};
use super::{build_local_relations, expert_layers, flat, rel_transformer_queries, shape_error, DecoderTrace, EgrtrError, RelationHeadState};

/// Upstream gradients with respect to the two predicted graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    pub g_rel: Array3<f64>,
    pub g_conn: Array2<f64>,
}

impl Upstream {
    /// The plain sum of every predicted entry.
    pub fn ones(state: &RelationHeadState) -> Self {
        let c = &state.config;
        Self {
            g_rel: Array3::ones((c.n, c.n, c.n_rel_classes)),
            g_conn: Array2::ones((c.n, c.n)),
        }
    }

    pub fn zeros(state: &RelationHeadState) -> Self {
        let c = &state.config;
        Self {
            g_rel: Array3::zeros((c.n, c.n, c.n_rel_classes)),
            g_conn: Array2::zeros((c.n, c.n)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub mlp_gate: Mlp,
    pub mlp_rel: Mlp,
    pub mlp_conn: Mlp,
    /// with respect to each R̃^l, N × N × 3d
    pub rtilde: Vec<Array3<f64>>,
    /// with respect to the expert rows passed in; rows past L are unused
    pub experts: Array2<f64>,
}

fn zeros_like(m: &Mlp) -> Mlp {
    Mlp::zeros(m.hidden.inputs(), m.hidden.outputs(), m.out.outputs())
}

fn check_upstream(up: &Upstream, state: &RelationHeadState) -> Result<(), EgrtrError> {
    let c = &state.config;
    if up.g_rel.dim() != (c.n, c.n, c.n_rel_classes) {
        return Err(shape_error("upstream g_rel", &[c.n, c.n, c.n_rel_classes], up.g_rel.shape()));
    }
    if up.g_conn.dim() != (c.n, c.n) {
        return Err(shape_error("upstream g_conn", &[c.n, c.n], up.g_conn.shape()));
    }
    Ok(())
}

/// Upstream-weighted predictions, one term per output entry.
fn head_terms(rtilde: &[Array3<f64>], state: &RelationHeadState, up: &Upstream) -> Vec<f64> {
    let (fused, _) = super::fuse_layers(rtilde, state);
    let x = flat(&fused);
    let rel = state.mlp_rel.forward(x).mapv(sigmoid);
    let conn = state.mlp_conn.forward(x).mapv(sigmoid);
    let n = state.config.n;
    let rel_up = up.g_rel.view().into_shape_with_order((n * n, state.config.n_rel_classes)).expect("standard layout");
    let conn_up = up.g_conn.view().into_shape_with_order((n * n, 1)).expect("standard layout");
    (&rel * &rel_up).into_iter().chain(&conn * &conn_up).collect()
}

/// Scalar loss of the fusion and prediction path.
pub fn head_loss(rtilde: &[Array3<f64>], state: &RelationHeadState, up: &Upstream) -> f64 {
    head_terms(rtilde, state, up).iter().sum()
}

/// Central difference of [`head_loss`], differencing each term before
/// summing so that roundoff in the large total does not swamp small slopes.
pub fn central_difference(plus: &[f64], minus: &[f64], step: f64) -> f64 {
    plus.iter().zip(minus).map(|(p, m)| p - m).sum::<f64>() / (2.0 * step)
}

/// Gradients for the gate and head MLPs and for their inputs.
pub fn head_backward(
    r_a: &[Array3<f64>],
    r_z: &Array3<f64>,
    experts: &Array2<f64>,
    state: &RelationHeadState,
    up: &Upstream,
) -> Result<HeadGradients, EgrtrError> {
    let config = &state.config;
    check_upstream(up, state)?;
    let rtilde = expert_layers(r_a, r_z, experts, config)?;
    let (n, d) = (config.n, config.d_model);
    let m = n * n;

    // forward with caches
    let inputs: Vec<_> = rtilde.iter().map(flat).collect();
    let mut gate_caches = Vec::with_capacity(inputs.len());
    let mut gates = Vec::with_capacity(inputs.len());
    let mut fused = Array2::<f64>::zeros((m, 3 * d));
    for x in &inputs {
        let (logit, cache) = state.mlp_gate.forward_cached(*x);
        let g = logit.mapv(sigmoid);
        fused += &(x * &g);
        gates.push(g);
        gate_caches.push(cache);
    }
    let (rel_logit, rel_cache) = state.mlp_rel.forward_cached(fused.view());
    let (conn_logit, conn_cache) = state.mlp_conn.forward_cached(fused.view());

    let mut grads = HeadGradients {
        mlp_gate: zeros_like(&state.mlp_gate),
        mlp_rel: zeros_like(&state.mlp_rel),
        mlp_conn: zeros_like(&state.mlp_conn),
        rtilde: Vec::with_capacity(inputs.len()),
        experts: Array2::zeros(experts.dim()),
    };

    let sig_grad = |logit: &Array2<f64>| logit.mapv(|v| {
        let s = sigmoid(v);
        s * (1.0 - s)
    });
    let rel_up = up.g_rel.view().into_shape_with_order((m, config.n_rel_classes)).expect("standard layout");
    let conn_up = up.g_conn.view().into_shape_with_order((m, 1)).expect("standard layout");
    let d_rel = &rel_up * &sig_grad(&rel_logit);
    let d_conn = &conn_up * &sig_grad(&conn_logit);
    let mut d_fused = state.mlp_rel.backward(fused.view(), &rel_cache, d_rel.view(), &mut grads.mlp_rel);
    d_fused += &state.mlp_conn.backward(fused.view(), &conn_cache, d_conn.view(), &mut grads.mlp_conn);

    for (l, x) in inputs.iter().enumerate() {
        let g = &gates[l];
        // fused = Σ g ⊙ x: direct path plus the gate's dependence on x
        let d_g = (&d_fused * x).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_logit = &d_g * &(g * &g.mapv(|v| 1.0 - v));
        let mut d_x = &d_fused * g;
        d_x += &state.mlp_gate.backward(*x, &gate_caches[l], d_logit.view(), &mut grads.mlp_gate);
        let d_expert = d_x.slice(s![.., 2 * d..]).sum_axis(Axis(0));
        grads.experts.row_mut(l).assign(&d_expert);
        grads.rtilde.push(d_x.into_shape_with_order((n, n, 3 * d)).expect("pairs reshape to N × N"));
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// number of gate and head parameters compared
    pub parameters: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// parameter with the largest relative error
    pub worst: String,
}

/// Relative error `|a − n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares [`head_backward`] with central differences of [`head_loss`]
/// over every parameter of `mlp_gate`, `mlp_rel` and `mlp_conn`, with the
/// sum of all predicted entries as the loss.
pub fn gradient_check(trace: &DecoderTrace, state: &RelationHeadState, step: f64) -> Result<GradientCheck, EgrtrError> {
    let (r_a, r_z) = build_local_relations(trace, state)?;
    let experts = rel_transformer_queries(trace, state)?;
    let up = Upstream::ones(state);
    let grads = head_backward(&r_a, &r_z, &experts, state, &up)?;
    let rtilde = expert_layers(&r_a, &r_z, &experts, &state.config)?;

    let mut analytic_state = state.clone();
    analytic_state.mlp_gate = grads.mlp_gate;
    analytic_state.mlp_rel = grads.mlp_rel;
    analytic_state.mlp_conn = grads.mlp_conn;
    let analytic: Vec<(String, Vec<f64>)> = analytic_state
        .params_mut()
        .into_iter()
        .map(|p| (p.name, p.values.to_vec()))
        .collect();

    let mut probe = state.clone();
    let mut report = GradientCheck {
        parameters: 0,
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst: String::new(),
    };
    for (k, (name, values)) in analytic.iter().enumerate() {
        if !name.starts_with("mlp_") {
            continue;
        }
        for (e, &a) in values.iter().enumerate() {
            let original = probe.params_mut()[k].values[e];
            probe.params_mut()[k].values[e] = original + step;
            let plus = head_terms(&rtilde, &probe, &up);
            probe.params_mut()[k].values[e] = original - step;
            let minus = head_terms(&rtilde, &probe, &up);
            probe.params_mut()[k].values[e] = original;
            let numeric = central_difference(&plus, &minus, step);
            let rel = relative_error(a, numeric);
            report.parameters += 1;
            report.max_absolute_error = report.max_absolute_error.max((a - numeric).abs());
            if rel > report.max_relative_error || report.worst.is_empty() {
                report.max_relative_error = report.max_relative_error.max(rel);
                report.worst = format!("{name}[{e}]");
            }
        }
    }
    Ok(report)
}
