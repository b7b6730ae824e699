//! Forward pass of the relational head: local relation tensors from decoder
//! traces, a relation transformer over encoder and decoder features,
//! gated fusion of per-layer experts and the relation / connection
//! predictors. [`backward`] supplies analytic gradients for the fusion and
//! prediction path.

pub mod backward;
mod layers;
#[cfg(test)]
mod tests;

use ndarray::{concatenate, s, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{ClassVocabularies, Detection, PlantError, PlantInstance};

pub use backward::{gradient_check, head_backward, GradientCheck, HeadGradients, Upstream};
pub use layers::{gelu, layer_norm, sigmoid, Attention, Linear, Mlp};

#[derive(Debug, Error, PartialEq)]
pub enum EgrtrError {
    #[error("d_model {d_model} is not divisible by {heads} heads")]
    Heads { d_model: usize, heads: usize },
    #[error("sinusoidal encoding needs an even width, got {0}")]
    OddWidth(usize),
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("{what}: expected shape {expected:?}, found {found:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weights document: {0}")]
    Document(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

fn shape_error(what: impl Into<String>, expected: &[usize], found: &[usize]) -> EgrtrError {
    EgrtrError::Shape {
        what: what.into(),
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}

/// Dimensions of a relation head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    /// number of detected objects N
    pub n: usize,
    pub d_model: usize,
    /// decoder depth L; traces carry L + 1 layers
    pub layers: usize,
    pub n_rel_layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub n_rel_classes: usize,
    /// add the sinusoidal encoding to encoder features
    pub encoder_pe: bool,
}

impl HeadConfig {
    /// Defaults: 4 heads, 2 relation layers, hidden width 2·d_model.
    pub fn new(n: usize, d_model: usize, layers: usize, n_rel_classes: usize) -> Self {
        Self {
            n,
            d_model,
            layers,
            n_rel_layers: 2,
            heads: 4,
            hidden: 2 * d_model,
            n_rel_classes,
            encoder_pe: true,
        }
    }

    /// Relation queries: N, but never fewer than the L + 1 experts drawn from them.
    pub fn n_queries(&self) -> usize {
        self.n.max(self.layers + 1)
    }

    pub fn validate(&self) -> Result<(), EgrtrError> {
        let positive = [
            ("n", self.n),
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("n_rel_layers", self.n_rel_layers),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("n_rel_classes", self.n_rel_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(EgrtrError::Zero(name));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(EgrtrError::Heads {
                d_model: self.d_model,
                heads: self.heads,
            });
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(EgrtrError::OddWidth(self.d_model));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelLayer {
    pub self_attn: Attention,
    pub cross_attn: Attention,
    pub ff: Mlp,
}

/// All weights of the head. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationHeadState {
    pub config: HeadConfig,
    pub seed: u64,
    pub proj_q: Linear,
    pub proj_k: Linear,
    pub proj_sub: Linear,
    pub proj_obj: Linear,
    pub proj_enc: Linear,
    pub proj_dec: Linear,
    /// learnable positional table added to Z^L, N × d_model
    pub pe_dec: Array2<f64>,
    /// relation queries Q_rel, n_queries × d_model
    pub rel_queries: Array2<f64>,
    pub rel_decoder: Vec<RelLayer>,
    pub mlp_gate: Mlp,
    pub mlp_rel: Mlp,
    pub mlp_conn: Mlp,
}

/// Named, shaped, row-major view of one parameter tensor.
pub struct ParamMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a mut [f64],
}

fn push_array2<'a>(out: &mut Vec<ParamMut<'a>>, name: String, a: &'a mut Array2<f64>) {
    let shape = a.shape().to_vec();
    let values = a.as_slice_mut().expect("parameters are stored in standard layout");
    out.push(ParamMut { name, shape, values });
}

fn push_linear<'a>(out: &mut Vec<ParamMut<'a>>, name: &str, l: &'a mut Linear) {
    push_array2(out, format!("{name}.weight"), &mut l.weight);
    let shape = vec![l.bias.len()];
    let values = l.bias.as_slice_mut().expect("parameters are stored in standard layout");
    out.push(ParamMut {
        name: format!("{name}.bias"),
        shape,
        values,
    });
}

fn push_mlp<'a>(out: &mut Vec<ParamMut<'a>>, name: &str, m: &'a mut Mlp) {
    push_linear(out, &format!("{name}.hidden"), &mut m.hidden);
    push_linear(out, &format!("{name}.out"), &mut m.out);
}

fn push_attention<'a>(out: &mut Vec<ParamMut<'a>>, name: &str, a: &'a mut Attention) {
    push_linear(out, &format!("{name}.query"), &mut a.query);
    push_linear(out, &format!("{name}.key"), &mut a.key);
    push_linear(out, &format!("{name}.value"), &mut a.value);
    push_linear(out, &format!("{name}.output"), &mut a.output);
}

impl RelationHeadState {
    /// Every parameter set to zero.
    pub fn zeros(config: HeadConfig) -> Result<Self, EgrtrError> {
        config.validate()?;
        let d = config.d_model;
        let fused = 3 * d;
        let layer = || RelLayer {
            self_attn: Attention::zeros(d),
            cross_attn: Attention::zeros(d),
            ff: Mlp::zeros(d, config.hidden, d),
        };
        Ok(Self {
            config,
            seed: 0,
            proj_q: Linear::zeros(d, d),
            proj_k: Linear::zeros(d, d),
            proj_sub: Linear::zeros(d, d),
            proj_obj: Linear::zeros(d, d),
            proj_enc: Linear::zeros(d, d),
            proj_dec: Linear::zeros(d, d),
            pe_dec: Array2::zeros((config.n, d)),
            rel_queries: Array2::zeros((config.n_queries(), d)),
            rel_decoder: (0..config.n_rel_layers).map(|_| layer()).collect(),
            mlp_gate: Mlp::zeros(fused, config.hidden, 1),
            mlp_rel: Mlp::zeros(fused, config.hidden, config.n_rel_classes),
            mlp_conn: Mlp::zeros(fused, config.hidden, 1),
        })
    }

    /// Every parameter tensor in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let Self {
            proj_q,
            proj_k,
            proj_sub,
            proj_obj,
            proj_enc,
            proj_dec,
            pe_dec,
            rel_queries,
            rel_decoder,
            mlp_gate,
            mlp_rel,
            mlp_conn,
            ..
        } = self;
        let mut out = Vec::new();
        push_linear(&mut out, "proj_q", proj_q);
        push_linear(&mut out, "proj_k", proj_k);
        push_linear(&mut out, "proj_sub", proj_sub);
        push_linear(&mut out, "proj_obj", proj_obj);
        push_linear(&mut out, "proj_enc", proj_enc);
        push_linear(&mut out, "proj_dec", proj_dec);
        push_array2(&mut out, "pe_dec".into(), pe_dec);
        push_array2(&mut out, "rel_queries".into(), rel_queries);
        for (i, layer) in rel_decoder.iter_mut().enumerate() {
            push_attention(&mut out, &format!("rel_decoder.{i}.self_attn"), &mut layer.self_attn);
            push_attention(&mut out, &format!("rel_decoder.{i}.cross_attn"), &mut layer.cross_attn);
            push_mlp(&mut out, &format!("rel_decoder.{i}.ff"), &mut layer.ff);
        }
        push_mlp(&mut out, "mlp_gate", mlp_gate);
        push_mlp(&mut out, "mlp_rel", mlp_rel);
        push_mlp(&mut out, "mlp_conn", mlp_conn);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.clone().params_mut().iter().map(|p| p.values.len()).sum()
    }
}

/// Seeded weights: uniform(±1/√fan_in) for every weight and table, zero
/// biases. Tensor `k` in [`RelationHeadState::params_mut`] order draws from
/// ChaCha stream `k`, so each tensor depends only on the seed and its index.
pub fn init_state(config: HeadConfig, seed: u64) -> Result<RelationHeadState, EgrtrError> {
    let mut state = RelationHeadState::zeros(config)?;
    state.seed = seed;
    for (k, p) in state.params_mut().into_iter().enumerate() {
        if p.name.ends_with(".bias") {
            continue;
        }
        let fan_in = *p.shape.last().expect("tensors have at least one axis");
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for v in p.values.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
    }
    Ok(state)
}

/// Interleaved sin/cos encoding with frequency base 10000.
pub fn sinusoidal_pe(count: usize, d_model: usize) -> Result<Array2<f64>, EgrtrError> {
    if !d_model.is_multiple_of(2) {
        return Err(EgrtrError::OddWidth(d_model));
    }
    let mut pe = Array2::zeros((count, d_model));
    for pos in 0..count {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            pe[[pos, 2 * i]] = angle.sin();
            pe[[pos, 2 * i + 1]] = angle.cos();
        }
    }
    Ok(pe)
}

/// Encoder features and the per-layer decoder representations Z⁰..Z^L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderTrace {
    /// enc_token_count × d_model
    pub f_enc: Array2<f64>,
    /// L + 1 matrices of shape N × d_model
    pub z: Vec<Array2<f64>>,
}

impl DecoderTrace {
    /// Entries uniform in [−1, 1) from a seeded generator.
    pub fn random(config: &HeadConfig, enc_tokens: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut draw = |rows: usize| Array2::from_shape_simple_fn((rows, d), || rng.gen_range(-1.0..1.0));
        let f_enc = draw(enc_tokens);
        let z = (0..=config.layers).map(|_| draw(config.n)).collect();
        Self { f_enc, z }
    }

    fn check(&self, config: &HeadConfig) -> Result<(), EgrtrError> {
        let d = config.d_model;
        if self.f_enc.ncols() != d || self.f_enc.nrows() == 0 {
            return Err(shape_error("f_enc", &[self.f_enc.nrows().max(1), d], self.f_enc.shape()));
        }
        if self.z.len() != config.layers + 1 {
            return Err(shape_error("z", &[config.layers + 1], &[self.z.len()]));
        }
        for (l, z) in self.z.iter().enumerate() {
            if z.dim() != (config.n, d) {
                return Err(shape_error(format!("z[{l}]"), &[config.n, d], z.shape()));
            }
        }
        Ok(())
    }
}

/// Every intermediate and final tensor of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationTensors {
    /// L tensors N × N × 2d
    pub r_a: Vec<Array3<f64>>,
    /// N × N × 2d
    pub r_z: Array3<f64>,
    /// L + 1 broadcast expert layers, N × N × d
    pub r_prime: Vec<Array3<f64>>,
    /// (L + 1) × d
    pub experts: Array2<f64>,
    /// N × N × 3d
    pub fused: Array3<f64>,
    /// (L + 1) × N × N
    pub gates: Array3<f64>,
    /// N × N × |Y_T|
    pub g_rel: Array3<f64>,
    /// N × N
    pub g_conn: Array2<f64>,
}

/// Pairwise concatenation `out[i, j] = [a[i]; b[j]]`.
fn pair_concat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array3<f64> {
    let (n, da) = a.dim();
    let db = b.ncols();
    let mut out = Array3::zeros((n, b.nrows(), da + db));
    for i in 0..n {
        for j in 0..b.nrows() {
            out.slice_mut(s![i, j, ..da]).assign(&a.row(i));
            out.slice_mut(s![i, j, da..]).assign(&b.row(j));
        }
    }
    out
}

/// Local relation tensors R^l_a (l < L) and R_z from the decoder trace.
pub fn build_local_relations(
    trace: &DecoderTrace,
    state: &RelationHeadState,
) -> Result<(Vec<Array3<f64>>, Array3<f64>), EgrtrError> {
    trace.check(&state.config)?;
    let l_count = state.config.layers;
    let r_a = trace.z[..l_count]
        .iter()
        .map(|z| pair_concat(state.proj_q.forward(z.view()).view(), state.proj_k.forward(z.view()).view()))
        .collect();
    let last = trace.z[l_count].view();
    let r_z = pair_concat(state.proj_sub.forward(last).view(), state.proj_obj.forward(last).view());
    Ok((r_a, r_z))
}

/// Relation transformer over `[Proj_enc(F_enc + PE); Proj_dec(Z^L + pe_dec)]`;
/// returns every query row after the final normalization.
pub fn rel_transformer_queries(trace: &DecoderTrace, state: &RelationHeadState) -> Result<Array2<f64>, EgrtrError> {
    let config = &state.config;
    trace.check(config)?;
    let enc_in = if config.encoder_pe {
        &trace.f_enc + &sinusoidal_pe(trace.f_enc.nrows(), config.d_model)?
    } else {
        trace.f_enc.clone()
    };
    let f_star = state.proj_enc.forward(enc_in.view());
    let z_star = state.proj_dec.forward((&trace.z[config.layers] + &state.pe_dec).view());
    let memory = concatenate(Axis(0), &[f_star.view(), z_star.view()]).expect("both halves are d_model wide");

    let mut x = state.rel_queries.clone();
    for layer in &state.rel_decoder {
        let normed = layer_norm(x.view());
        x += &layer.self_attn.forward(normed.view(), normed.view(), config.heads);
        let normed = layer_norm(x.view());
        x += &layer.cross_attn.forward(normed.view(), memory.view(), config.heads);
        let normed = layer_norm(x.view());
        x += &layer.ff.forward(normed.view());
    }
    Ok(layer_norm(x.view()))
}

/// The first L + 1 rows of [`rel_transformer_queries`]: one expert per
/// decoder layer.
pub fn rel_transformer_forward(trace: &DecoderTrace, state: &RelationHeadState) -> Result<Array2<f64>, EgrtrError> {
    let queries = rel_transformer_queries(trace, state)?;
    Ok(queries.slice(s![..=state.config.layers, ..]).to_owned())
}

/// R̃^l = [R^l; broadcast(expert l)], with R^L = R_z.
pub(crate) fn expert_layers(
    r_a: &[Array3<f64>],
    r_z: &Array3<f64>,
    experts: &Array2<f64>,
    config: &HeadConfig,
) -> Result<Vec<Array3<f64>>, EgrtrError> {
    let (n, d, l_count) = (config.n, config.d_model, config.layers);
    if r_a.len() != l_count {
        return Err(shape_error("r_a", &[l_count], &[r_a.len()]));
    }
    for (l, r) in r_a.iter().chain(std::iter::once(r_z)).enumerate() {
        if r.dim() != (n, n, 2 * d) {
            return Err(shape_error(format!("relation layer {l}"), &[n, n, 2 * d], r.shape()));
        }
    }
    if experts.nrows() < l_count + 1 || experts.ncols() != d {
        return Err(shape_error("experts", &[l_count + 1, d], experts.shape()));
    }
    Ok(r_a
        .iter()
        .chain(std::iter::once(r_z))
        .enumerate()
        .map(|(l, r)| {
            let mut out = Array3::zeros((n, n, 3 * d));
            out.slice_mut(s![.., .., ..2 * d]).assign(r);
            out.slice_mut(s![.., .., 2 * d..]).assign(&experts.row(l));
            out
        })
        .collect())
}

fn flat(x: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (a, b, c) = x.dim();
    x.view().into_shape_with_order((a * b, c)).expect("tensors are built in standard layout")
}

/// Gate-weighted sum of the expert layers; returns (fused, gates).
pub fn gated_fusion(
    r_a: &[Array3<f64>],
    r_z: &Array3<f64>,
    experts: &Array2<f64>,
    state: &RelationHeadState,
) -> Result<(Array3<f64>, Array3<f64>), EgrtrError> {
    let config = &state.config;
    let rtilde = expert_layers(r_a, r_z, experts, config)?;
    Ok(fuse_layers(&rtilde, state))
}

pub(crate) fn fuse_layers(rtilde: &[Array3<f64>], state: &RelationHeadState) -> (Array3<f64>, Array3<f64>) {
    let n = state.config.n;
    let width = 3 * state.config.d_model;
    let mut fused = Array2::<f64>::zeros((n * n, width));
    let mut gates = Array3::zeros((rtilde.len(), n, n));
    for (l, r) in rtilde.iter().enumerate() {
        let x = flat(r);
        let g = state.mlp_gate.forward(x).mapv(sigmoid);
        fused += &(&x * &g);
        gates
            .slice_mut(s![l, .., ..])
            .assign(&g.into_shape_with_order((n, n)).expect("one gate per pair"));
    }
    let fused = fused.into_shape_with_order((n, n, width)).expect("pairs reshape to N × N");
    (fused, gates)
}

/// Ĝ_rel = σ(MLP_rel(R_fused)), Ĝ_conn = σ(MLP_conn(R_fused)).
pub fn predict_graphs(fused: &Array3<f64>, state: &RelationHeadState) -> Result<(Array3<f64>, Array2<f64>), EgrtrError> {
    let config = &state.config;
    let (n, width) = (config.n, 3 * config.d_model);
    if fused.dim() != (n, n, width) {
        return Err(shape_error("fused", &[n, n, width], fused.shape()));
    }
    let x = flat(fused);
    let g_rel = state
        .mlp_rel
        .forward(x)
        .mapv(sigmoid)
        .into_shape_with_order((n, n, config.n_rel_classes))
        .expect("one row per pair");
    let g_conn = state
        .mlp_conn
        .forward(x)
        .mapv(sigmoid)
        .into_shape_with_order((n, n))
        .expect("one value per pair");
    Ok((g_rel, g_conn))
}

/// Full forward pass.
pub fn forward(trace: &DecoderTrace, state: &RelationHeadState) -> Result<RelationTensors, EgrtrError> {
    let (r_a, r_z) = build_local_relations(trace, state)?;
    let experts = rel_transformer_forward(trace, state)?;
    let (fused, gates) = gated_fusion(&r_a, &r_z, &experts, state)?;
    let (g_rel, g_conn) = predict_graphs(&fused, state)?;
    let n = state.config.n;
    let r_prime = experts
        .rows()
        .into_iter()
        .map(|row| row.broadcast((n, n, row.len())).expect("row broadcasts over pairs").to_owned())
        .collect();
    Ok(RelationTensors {
        r_a,
        r_z,
        r_prime,
        experts,
        fused,
        gates,
        g_rel,
        g_conn,
    })
}

/// Builds a [`PlantInstance`] from predicted graphs, zeroing the
/// connection diagonal.
pub fn instance_from_prediction(
    vocab: ClassVocabularies,
    detections: Vec<Detection>,
    tensors: &RelationTensors,
) -> Result<PlantInstance, EgrtrError> {
    let mut g_conn = tensors.g_conn.clone();
    g_conn.diag_mut().fill(0.0);
    Ok(PlantInstance::new(vocab, detections, g_conn, tensors.g_rel.clone())?)
}

/// Weights document: explicit shapes and row-major values per tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDocument {
    pub config: HeadConfig,
    pub seed: u64,
    pub tensors: Vec<TensorDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDocument {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl RelationHeadState {
    pub fn to_document(&self) -> WeightsDocument {
        let mut copy = self.clone();
        let tensors = copy
            .params_mut()
            .into_iter()
            .map(|p| TensorDocument {
                name: p.name,
                shape: p.shape,
                values: p.values.to_vec(),
            })
            .collect();
        WeightsDocument {
            config: self.config,
            seed: self.seed,
            tensors,
        }
    }

    pub fn from_document(doc: &WeightsDocument) -> Result<Self, EgrtrError> {
        let mut state = Self::zeros(doc.config)?;
        state.seed = doc.seed;
        let params = state.params_mut();
        if params.len() != doc.tensors.len() {
            return Err(EgrtrError::Document(format!(
                "expected {} tensors, found {}",
                params.len(),
                doc.tensors.len()
            )));
        }
        for (p, t) in params.into_iter().zip(&doc.tensors) {
            if p.name != t.name {
                return Err(EgrtrError::Document(format!("expected tensor `{}`, found `{}`", p.name, t.name)));
            }
            if p.shape != t.shape || t.values.len() != p.values.len() {
                return Err(shape_error(t.name.clone(), &p.shape, &t.shape));
            }
            p.values.copy_from_slice(&t.values);
        }
        Ok(state)
    }
}

