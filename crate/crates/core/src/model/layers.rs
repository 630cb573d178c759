use super::params::{Attention, Dense, Layer, ModelParams, Ssm};
use super::{stage, HyperParams, ModelError};
use crate::data::{make_tokens, PatchSet, TokenPair};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

fn at(stage: &'static str) -> impl FnOnce(TensorError) -> ModelError {
    move |source| ModelError::Stage { stage, source }
}

#[derive(Clone, Copy, Debug)]
pub struct Enhanced {
    pub spatial: Var,
    pub spectral: Var,
    /// `(B, embed)` gate applied to every spatial token.
    pub spatial_gate: Var,
    pub spectral_gate: Var,
}

/// Gates both token families with `sigmoid(c . W + b)` of the center
/// context `c: (B, C)`, broadcast over the `L` positions.
pub fn enhance_tokens<T: Scalar>(
    g: &mut Graph<T>,
    spatial: Var,
    spectral: Var,
    context: Var,
    spatial_gate: &Dense<Var>,
    spectral_gate: &Dense<Var>,
) -> Result<Enhanced, TensorError> {
    let prev = g.set_stage(stage::ENHANCEMENT);
    let gs = g.dense(context, spatial_gate.weight, spatial_gate.bias)?;
    let gs = g.sigmoid(gs)?;
    let gf = g.dense(context, spectral_gate.weight, spectral_gate.bias)?;
    let gf = g.sigmoid(gf)?;
    let s = g.gate_tokens(spatial, gs)?;
    let f = g.gate_tokens(spectral, gf)?;
    g.set_stage(prev);
    Ok(Enhanced {
        spatial: s,
        spectral: f,
        spatial_gate: gs,
        spectral_gate: gf,
    })
}

/// Which token family supplies the queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuerySource {
    Spatial,
    Spectral,
}

#[derive(Clone, Debug)]
pub struct MhsaOutput {
    /// `(B, L, embed)`
    pub output: Var,
    /// Per-head row-stochastic attention maps `(B, L, L)`.
    pub attention: Vec<Var>,
}

/// Cross-modal multi-head attention.
///
/// For each head, `Q = X_q W^Q`, `K = X_kv W^K`, `V = X_kv W^V` and
/// `O_i = softmax(Q K^T / sqrt(d_k)) V`; heads are concatenated and mapped
/// by `W_O`.
pub fn mhsa<T: Scalar>(
    g: &mut Graph<T>,
    spatial: Var,
    spectral: Var,
    params: &Attention<Var>,
    query: QuerySource,
) -> Result<MhsaOutput, TensorError> {
    let heads = params.query.len();
    if heads == 0 || params.key.len() != heads || params.value.len() != heads {
        return Err(TensorError::Contract(format!(
            "attention head mismatch: {} query, {} key, {} value maps",
            heads,
            params.key.len(),
            params.value.len()
        )));
    }
    let (q_in, kv_in) = match query {
        QuerySource::Spatial => (spatial, spectral),
        QuerySource::Spectral => (spectral, spatial),
    };
    let head_dim = g.shape(params.query[0])[1];
    let inv_sqrt = T::one() / T::of(head_dim as f64).sqrt();
    let prev = g.set_stage(stage::ATTENTION_PROJECTION);
    let mut concat: Option<Var> = None;
    let mut attention = Vec::with_capacity(heads);
    for h in 0..heads {
        g.set_stage(stage::ATTENTION_PROJECTION);
        let q = g.linear(q_in, params.query[h])?;
        let k = g.linear(kv_in, params.key[h])?;
        let v = g.linear(kv_in, params.value[h])?;
        let kt = g.transpose_last_two(k)?;
        g.set_stage(stage::ATTENTION_SCORE);
        let scores = g.batch_matmul(q, kt)?;
        let scores = g.scale(scores, inv_sqrt)?;
        let a = g.softmax_rows(scores)?;
        g.set_stage(stage::ATTENTION_VALUE);
        let o = g.batch_matmul(a, v)?;
        attention.push(a);
        concat = Some(match concat {
            None => o,
            Some(c) => g.concat_last(c, o)?,
        });
    }
    g.set_stage(stage::ATTENTION_PROJECTION);
    let output = g.linear(concat.expect("heads >= 1"), params.output)?;
    g.set_stage(prev);
    Ok(MhsaOutput { output, attention })
}

#[derive(Clone, Copy, Debug)]
pub struct Gated {
    pub output: Var,
    /// `sigmoid(O . W_g + b_g)`, same shape as `O`.
    pub gate: Var,
}

/// `O * sigmoid(O . W_g + b_g)`.
pub fn feature_gate<T: Scalar>(g: &mut Graph<T>, o: Var, gate: &Dense<Var>) -> Result<Gated, TensorError> {
    let prev = g.set_stage(stage::FEATURE_GATE);
    let pre = g.dense(o, gate.weight, gate.bias)?;
    let s = g.sigmoid(pre)?;
    let output = g.hadamard(o, s)?;
    g.set_stage(prev);
    Ok(Gated { output, gate: s })
}

/// Left-to-right scan `h_t = relu(h_{t-1} . W_transition + E_t . W_update)`
/// over the `L` positions of `tokens: (B, L, embed)` from `h_0 = 0`.
/// Returns `h_L: (B, state)`.
pub fn ssm_scan<T: Scalar>(g: &mut Graph<T>, tokens: Var, params: &Ssm<Var>) -> Result<Var, TensorError> {
    let shape = g.shape(tokens).to_vec();
    if shape.len() != 3 {
        return Err(TensorError::Dimension {
            op: "ssm_scan",
            left: shape,
            right: g.shape(params.update).to_vec(),
        });
    }
    let (batch, len) = (shape[0], shape[1]);
    let state = g.shape(params.transition)[1];
    let prev = g.set_stage(stage::SSM_UPDATE);
    let updates = g.linear(tokens, params.update)?;
    g.set_stage(stage::SSM_TRANSITION);
    let mut h = g.constant(Tensor::zeros(&[batch, state]));
    for t in 0..len {
        let carried = g.matmul(h, params.transition)?;
        let input = g.select_token(updates, t)?;
        let pre = g.add(carried, input)?;
        h = g.relu(pre)?;
    }
    g.set_stage(prev);
    Ok(h)
}

fn run_layer<T: Scalar>(
    g: &mut Graph<T>,
    spatial: Var,
    spectral: Var,
    context: Var,
    layer: &Layer<Var>,
) -> Result<(Var, Var), ModelError> {
    let Enhanced {
        spatial: s,
        spectral: f,
        ..
    } = enhance_tokens(
        g,
        spatial,
        spectral,
        context,
        &layer.enhancement.spatial,
        &layer.enhancement.spectral,
    )
    .map_err(at("token enhancement"))?;
    let a = mhsa(g, s, f, &layer.spatial.attention, QuerySource::Spatial).map_err(at("spatial attention"))?;
    let b = mhsa(g, s, f, &layer.spectral.attention, QuerySource::Spectral).map_err(at("spectral attention"))?;
    let a = feature_gate(g, a.output, &layer.spatial.gate).map_err(at("spatial feature gate"))?;
    let b = feature_gate(g, b.output, &layer.spectral.gate).map_err(at("spectral feature gate"))?;
    Ok((a.output, b.output))
}

/// Logits `(B, K)` for a token batch under bound parameters.
pub fn forward_tokens<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<Var>,
    hp: &HyperParams,
    tokens: &TokenPair<T>,
) -> Result<Var, ModelError> {
    hp.validate()?;
    let spatial = g.constant(tokens.spatial.clone());
    let spectral = g.constant(tokens.spectral.clone());
    let context = g.constant(tokens.context.clone());

    let prev = g.set_stage(stage::TOKEN_PROJECTION);
    let mut s = g
        .dense(spatial, params.spatial_proj.weight, params.spatial_proj.bias)
        .map_err(at("spatial token projection"))?;
    let mut f = g
        .dense(spectral, params.spectral_proj.weight, params.spectral_proj.bias)
        .map_err(at("spectral token projection"))?;
    g.set_stage(prev);

    for layer in &params.layers {
        (s, f) = run_layer(g, s, f, context, layer)?;
    }

    let hs = ssm_scan(g, s, &params.spatial_ssm).map_err(at("spatial state space"))?;
    let hf = ssm_scan(g, f, &params.spectral_ssm).map_err(at("spectral state space"))?;
    let prev = g.set_stage(stage::CLASSIFIER);
    let joined = g.concat_last(hs, hf).map_err(at("classifier"))?;
    let logits = g
        .dense(joined, params.classifier.weight, params.classifier.bias)
        .map_err(at("classifier"))?;
    g.set_stage(prev);
    Ok(logits)
}

/// Tokenizes `batch` from `patches` and runs [`forward_tokens`].
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    patches: &PatchSet,
    batch: &[usize],
    params: &ModelParams<Var>,
    hp: &HyperParams,
) -> Result<Var, ModelError> {
    let tokens = make_tokens(patches, batch)?;
    forward_tokens(g, params, hp, &tokens)
}

/// Row-wise argmax of `(B, K)` logits; ties go to the lowest class.
///
/// Softmax and sigmoid are both monotone, so this equals the argmax of
/// either squashed output.
pub fn predict<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.last_dim();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
