use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward_tokens, HyperParams, Mhssmamba, ModelError, ModelParams};
use crate::data::{extract_patches, make_tokens, HsiCube, PatchConfig, TokenPair};
use crate::scalar::{DoubleDouble, Scalar};
use crate::tensor::{grad_check_against, GradCheck, Graph, Tensor, TensorError, Var};

/// A deliberately tiny problem for finite-difference checking of the full
/// model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub patch_size: usize,
    pub bands: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub state_dim: usize,
    pub num_classes: usize,
    pub num_layers: usize,
    pub batch: usize,
    pub eps: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            patch_size: 2,
            bands: 6,
            embed_dim: 4,
            num_heads: 2,
            state_dim: 5,
            num_classes: 3,
            num_layers: 1,
            batch: 2,
            eps: 1e-5,
        }
    }
}

/// Compares every parameter gradient of `cross_entropy(forward(...))`
/// against central differences. With `corrupt` set, the sigmoid backward
/// rule is deliberately scaled so the check must fail.
pub fn model_grad_check(cfg: &GradCheckConfig, corrupt: bool) -> Result<GradCheck<f64>, ModelError> {
    let hp = HyperParams {
        embed_dim: cfg.embed_dim,
        num_heads: cfg.num_heads,
        state_dim: cfg.state_dim,
        num_layers: cfg.num_layers,
        num_classes: cfg.num_classes,
    };
    // Uniform random radiances: patches of a smooth scene have near-identical
    // tokens, which flattens attention gradients down to finite-difference
    // roundoff.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let (h, w) = (4, 4);
    let values = (0..h * w * cfg.bands).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = (0..h * w)
        .map(|_| rng.random_range(1..=cfg.num_classes as u16))
        .collect();
    let cube = HsiCube::new(h, w, cfg.bands, cfg.num_classes as u16, values, labels)?;
    let patches = extract_patches(&cube, &PatchConfig::new(cfg.patch_size))?;
    let batch: Vec<usize> = (0..cfg.batch).map(|i| i * patches.len() / cfg.batch.max(1)).collect();
    let labels: Vec<usize> = batch.iter().map(|&i| patches.center_label(i) as usize - 1).collect();
    let model = Mhssmamba::<f64>::new(hp, cfg.bands, cfg.seed)?;
    let flat: Vec<Tensor<f64>> = model.params.to_flat();
    let tokens = make_tokens::<f64>(&patches, &batch)?;
    let wide_tokens = make_tokens::<DoubleDouble>(&patches, &batch)?;

    // Gradients reach ~1e-8 here, where an f64 difference quotient is
    // dominated by roundoff; the reference objective runs in double-double.
    let report = grad_check_against(
        |g, vars| {
            if corrupt {
                g.inject_sigmoid_backward_fault(1.05);
            }
            objective(g, &model.params, vars, &hp, &tokens, &labels)
        },
        |g, vars| objective(g, &model.params, vars, &hp, &wide_tokens, &labels),
        &flat,
        cfg.eps,
    )?;
    Ok(report)
}

fn objective<T: Scalar, P>(
    g: &mut Graph<T>,
    layout: &ModelParams<P>,
    vars: &[Var],
    hp: &HyperParams,
    tokens: &TokenPair<T>,
    labels: &[usize],
) -> Result<Var, TensorError> {
    let bound = layout
        .rebuild(vars.iter().copied())
        .map_err(|e| TensorError::Contract(e.to_string()))?;
    let logits = forward_tokens(g, &bound, hp, tokens).map_err(|e| match e {
        ModelError::Stage { source, .. } | ModelError::Tensor(source) => source,
        other => TensorError::Contract(other.to_string()),
    })?;
    g.cross_entropy(logits, labels)
}
