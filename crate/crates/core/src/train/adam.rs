use super::{TrainConfig, TrainError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Completed updates.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected Adam update:
///
/// ```text
/// m <- b1 m + (1 - b1) g        v <- b2 v + (1 - b2) g^2
/// theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
///
/// Nothing is modified if any gradient is non-finite; the error names the
/// offending parameter.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    names: &[String],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != names.len() {
        return Err(TrainError::Contract(format!(
            "adam_step: {} params, {} grads, {} moment slots, {} names",
            params.len(),
            grads.len(),
            state.m.len(),
            names.len()
        )));
    }
    for ((p, g), name) in params.iter().zip(grads).zip(names) {
        if p.shape() != g.shape() {
            return Err(TrainError::Contract(format!(
                "gradient of {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TrainError::Numeric(format!(
                "gradient of {name} is not finite at element {i}"
            )));
        }
    }

    state.t += 1;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one, lr, eps) = (T::one(), T::of(cfg.learning_rate), T::of(cfg.epsilon));
    let t = state.t.min(i32::MAX as u64) as i32;
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
