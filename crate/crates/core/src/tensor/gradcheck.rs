use super::{Graph, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// Outcome of a central-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck<T> {
    pub max_rel_error: T,
    /// `(parameter index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: T,
    pub numeric: T,
    pub checked: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    let denom = (analytic.abs() + numeric.abs()).max(T::of(1e-8));
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(p + eps) - f(p - eps)) / 2 eps` for every element of every tensor in
/// `params`.
///
/// `f` receives a fresh graph and one trainable leaf per parameter, in
/// order, and must return a scalar node.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], eps: T) -> Result<GradCheck<T>, TensorError>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, TensorError>,
{
    grad_check_against(&f, &f, params, eps)
}

/// Like [`grad_check`], but the finite differences come from `reference`,
/// evaluated in a (typically wider) scalar `H`. With `H = F128` the
/// difference quotient stays accurate for gradients far below `sqrt(eps_f64)`
/// of the objective's magnitude.
pub fn grad_check_against<T, H, F, G>(
    f: F,
    reference: G,
    params: &[Tensor<T>],
    eps: T,
) -> Result<GradCheck<T>, TensorError>
where
    T: Scalar,
    H: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, TensorError>,
    G: Fn(&mut Graph<H>, &[Var]) -> Result<Var, TensorError>,
{
    if eps <= T::zero() {
        return Err(TensorError::Contract("eps must be positive".into()));
    }
    let eval = |values: &[Tensor<H>]| -> Result<H, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = reference(&mut g, &vars)?;
        let v = g.value(out).data()[0];
        if !v.is_finite() {
            return Err(TensorError::Numeric("gradient check objective is not finite".into()));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut report = GradCheck {
        max_rel_error: T::zero(),
        worst: (0, 0),
        analytic: T::zero(),
        numeric: T::zero(),
        checked: 0,
    };
    let mut probe: Vec<Tensor<H>> = params.iter().map(Tensor::cast).collect();
    let h_eps = H::of(eps.as_f64());
    let two_eps = h_eps + h_eps;
    for (pi, grad) in analytic.iter().enumerate() {
        for ei in 0..grad.numel() {
            let orig = probe[pi].data()[ei];
            probe[pi].data_mut()[ei] = orig + h_eps;
            let plus = eval(&probe)?;
            probe[pi].data_mut()[ei] = orig - h_eps;
            let minus = eval(&probe)?;
            probe[pi].data_mut()[ei] = orig;

            let numeric = T::of(((plus - minus) / two_eps).as_f64());
            let a = grad.data()[ei];
            if !a.is_finite() {
                return Err(TensorError::Numeric(format!(
                    "analytic gradient of parameter {pi} element {ei} is not finite"
                )));
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
