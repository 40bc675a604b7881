use super::Matrix;
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `params`, one coordinate at a time:
/// `(f(p + eps) - f(p - eps)) / (2 eps)`.
pub fn finite_diff_grad<F>(mut f: F, params: &[Matrix], eps: f64) -> Result<Vec<Matrix>>
where
    F: FnMut(&[Matrix]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Matrix::zeros(params[p].rows(), params[p].cols());
        for k in 0..params[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + eps;
            let plus = f(&work);
            work[p].data_mut()[k] = orig - eps;
            let minus = f(&work);
            work[p].data_mut()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective not finite at parameter {p}, coordinate {k}"
                )));
            }
            grad.data_mut()[k] = (plus - minus) / (2.0 * eps);
        }
        out.push(grad);
    }
    Ok(out)
}
