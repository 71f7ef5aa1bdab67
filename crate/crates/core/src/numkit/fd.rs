use super::Matrix;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function of a matrix.
///
/// Entry `(i, j)` is `(f(x + h·e_ij) - f(x - h·e_ij)) / 2h`. Fails on the first
/// perturbed evaluation that is not finite.
pub fn finite_diff_grad<F>(f: F, x: &Matrix, h: f64) -> Result<Matrix>
where
    F: Fn(&Matrix) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = x[(i, j)];
            probe[(i, j)] = orig + h;
            let plus = f(&probe);
            probe[(i, j)] = orig - h;
            let minus = f(&probe);
            probe[(i, j)] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteEvaluation { row: i, col: j });
            }
            grad[(i, j)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Scale-normalized disagreement between an analytic and a numerical gradient:
/// `max |a - n| / max(max |a|, max |n|)`. Two all-zero tensors compare as `0`.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs());
    let diff = analytic.max_abs_diff(numeric);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
