use super::{no_grad, Tensor};
use crate::error::Result;
use crate::Scalar;

/// Relative error with a floor on the denominator so that coordinates with a
/// vanishing gradient are judged on absolute error.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T], floor: T) -> T {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(T::zero(), T::max)
}

/// Compares autodiff gradients of `f` against central differences
/// `(f(p + eps) - f(p - eps)) / 2eps` for every coordinate of every param.
///
/// `f` must be deterministic (freeze any noise it draws). Returns the maximum
/// relative error, with denominators floored at `1e-4`.
pub fn finite_difference_check<T, F>(mut f: F, params: &[Tensor<T>], eps: T) -> Result<T>
where
    T: Scalar,
    F: FnMut() -> Result<Tensor<T>>,
{
    for p in params {
        p.zero_grad();
    }
    f()?.backward()?;
    let mut analytic = Vec::new();
    for p in params {
        analytic.extend(p.grad_or_zeros());
    }

    let mut numeric = Vec::with_capacity(analytic.len());
    for p in params {
        for i in 0..p.numel() {
            let orig = p.data()[i];
            p.update_data(|d| d[i] = orig + eps);
            let up = no_grad(&mut f)?.item();
            p.update_data(|d| d[i] = orig - eps);
            let down = no_grad(&mut f)?.item();
            p.update_data(|d| d[i] = orig);
            numeric.push((up - down) / (eps + eps));
        }
    }
    for p in params {
        p.zero_grad();
    }
    Ok(max_relative_error(&analytic, &numeric, T::lit(1e-4)))
}
