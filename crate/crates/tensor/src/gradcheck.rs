use crate::error::{Result, TensorError};
use crate::nd::NdArray;
use crate::tensor::Tensor;

/// Relative-error floor: differences below this denominator are compared
/// absolutely, so gradients near zero do not inflate the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Compares reverse-mode gradients of `f` at `x` against central finite
/// differences with step `eps`. `f` must map its argument to a scalar.
///
/// The relative error per element is |a - n| / max(|a|, |n|, REL_ERR_FLOOR).
pub fn finite_diff_check<F>(f: F, x: &NdArray, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let leaf = Tensor::param(x.data.clone(), x.shape.clone())?;
    let loss = f(&leaf)?;
    if !loss.is_scalar() {
        return Err(TensorError::NotScalar {
            shape: loss.shape().to_vec(),
        });
    }
    loss.backward()?;
    let analytic = leaf.grad_or_zeros();

    let mut numeric = vec![0.0; x.numel()];
    for i in 0..x.numel() {
        let mut plus = x.data.clone();
        plus[i] += eps;
        let mut minus = x.data.clone();
        minus[i] -= eps;
        let fp = f(&Tensor::from_vec(plus, x.shape.clone())?)?.value();
        let fm = f(&Tensor::from_vec(minus, x.shape.clone())?)?.value();
        numeric[i] = (fp - fm) / (2.0 * eps);
    }

    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(REL_ERR_FLOOR);
        let rel = (a - n).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_err,
        worst_index,
    })
}
