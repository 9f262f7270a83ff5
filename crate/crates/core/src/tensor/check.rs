use alloc::format;

use super::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn finite_diff_gradient<F>(mut f: F, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {}", h)));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("objective is not finite around coordinate {}", i)));
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps vanishing gradients from
/// turning round-off into large relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / denom
}
