//! Gradient verification against central finite differences.

use super::{Tape, Tensor, TensorError};

/// Compares reverse-mode gradients of `f` at `x` against central finite
/// differences with step `eps`, returning the maximum relative error
/// `|g_ad − g_fd| / max(1, |g_fd|)` over all coordinates.
///
/// `f` must be a pure function of its argument; it is re-evaluated
/// `2·len(x)` times on perturbed untracked copies.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&Tensor) -> Result<Tensor, TensorError>,
{
    if !(eps > 0.0) {
        return Err(TensorError::InvalidEpsilon(eps));
    }
    let tape = Tape::new();
    let tracked = tape.watch(x);
    let out = f(&tracked)?;
    if out.len() != 1 {
        return Err(TensorError::NonScalarRoot(out.shape().to_vec()));
    }
    let g_ad = if out.is_tracked() {
        out.backward()?;
        tracked.grad().unwrap_or_else(|| vec![0.0; x.len()])
    } else {
        // f ignored its argument: the gradient is identically zero.
        vec![0.0; x.len()]
    };

    let base = x.data().to_vec();
    let shape = x.shape().to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let fp = f(&Tensor::new(plus, &shape)?)?.item();
        let fm = f(&Tensor::new(minus, &shape)?)?.item();
        let g_fd = (fp - fm) / (2.0 * eps);
        let rel = (g_ad[i] - g_fd).abs() / g_fd.abs().max(1.0);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
