//! Central finite differences, used as an independent check on
//! [`Tape::backward`](crate::Tape::backward).

use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Central-difference estimate of `∇f(x)`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape().clone());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Like [`finite_diff_grad`], but `f` also reports a branch signature (see
/// [`Tape::kink_signature`](crate::Tape::kink_signature)). Coordinates
/// whose perturbation moves any kinked op onto another branch are reported
/// as `None`: the difference quotient straddles a non-differentiable point.
pub fn finite_diff_grad_smooth(
    mut f: impl FnMut(&Tensor<f64>) -> (f64, Vec<u8>),
    x: &Tensor<f64>,
    eps: f64,
) -> Vec<Option<f64>> {
    let (_, center) = f(x);
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = x.data()[i];
            probe.data_mut()[i] = orig + eps;
            let (up, sig_up) = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let (down, sig_down) = f(&probe);
            probe.data_mut()[i] = orig;
            (sig_up == center && sig_down == center).then(|| (up - down) / (2.0 * eps))
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`. The floor keeps gradients that are
/// zero up to rounding from producing meaningless ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}
