//! Finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Relative disagreement between two gradient estimates, with the
/// denominator floored at 1e-8.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks the tape gradient of a scalar-valued function at `x` against
/// central finite differences, returning the max relative error over
/// coordinates.
///
/// `f` must be deterministic; everything runs in 64-bit.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> f64
where
    F: Fn(&Tape<f64>, Var<f64>) -> Var<f64>,
{
    let tape = Tape::new();
    let var = tape.leaf(x.clone());
    let loss = f(&tape, var.clone());
    assert_eq!(loss.numel(), 1, "grad_check needs a scalar function");
    loss.backward();
    let analytic = tape
        .grad(&var)
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |point: &Tensor<f64>| -> f64 {
        let t = Tape::new();
        let v = t.leaf(point.clone());
        f(&t, v).value().item()
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        worst = worst.max(rel_error(analytic.data()[i], fd));
    }
    worst
}
