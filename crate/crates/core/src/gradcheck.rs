//! Central finite-difference oracle for backprop.
//!
//! Only forward evaluations are used here, so the oracle stays independent
//! of every hand-written backward pass it checks.

use rand::Rng;

use crate::tensor::Tensor;

/// Default step for central differences.
pub const STEP: f64 = 1e-5;

/// Denominator floor for [`relative_error`]; below this magnitude the
/// comparison degrades to an absolute one scaled by the floor.
pub const ERROR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for one coordinate.
pub fn central_difference(x: &Tensor, index: usize, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> f64 {
    let mut probe = x.clone();
    probe.data_mut()[index] = x.data()[index] + h;
    let plus = f(&probe);
    probe.data_mut()[index] = x.data()[index] - h;
    let minus = f(&probe);
    (plus - minus) / (2.0 * h)
}

/// Maximum relative error of `analytic` against central differences of `f`
/// over every coordinate of `x`.
pub fn check_function(x: &Tensor, analytic: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> f64 {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape mismatch");
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let numeric = central_difference(x, i, STEP, &mut f);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    worst
}
