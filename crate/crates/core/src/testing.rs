//! Finite-difference helpers shared by unit, integration and acceptance tests.

use crate::numerics::Parameterized;

/// Symmetric relative error with a small absolute floor.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Worst relative error between the analytic gradients stored in `analytic`
/// and fourth-order central differences of `loss` around `base`, over at most `max_checks`
/// evenly spaced weights.
pub fn max_param_grad_error<M, F>(analytic: &M, base: &M, loss: F, step: f64, max_checks: usize) -> f64
where
    M: Parameterized + Clone,
    F: Fn(&M) -> f64,
{
    let grads = analytic.flat_grads();
    let values = base.flat_values();
    let n = values.len();
    let stride = (n / max_checks.max(1)).max(1);
    let mut probe = base.clone();
    let mut worst: f64 = 0.0;
    let mut flat = values.clone();
    let mut eval = |i: usize, delta: f64| {
        flat[i] = values[i] + delta;
        probe.load_flat(&flat).expect("same model");
        let l = loss(&probe);
        flat[i] = values[i];
        l
    };
    for i in (0..n).step_by(stride) {
        // fourth-order central difference
        let near = eval(i, step) - eval(i, -step);
        let far = eval(i, 2.0 * step) - eval(i, -2.0 * step);
        let fd = (8.0 * near - far) / (12.0 * step);
        worst = worst.max(rel_err(fd, grads[i]));
    }
    worst
}

/// Asserts every weight's analytic gradient matches central differences.
pub fn check_param_grads<M, F>(analytic: &M, base: &M, loss: F, tol: f64)
where
    M: Parameterized + Clone,
    F: Fn(&M) -> f64,
{
    let err = max_param_grad_error(analytic, base, loss, 1e-4, usize::MAX);
    assert!(err < tol, "gradient relative error {err:.3e} ≥ {tol:.1e}");
}
