//! Finite-difference gradient oracle.
//!
//! Nothing here knows about the tape: a loss is just a closure over a flat
//! parameter vector, differentiated numerically by central differences. Tests
//! compare these numbers against reverse-mode results, so this module must
//! stay independent of `autodiff`.

/// Central-difference gradient of `f` at `point`: `(f(x+ε) − f(x−ε)) / 2ε`
/// per coordinate.
pub fn numeric_gradient<F>(mut f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let hi = f(&x);
        x[i] = orig - eps;
        let lo = f(&x);
        x[i] = orig;
        grad.push((hi - lo) / (2.0 * eps));
    }
    grad
}

/// Largest elementwise relative error between two gradients.
///
/// The denominator is floored at 1e-3 so that near-zero pairs are compared
/// absolutely (at tolerance·1e-3) instead of amplifying finite-difference
/// noise into spurious failures.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_recovered() {
        // f(x) = Σ i·x_i², df/dx_i = 2i·x_i.
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| i as f64 * v * v).sum();
        let point = [1.5, -2.0, 0.25, 3.0];
        let num = numeric_gradient(f, &point, 1e-5);
        let exact: Vec<f64> = point.iter().enumerate().map(|(i, v)| 2.0 * i as f64 * v).collect();
        assert!(max_rel_err(&exact, &num) < 1e-9);
    }

    #[test]
    fn transcendental_gradient_is_recovered() {
        let f = |x: &[f64]| (x[0].sin() * x[1].exp()).tanh();
        let point = [0.7, -0.3];
        let num = numeric_gradient(f, &point, 1e-5);
        let inner = point[0].sin() * point[1].exp();
        let sech2 = 1.0 - inner.tanh().powi(2);
        let exact = [sech2 * point[0].cos() * point[1].exp(), sech2 * inner];
        assert!(max_rel_err(&exact, &num) < 1e-8);
    }

    #[test]
    fn rel_err_floors_tiny_denominators() {
        assert!(max_rel_err(&[0.0], &[1e-9]) < 1e-5);
        assert!(max_rel_err(&[1.0], &[1.1]) > 0.09);
    }
}
