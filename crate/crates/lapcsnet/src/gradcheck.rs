//! Finite-difference verification utilities.
//!
//! These helpers are deliberately independent of the backward pass: they
//! only re-run a caller-supplied forward closure at perturbed inputs, so
//! they can serve as an oracle for the analytic gradients.

/// Central finite differences of a scalar function at `x`:
/// `(f(x + h e_i) - f(x - h e_i)) / (2h)` for each coordinate.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Worst relative disagreement between two gradients, using
/// `|a - n| / max(|a| + |n|, eps)` per coordinate.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_recovered() {
        // f(x) = sum(x_i^2), grad = 2x.
        let x = [0.3, -1.2, 2.5];
        let g = central_difference(|v| v.iter().map(|a| a * a).sum(), &x, 1e-5);
        let expected: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!(max_rel_error(&expected, &g) < 1e-9);
    }

    #[test]
    fn rel_error_detects_disagreement() {
        assert!(max_rel_error(&[1.0], &[1.1]) > 0.04);
        assert_eq!(max_rel_error(&[0.0], &[0.0]), 0.0);
    }
}
