//! Central finite differences for verifying analytic gradients. This is the
//! independent oracle side of every gradient test; it never touches the
//! tape's backward pass.

use alloc::vec::Vec;

/// Default step for central differences on O(1) inputs.
pub const DEFAULT_STEP: f64 = 1e-6;

/// `∂f/∂xᵢ ≈ (f(x + h eᵢ) − f(x − h eᵢ)) / 2h` for every coordinate.
pub fn central_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        point[i] = x[i] + h;
        let fp = f(&point);
        point[i] = x[i] - h;
        let fm = f(&point);
        point[i] = x[i];
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Worst relative error between two gradients. The denominator is floored at
/// 1e-3 so near-zero entries are compared absolutely at the same tolerance
/// scale instead of dividing by noise.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Deterministic pseudo-random values in `[lo, hi)` for building gradient
/// check inputs without depending on the code under test.
pub fn fill_pseudo(seed: u64, lo: f64, hi: f64, out: &mut [f64]) {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    for v in out.iter_mut() {
        state = (state ^ (state >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        state = (state ^ (state >> 27)).wrapping_mul(0x94D049BB133111EB);
        state ^= state >> 31;
        let u = (state >> 11) as f64 / (1u64 << 53) as f64;
        *v = lo + u * (hi - lo);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_exact_on_quadratic() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1];
        let g = central_diff_grad(f, &[2.0, -1.0], 1e-6);
        assert!((g[0] - 1.0).abs() < 1e-8);
        assert!((g[1] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn rel_err_floors_near_zero_entries() {
        assert!(max_rel_err(&[0.0], &[1e-12]) < 1e-8);
        assert!(max_rel_err(&[1.0], &[1.1]) > 0.09);
    }
}
