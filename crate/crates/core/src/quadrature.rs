//! Gauss–Hermite rules for the weight `e^{-x²}`.
//!
//! Nodes start from the Golub–Welsch eigenvalues of the Jacobi matrix and are
//! polished with Newton steps on the orthonormal Hermite recurrence, which also
//! gives the weights without cancellation.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights with `Σ wᵢ f(xᵢ) ≈ ∫ f(x) e^{-x²} dx`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss–Hermite rule needs at least one node");
        if n == 1 {
            return GaussHermite {
                nodes: vec![0.0],
                weights: vec![std::f64::consts::PI.sqrt()],
            };
        }

        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let off = (k as f64 / 2.0).sqrt();
            jacobi[(k, k - 1)] = off;
            jacobi[(k - 1, k)] = off;
        }
        let mut guesses: Vec<f64> = SymmetricEigen::new(jacobi)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        guesses.sort_by(|a, b| a.total_cmp(b));

        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for mut x in guesses {
            let mut deriv = 0.0;
            for _ in 0..8 {
                let (p, dp) = orthonormal_hermite(n, x);
                deriv = dp;
                let step = p / dp;
                x -= step;
                if step.abs() <= 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, dp) = orthonormal_hermite(n, x);
            if dp.is_finite() && dp != 0.0 {
                deriv = dp;
            }
            nodes.push(x);
            weights.push(2.0 / (deriv * deriv));
        }
        GaussHermite { nodes, weights }
    }

    /// `E[f(X)]` for `X ~ Normal(mean, sd²)`.
    pub fn normal_expectation<F: FnMut(f64) -> f64>(&self, mean: f64, sd: f64, mut f: F) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        let total: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mean + scale * x))
            .sum();
        total / std::f64::consts::PI.sqrt()
    }
}

/// Value and derivative of the degree-`n` orthonormal Hermite function
/// `p̃ₙ(x)` with `∫ p̃ₙ² e^{-x²} = 1`, scaled so that `w = 2 / p̃ₙ'(x)²`.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 0.0;
    let mut p = std::f64::consts::PI.powf(-0.25);
    for j in 1..=n {
        let jf = j as f64;
        let next = x * (2.0 / jf).sqrt() * p - ((jf - 1.0) / jf).sqrt() * p_prev;
        p_prev = p;
        p = next;
    }
    (p, (2.0 * n as f64).sqrt() * p_prev)
}
