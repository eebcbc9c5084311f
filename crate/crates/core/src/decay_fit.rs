//! Weighted Levenberg–Marquardt fit of the echo-visibility decay
//!
//! ```text
//! V(τ) = V₀·exp(-2τ/T₂ - 2R·T_h·(1 - e^{-τ/T_h})),   τ = separation / 2
//! ```
//!
//! Parameters are optimized as logarithms (positivity) of quantities made
//! dimensionless by the largest τ in the curve, so the problem is the same
//! for any time unit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, EchoError, Result};

pub const MIN_DECAY_POINTS: usize = 6;
const MAX_ITERATIONS: usize = 1000;
const LOG_BOUND: f64 = 60.0;

/// Visibility versus total first-to-last pulse separation `2τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityCurve {
    /// Total separations `2τ` (s).
    pub separations: Vec<f64>,
    pub visibilities: Vec<f64>,
    /// One-sigma uncertainties. `None` means unit weights.
    pub errors: Option<Vec<f64>>,
}

impl VisibilityCurve {
    pub fn new(
        separations: Vec<f64>,
        visibilities: Vec<f64>,
        errors: Option<Vec<f64>>,
    ) -> Result<Self> {
        let curve = VisibilityCurve {
            separations,
            visibilities,
            errors,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn len(&self) -> usize {
        self.separations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.separations.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.separations.len();
        if self.visibilities.len() != n {
            return Err(EchoError::invalid(format!(
                "{n} separations but {} visibilities",
                self.visibilities.len()
            )));
        }
        for (&s, &v) in self.separations.iter().zip(&self.visibilities) {
            ensure_finite("separation", s)?;
            ensure_finite("visibility", v)?;
            if s < 0.0 {
                return Err(EchoError::invalid(format!(
                    "separations must be >= 0, got {s}"
                )));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(EchoError::invalid(format!(
                    "visibility must lie in [0, 1], got {v}"
                )));
            }
        }
        if let Some(errors) = &self.errors {
            if errors.len() != n {
                return Err(EchoError::invalid(format!(
                    "{n} separations but {} errors",
                    errors.len()
                )));
            }
            for &e in errors {
                if !(e > 0.0 && e.is_finite()) {
                    return Err(EchoError::invalid(format!(
                        "errors must be positive and finite, got {e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Starting point for the decay fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayGuess {
    pub v0: f64,
    pub t2: f64,
    pub rate_r: f64,
    pub t_h: f64,
}

impl Default for DecayGuess {
    fn default() -> Self {
        DecayGuess {
            v0: 0.05,
            t2: 5e-6,
            rate_r: 1.0 / 250e-9,
            t_h: 150e-9,
        }
    }
}

impl DecayGuess {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("V0", self.v0),
            ("T2", self.t2),
            ("R", self.rate_r),
            ("T_h", self.t_h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EchoError::invalid(format!(
                    "initial {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

pub const PARAMETER_NAMES: [&str; 4] = ["v0", "t2", "rate_r", "t_h"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFitResult {
    pub v0: f64,
    pub t2: f64,
    pub rate_r: f64,
    pub t_h: f64,
    pub v0_err: f64,
    pub t2_err: f64,
    pub rate_r_err: f64,
    pub t_h_err: f64,
    /// Covariance of `(v0, t2, rate_r, t_h)` in SI units, scaled by the
    /// reduced chi-squared.
    pub covariance: [[f64; 4]; 4],
    pub chi_squared: f64,
    pub reduced_chi_squared: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the Jacobian is near-singular at the optimum.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

impl DecayFitResult {
    pub fn values(&self) -> [f64; 4] {
        [self.v0, self.t2, self.rate_r, self.t_h]
    }

    pub fn uncertainties(&self) -> [f64; 4] {
        [self.v0_err, self.t2_err, self.rate_r_err, self.t_h_err]
    }
}

struct DecayProblem<'a> {
    /// τ / time scale
    x: Vec<f64>,
    y: &'a [f64],
    inv_sigma: Vec<f64>,
}

impl DecayProblem<'_> {
    fn model(p: &[f64; 4], x: f64) -> (f64, [f64; 4]) {
        let t2 = p[1].exp();
        let r = p[2].exp();
        let th = p[3].exp();
        let e = (-x / th).exp();
        let one_minus = -(-x / th).exp_m1();
        let heat = 2.0 * r * th * one_minus;
        let v = (p[0] - 2.0 * x / t2 - heat).exp();
        // d ln V / d p
        let dlog = [
            1.0,
            2.0 * x / t2,
            -heat,
            -2.0 * r * (th * one_minus - x * e),
        ];
        (v, dlog)
    }

    fn residuals(&self, p: &[f64; 4]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .zip(self.y)
                .zip(&self.inv_sigma)
                .map(|((&x, &y), &w)| (Self::model(p, x).0 - y) * w),
        )
    }

    fn jacobian(&self, p: &[f64; 4]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.x.len(), 4);
        for (i, (&x, &w)) in self.x.iter().zip(&self.inv_sigma).enumerate() {
            let (v, dlog) = Self::model(p, x);
            for k in 0..4 {
                j[(i, k)] = v * dlog[k] * w;
            }
        }
        j
    }
}

/// Weighted nonlinear least-squares fit of the visibility decay.
///
/// Convergence is declared when an accepted step reduces chi-squared by less
/// than 1e-14 relative, the scaled gradient vanishes, or no damped step can
/// lower chi-squared further. A near-singular Jacobian at the optimum (for
/// example `R → 0`, which leaves `T_h` unconstrained) sets `degenerate` and
/// adds a warning instead of failing.
pub fn fit_visibility_decay(curve: &VisibilityCurve, guess: &DecayGuess) -> Result<DecayFitResult> {
    curve.validate()?;
    guess.validate()?;
    let n = curve.len();
    if n < MIN_DECAY_POINTS {
        return Err(EchoError::Underdetermined(format!(
            "decay fit needs at least {MIN_DECAY_POINTS} points, got {n}"
        )));
    }
    let mut warnings = Vec::new();
    let inv_sigma: Vec<f64> = match &curve.errors {
        Some(errors) => errors.iter().map(|e| 1.0 / e).collect(),
        None => {
            warnings.push("no visibility errors supplied; unit weights used".to_string());
            vec![1.0; n]
        }
    };
    let time_scale = curve
        .separations
        .iter()
        .fold(0.0f64, |m, &s| m.max(0.5 * s));
    if !(time_scale > 0.0) {
        return Err(EchoError::Underdetermined(
            "all separations are zero".into(),
        ));
    }
    let problem = DecayProblem {
        x: curve
            .separations
            .iter()
            .map(|s| 0.5 * s / time_scale)
            .collect(),
        y: &curve.visibilities,
        inv_sigma,
    };

    let mut p = [
        guess.v0.ln(),
        (guess.t2 / time_scale).ln(),
        (guess.rate_r * time_scale).ln(),
        (guess.t_h / time_scale).ln(),
    ];
    let mut cost = problem.residuals(&p).norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let r = problem.residuals(&p);
        let jac = problem.jacobian(&p);
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;

        if cost == 0.0 {
            converged = true;
            break;
        }
        let scaled_grad = (0..4)
            .map(|k| {
                let d = a[(k, k)].sqrt();
                if d > 0.0 {
                    g[k].abs() / (d * cost.sqrt())
                } else {
                    0.0
                }
            })
            .fold(0.0f64, f64::max);
        if scaled_grad < 1e-12 {
            converged = true;
            break;
        }

        let max_diag = (0..4).map(|k| a[(k, k)]).fold(0.0f64, f64::max);
        let mut accepted = false;
        while lambda <= 1e16 {
            let mut damped = a.clone();
            for k in 0..4 {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-12 * max_diag).max(f64::MIN_POSITIVE);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial = p;
            for k in 0..4 {
                trial[k] = (p[k] + step[k]).clamp(-LOG_BOUND, LOG_BOUND);
            }
            let trial_cost = problem.residuals(&trial).norm_squared();
            if trial_cost.is_finite() && trial_cost < cost {
                let reduction = cost - trial_cost;
                let max_step = (0..4)
                    .map(|k| (trial[k] - p[k]).abs())
                    .fold(0.0f64, f64::max);
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if reduction <= 1e-14 * cost || max_step < 1e-13 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no damped step lowers chi-squared: at a minimum to rounding
            converged = true;
        }
        if converged {
            break;
        }
    }

    let values = [
        p[0].exp(),
        p[1].exp() * time_scale,
        p[2].exp() / time_scale,
        p[3].exp() * time_scale,
    ];
    if !converged {
        return Err(EchoError::NoConvergence(format!(
            "decay fit stopped after {iterations} iterations; best so far v0={:.6e} t2={:.6e} rate_r={:.6e} t_h={:.6e} chi2={cost:.6e}",
            values[0], values[1], values[2], values[3]
        )));
    }

    let jac = problem.jacobian(&p);
    let a = jac.transpose() * &jac;
    let dof = n - 4;
    let reduced = cost / dof as f64;

    let diag: Vec<f64> = (0..4).map(|k| a[(k, k)]).collect();
    let max_diag = diag.iter().cloned().fold(0.0f64, f64::max);
    let mut degenerate = false;
    for k in 0..4 {
        if !(diag[k] > 1e-14 * max_diag) {
            degenerate = true;
            warnings.push(format!(
                "parameter {} has no influence on the fit",
                PARAMETER_NAMES[k]
            ));
        }
    }
    if !degenerate {
        let corr = DMatrix::from_fn(4, 4, |i, j| a[(i, j)] / (diag[i] * diag[j]).sqrt());
        let eig = SymmetricEigen::new(corr).eigenvalues;
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(0.0f64, f64::max);
        if !(lo > 1e-10 * hi) {
            degenerate = true;
            warnings.push(format!(
                "near-singular Jacobian (correlation eigenvalue ratio {:.3e})",
                lo / hi
            ));
        }
    }
    if degenerate && values[2] * time_scale < 1e-6 {
        warnings.push("pulse-induced rate consistent with zero; t_h is unidentifiable".to_string());
    }

    let inv = a
        .pseudo_inverse(1e-14 * max_diag.max(f64::MIN_POSITIVE))
        .map_err(|e| EchoError::Underdetermined(format!("decay normal matrix: {e}")))?;
    let mut covariance = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            covariance[i][j] = inv[(i, j)] * reduced * values[i] * values[j];
        }
    }
    let err = |k: usize| covariance[k][k].max(0.0).sqrt();

    Ok(DecayFitResult {
        v0: values[0],
        t2: values[1],
        rate_r: values[2],
        t_h: values[3],
        v0_err: err(0),
        t2_err: err(1),
        rate_r_err: err(2),
        t_h_err: err(3),
        covariance,
        chi_squared: cost,
        reduced_chi_squared: reduced,
        dof,
        iterations,
        converged,
        degenerate,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoherence::{visibility_model, DecoherenceParams};

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
            .collect()
    }

    fn curve_for(dec: &DecoherenceParams, v0: f64, seps: &[f64], rel_err: f64) -> VisibilityCurve {
        let vis: Vec<f64> = seps
            .iter()
            .map(|s| visibility_model(0.5 * s, v0, dec).unwrap())
            .collect();
        let errs = vis.iter().map(|v| rel_err * v).collect();
        VisibilityCurve::new(seps.to_vec(), vis, Some(errs)).unwrap()
    }

    #[test]
    fn noiseless_reference_round_trip() {
        let dec = DecoherenceParams::reference();
        let seps = log_grid(50e-9, 16e-6, 20);
        let curve = curve_for(&dec, 0.047, &seps, 0.05);
        let fit = fit_visibility_decay(&curve, &DecayGuess::default()).unwrap();
        assert!(fit.converged);
        assert!(!fit.degenerate, "{:?}", fit.warnings);
        let truth = [0.047, dec.t2, dec.rate_r, dec.t_h];
        for (k, (got, want)) in fit.values().iter().zip(truth).enumerate() {
            assert!(
                (got / want - 1.0).abs() < 1e-3,
                "{}: {got} vs {want}",
                PARAMETER_NAMES[k]
            );
        }
        assert!(fit.chi_squared < 1e-10, "chi2 {}", fit.chi_squared);
    }

    #[test]
    fn pure_exponential_flags_heating_time() {
        let dec = DecoherenceParams::new(6.7e-6, 0.0, 100e-9).unwrap();
        let seps = log_grid(50e-9, 16e-6, 20);
        let curve = curve_for(&dec, 0.047, &seps, 0.05);
        let fit = fit_visibility_decay(&curve, &DecayGuess::default()).unwrap();
        assert!((fit.t2 / 6.7e-6 - 1.0).abs() < 0.01, "t2 {}", fit.t2);
        assert!(fit.degenerate);
        assert!(
            fit.warnings.iter().any(|w| w.contains("t_h")),
            "{:?}",
            fit.warnings
        );
    }

    #[test]
    fn scale_equivariance() {
        let dec = DecoherenceParams::reference();
        let seps = log_grid(50e-9, 16e-6, 20);
        let vis: Vec<f64> = seps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                visibility_model(0.5 * s, 0.047, &dec).unwrap()
                    * (1.0 + 0.03 * ((i * 7 % 5) as f64 - 2.0))
            })
            .collect();
        let errs: Vec<f64> = vis.iter().map(|v| 0.05 * v).collect();
        let guess = DecayGuess::default();
        let base = fit_visibility_decay(
            &VisibilityCurve::new(seps.clone(), vis.clone(), Some(errs.clone())).unwrap(),
            &guess,
        )
        .unwrap();
        let k = 10.0;
        let scaled_curve =
            VisibilityCurve::new(seps.iter().map(|s| s * k).collect(), vis, Some(errs)).unwrap();
        let scaled_guess = DecayGuess {
            v0: guess.v0,
            t2: guess.t2 * k,
            rate_r: guess.rate_r / k,
            t_h: guess.t_h * k,
        };
        let scaled = fit_visibility_decay(&scaled_curve, &scaled_guess).unwrap();
        let factors = [1.0, k, 1.0 / k, k];
        for i in 0..4 {
            let want = base.values()[i] * factors[i];
            assert!(
                (scaled.values()[i] / want - 1.0).abs() < 1e-6,
                "{}",
                PARAMETER_NAMES[i]
            );
        }
    }

    #[test]
    fn unit_weights_warn() {
        let dec = DecoherenceParams::reference();
        let seps = log_grid(50e-9, 16e-6, 12);
        let mut curve = curve_for(&dec, 0.047, &seps, 0.05);
        curve.errors = None;
        let fit = fit_visibility_decay(&curve, &DecayGuess::default()).unwrap();
        assert!(fit.warnings.iter().any(|w| w.contains("unit weights")));
    }

    #[test]
    fn rejects_bad_curves() {
        assert!(VisibilityCurve::new(vec![1.0, 2.0], vec![0.1], None).is_err());
        assert!(VisibilityCurve::new(vec![1.0], vec![1.5], None).is_err());
        assert!(VisibilityCurve::new(vec![1.0], vec![0.5], Some(vec![0.0])).is_err());
        let short = VisibilityCurve::new(vec![1e-7; 5], vec![0.01; 5], None).unwrap();
        assert!(matches!(
            fit_visibility_decay(&short, &DecayGuess::default()),
            Err(EchoError::Underdetermined(_))
        ));
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let dec = DecoherenceParams::reference();
        let seps = log_grid(50e-9, 16e-6, 20);
        let vis: Vec<f64> = seps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                visibility_model(0.5 * s, 0.047, &dec).unwrap()
                    * (1.0 + 0.04 * ((i * 3 % 7) as f64 - 3.0) / 3.0)
            })
            .collect();
        let errs: Vec<f64> = vis.iter().map(|v| 0.05 * v).collect();
        let fit = fit_visibility_decay(
            &VisibilityCurve::new(seps, vis, Some(errs)).unwrap(),
            &DecayGuess::default(),
        )
        .unwrap();
        let c = DMatrix::from_fn(4, 4, |i, j| fit.covariance[i][j]);
        assert!((c.clone() - c.transpose()).abs().max() <= 1e-12 * c.abs().max());
        let d = DMatrix::from_fn(4, 4, |i, j| c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt());
        assert!(SymmetricEigen::new(d)
            .eigenvalues
            .iter()
            .all(|&e| e > -1e-9));
        for k in 0..4 {
            assert!(
                (fit.uncertainties()[k] - fit.covariance[k][k].sqrt()).abs()
                    < 1e-15 * fit.uncertainties()[k].max(1e-300)
            );
        }
    }
}
