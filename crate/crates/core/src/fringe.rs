//! Drift-removing sinusoid fits of fringe scans and visibility extraction.
//!
//! Each scan is fitted to `y(t) = a + b·t + c·cos(ωt + φ)`. At fixed ω the
//! model is linear in `(a, b, c·cosφ, -c·sinφ)` and solved exactly; ω itself
//! is refined by a bounded one-dimensional search within ±20% of the seed.
//! The drift `b·t` is then simply dropped, leaving the fitted sine curve with
//! extremes `a ± c`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, EchoError, Result};

pub const MIN_SCAN_POINTS: usize = 8;
pub const MIN_FIT_POINTS: usize = 6;
/// Half-width of the frequency search window, relative to the seed.
pub const FREQ_WINDOW: f64 = 0.2;
const FREQ_GRID: usize = 81;

/// One fringe scan: detected signal versus τ₂ offset from the echo centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeScan {
    /// τ₂ - τ₁ offsets (s), strictly increasing.
    pub delays: Vec<f64>,
    pub counts: Vec<f64>,
    /// Nominal first-interval delay τ₁ (s).
    pub separation: f64,
}

impl FringeScan {
    pub fn new(delays: Vec<f64>, counts: Vec<f64>, separation: f64) -> Result<Self> {
        let scan = FringeScan {
            delays,
            counts,
            separation,
        };
        scan.validate()?;
        Ok(scan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delays.len() != self.counts.len() {
            return Err(EchoError::invalid(format!(
                "{} delays but {} counts",
                self.delays.len(),
                self.counts.len()
            )));
        }
        if self.delays.len() < MIN_SCAN_POINTS {
            return Err(EchoError::invalid(format!(
                "scan needs at least {MIN_SCAN_POINTS} points, got {}",
                self.delays.len()
            )));
        }
        self.check_common()
    }

    fn check_common(&self) -> Result<()> {
        ensure_finite("separation", self.separation)?;
        for w in self.delays.windows(2) {
            if !(w[1] > w[0]) {
                return Err(EchoError::invalid(
                    "scan delays must be strictly increasing",
                ));
            }
        }
        for (&d, &c) in self.delays.iter().zip(&self.counts) {
            ensure_finite("delay", d)?;
            ensure_finite("count", c)?;
            if c < 0.0 {
                return Err(EchoError::invalid(format!("counts must be >= 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Least-squares fit of `a + b·t + c·cos(ωt + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    /// Constant level `a` (counts).
    pub offset: f64,
    /// Linear drift `b` (counts/s).
    pub drift: f64,
    /// Oscillation amplitude `c ≥ 0` (counts).
    pub amplitude: f64,
    /// Phase `φ` (rad).
    pub phase: f64,
    /// Fringe angular frequency `ω` (rad/s).
    pub frequency: f64,
    pub residual_rms: f64,
    /// Covariance of `(a, b, c·cosφ, -c·sinφ)` at the fitted ω, scaled by the
    /// residual variance with five fitted parameters.
    pub covariance: [[f64; 4]; 4],
    pub n_points: usize,
}

struct LinearFit {
    coeffs: [f64; 4],
    rss: f64,
    covariance: [[f64; 4]; 4],
}

/// Time scale used to condition the linear column.
fn time_scale(delays: &[f64]) -> f64 {
    let s = delays.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

fn design(delays: &[f64], omega: f64, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(delays.len(), 4, |i, j| {
        let t = delays[i];
        match j {
            0 => 1.0,
            1 => t / scale,
            2 => (omega * t).cos(),
            _ => (omega * t).sin(),
        }
    })
}

fn solve_linear(
    delays: &[f64],
    counts: &DVector<f64>,
    omega: f64,
    scale: f64,
    want_cov: bool,
) -> Result<LinearFit> {
    let x = design(delays, omega, scale);
    let svd = x.clone().svd(true, true);
    let beta = svd
        .solve(counts, 1e-13)
        .map_err(|e| EchoError::Underdetermined(format!("fringe design matrix: {e}")))?;
    let resid = counts - &x * &beta;
    let rss = resid.norm_squared();

    let mut covariance = [[0.0; 4]; 4];
    if want_cov {
        let xtx = x.transpose() * &x;
        let inv = xtx
            .pseudo_inverse(1e-13)
            .map_err(|e| EchoError::Underdetermined(format!("fringe normal matrix: {e}")))?;
        let dof = delays.len().saturating_sub(5).max(1) as f64;
        let s2 = rss / dof;
        // undo the column scaling of b
        let col_scale = [1.0, 1.0 / scale, 1.0, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                covariance[i][j] = s2 * inv[(i, j)] * col_scale[i] * col_scale[j];
            }
        }
    }
    Ok(LinearFit {
        coeffs: [beta[0], beta[1] / scale, beta[2], beta[3]],
        rss,
        covariance,
    })
}

/// Fits `a + b·t + c·cos(ωt + φ)` to a scan, refining ω within ±20% of
/// `freq_guess`.
///
/// ω is located on an 81-point grid and polished by golden-section search
/// on the residual. When grid values tie, the point nearer the seed wins, so
/// a fringe-free scan keeps the seed frequency. If the best grid point lies
/// on the window edge the fit reports no convergence.
pub fn fit_fringe(scan: &FringeScan, freq_guess: f64) -> Result<FringeFit> {
    if scan.delays.len() != scan.counts.len() {
        return Err(EchoError::invalid("delays and counts differ in length"));
    }
    if scan.delays.len() < MIN_FIT_POINTS {
        return Err(EchoError::Underdetermined(format!(
            "fringe fit needs at least {MIN_FIT_POINTS} points, got {}",
            scan.delays.len()
        )));
    }
    scan.check_common()?;
    ensure_finite("frequency guess", freq_guess)?;
    if !(freq_guess > 0.0) {
        return Err(EchoError::invalid(format!(
            "frequency guess must be positive, got {freq_guess}"
        )));
    }

    let delays = &scan.delays;
    // fit in units of the largest count so results are invariant under rescaling
    let unit = scan.counts.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let unit = if unit > 0.0 { unit } else { 1.0 };
    let counts = DVector::from_iterator(scan.counts.len(), scan.counts.iter().map(|c| c / unit));
    let scale = time_scale(delays);
    let rss_at = |w: f64| solve_linear(delays, &counts, w, scale, false).map(|f| f.rss);

    let lo = freq_guess * (1.0 - FREQ_WINDOW);
    let hi = freq_guess * (1.0 + FREQ_WINDOW);
    let step = (hi - lo) / (FREQ_GRID - 1) as f64;
    let mut grid = Vec::with_capacity(FREQ_GRID);
    for k in 0..FREQ_GRID {
        let w = lo + step * k as f64;
        grid.push((w, rss_at(w)?));
    }
    let total_ss = {
        let mean = counts.mean();
        counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>()
    };
    let tie = 1e-12 * total_ss + 1e-20 * counts.norm_squared();
    let mut best = FREQ_GRID / 2;
    for (k, &(w, r)) in grid.iter().enumerate() {
        let (bw, br) = grid[best];
        if r < br - tie
            || ((r - br).abs() <= tie && (w - freq_guess).abs() < (bw - freq_guess).abs())
        {
            best = k;
        }
    }
    let flat = grid.iter().all(|&(_, r)| (r - grid[best].1).abs() <= tie);
    if !flat && (best == 0 || best == FREQ_GRID - 1) {
        return Err(EchoError::NoConvergence(format!(
            "fringe frequency search hit the window edge at {:.6e} rad/s (seed {freq_guess:.6e})",
            grid[best].0
        )));
    }

    let omega = if flat {
        freq_guess
    } else {
        let coarse = golden_section(grid[best - 1].0, grid[best + 1].0, rss_at)?;
        polish_frequency(delays, &counts, scale, coarse, step)?
    };

    let lin = solve_linear(delays, &counts, omega, scale, true)?;
    let [a, b, p, q] = lin.coeffs;
    let amplitude = p.hypot(q);
    // c·cos(ωt+φ) = c·cosφ·cos(ωt) - c·sinφ·sin(ωt)
    let phase = if amplitude > 0.0 { (-q).atan2(p) } else { 0.0 };
    let mut covariance = lin.covariance;
    for row in covariance.iter_mut() {
        for v in row.iter_mut() {
            *v *= unit * unit;
        }
    }
    Ok(FringeFit {
        offset: a * unit,
        drift: b * unit,
        amplitude: amplitude * unit,
        phase,
        frequency: omega,
        residual_rms: (lin.rss / delays.len() as f64).sqrt() * unit,
        covariance,
        n_points: delays.len(),
    })
}

/// `dRSS/dω / -2` at the linear optimum for fixed ω (the linear coefficients
/// are stationary, so only the explicit ω dependence contributes).
fn rss_slope(delays: &[f64], counts: &DVector<f64>, scale: f64, omega: f64) -> Result<(f64, f64)> {
    let lin = solve_linear(delays, counts, omega, scale, false)?;
    let [a, b, p, q] = lin.coeffs;
    let mut g = 0.0;
    for (&t, &y) in delays.iter().zip(counts.iter()) {
        let (s, c) = (omega * t).sin_cos();
        let r = y - (a + b * t + p * c + q * s);
        g += r * t * (q * c - p * s);
    }
    Ok((g, lin.rss))
}

/// Secant iteration on the residual slope, started from the golden-section
/// estimate. Golden section alone resolves ω only to about sqrt(ε); the
/// slope root is accurate to rounding. The root is kept only if it stays
/// within `±step` and does not raise the residual beyond rounding.
fn polish_frequency(
    delays: &[f64],
    counts: &DVector<f64>,
    scale: f64,
    start: f64,
    step: f64,
) -> Result<f64> {
    let (mut w0, mut w1) = (start, start + 1e-6 * step);
    let (mut g0, rss_start) = rss_slope(delays, counts, scale, w0)?;
    let (mut g1, _) = rss_slope(delays, counts, scale, w1)?;
    for _ in 0..30 {
        if g1 == g0 {
            break;
        }
        let w2 = w1 - g1 * (w1 - w0) / (g1 - g0);
        if !w2.is_finite() || (w2 - start).abs() > step {
            return Ok(start);
        }
        let (g2, _) = rss_slope(delays, counts, scale, w2)?;
        (w0, g0, w1, g1) = (w1, g1, w2, g2);
        if (w1 - w0).abs() <= 4.0 * f64::EPSILON * w1.abs() {
            break;
        }
    }
    let (_, rss_end) = rss_slope(delays, counts, scale, w1)?;
    let slack = 1e-12 * rss_start + 1e-20 * counts.norm_squared();
    Ok(if rss_end <= rss_start + slack {
        w1
    } else {
        start
    })
}

fn golden_section<F>(mut a: f64, mut b: f64, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (a.abs() + b.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { c } else { d })
}

/// Fringe visibility `V = c/a` and its first-order uncertainty.
///
/// The drift-removed fit has maximum `a + c` and minimum `a - c`, so
/// `(max - min)/(max + min) = c/a`. The uncertainty propagates the
/// linear-subproblem covariance at the fitted ω; it reflects one scan's
/// residual noise, not a repeat-measurement spread.
pub fn visibility_from_fit(fit: &FringeFit) -> Result<(f64, f64)> {
    let a = fit.offset;
    let c = fit.amplitude;
    if !(a > c) {
        return Err(EchoError::UnphysicalFit(format!(
            "offset {a} does not exceed amplitude {c}; visibility would be >= 1"
        )));
    }
    let v = c / a;
    let cov = &fit.covariance;
    let (p, q) = (c * fit.phase.cos(), -c * fit.phase.sin());
    // gradient of V with respect to (a, b, p, q)
    let grad = if c > 0.0 {
        [-c / (a * a), 0.0, p / (c * a), q / (c * a)]
    } else {
        // c = 0: V is not differentiable; use the mean amplitude variance
        let var_c = 0.5 * (cov[2][2] + cov[3][3]);
        return Ok((0.0, var_c.max(0.0).sqrt() / a));
    };
    let mut var = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            var += grad[i] * cov[i][j] * grad[j];
        }
    }
    Ok((v, var.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize, span: f64) -> Vec<f64> {
        (0..n)
            .map(|k| -0.5 * span + span * k as f64 / (n - 1) as f64)
            .collect()
    }

    fn synth(delays: &[f64], a: f64, b: f64, c: f64, phi: f64, w: f64) -> Vec<f64> {
        delays
            .iter()
            .map(|&t| a + b * t + c * (w * t + phi).cos())
            .collect()
    }

    #[test]
    fn noiseless_round_trip() {
        let w0 = 2.0 * PI * 50e9;
        let delays = grid(64, 60e-12);
        let counts = synth(&delays, 100.0, 0.0, 1.2, 0.0, w0);
        let scan = FringeScan::new(delays, counts, 26.4e-9).unwrap();
        let fit = fit_fringe(&scan, w0 * 1.07).unwrap();
        assert!((fit.offset - 100.0).abs() < 1e-6 * 100.0);
        assert!(fit.drift.abs() * 30e-12 < 1e-6);
        assert!((fit.amplitude - 1.2).abs() < 1e-6 * 1.2);
        assert!((fit.frequency / w0 - 1.0).abs() < 1e-6);
        let (v, _) = visibility_from_fit(&fit).unwrap();
        assert!((v - 0.012).abs() < 1e-8);
    }

    #[test]
    fn constant_scan_has_no_fringe() {
        let delays = grid(64, 60e-12);
        let scan = FringeScan::new(delays, vec![100.0; 64], 26.4e-9).unwrap();
        let fit = fit_fringe(&scan, 2.0 * PI * 50e9).unwrap();
        assert!(fit.amplitude < 1e-9);
        let (v, _) = visibility_from_fit(&fit).unwrap();
        assert!(v < 1e-10);
    }

    #[test]
    fn drift_does_not_change_amplitude_or_phase() {
        let w0 = 2.0 * PI * 50e9;
        let delays = grid(64, 60e-12);
        // deterministic pseudo-noise so the residual is non-trivial
        let noise: Vec<f64> = (0..64)
            .map(|k| 0.3 * ((k * 7919 % 97) as f64 / 97.0 - 0.5))
            .collect();
        let base: Vec<f64> = synth(&delays, 1000.0, 0.0, 40.0, 0.7, w0)
            .iter()
            .zip(&noise)
            .map(|(y, n)| y + n)
            .collect();
        let drifted: Vec<f64> = base.iter().zip(&delays).map(|(y, t)| y + 1e9 * t).collect();
        let f1 = fit_fringe(&FringeScan::new(delays.clone(), base, 1e-6).unwrap(), w0).unwrap();
        let f2 = fit_fringe(&FringeScan::new(delays, drifted, 1e-6).unwrap(), w0).unwrap();
        assert!((f1.amplitude - f2.amplitude).abs() < 1e-8);
        assert!((f1.phase - f2.phase).abs() < 1e-8);
        assert!((f2.drift - f1.drift - 1e9).abs() < 1e-3 * 1e9);
    }

    #[test]
    fn visibility_definitions() {
        let mut fit = FringeFit {
            offset: 100.0,
            drift: 0.0,
            amplitude: 1.2,
            phase: 0.0,
            frequency: 1.0,
            residual_rms: 0.0,
            covariance: [[0.0; 4]; 4],
            n_points: 64,
        };
        assert!((visibility_from_fit(&fit).unwrap().0 - 0.012).abs() < 1e-15);
        fit.amplitude = 0.0;
        assert_eq!(visibility_from_fit(&fit).unwrap().0, 0.0);
        fit.offset = 2.0;
        fit.amplitude = 1.0;
        let (v, _) = visibility_from_fit(&fit).unwrap();
        let (max, min) = (3.0, 1.0);
        assert_eq!(v, 0.5);
        assert_eq!(v, (max - min) / (max + min));
        fit.amplitude = 2.0;
        assert!(matches!(
            visibility_from_fit(&fit),
            Err(EchoError::UnphysicalFit(_))
        ));
    }

    #[test]
    fn too_few_points() {
        let scan = FringeScan {
            delays: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            counts: vec![1.0; 5],
            separation: 0.0,
        };
        assert!(matches!(
            fit_fringe(&scan, 1.0),
            Err(EchoError::Underdetermined(_))
        ));
        assert!(FringeScan::new(vec![0.0, 1.0], vec![1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn scan_validation() {
        let d: Vec<f64> = (0..8).map(|k| k as f64).collect();
        assert!(FringeScan::new(d.clone(), vec![1.0; 7], 0.0).is_err());
        assert!(FringeScan::new(d.clone(), vec![-1.0; 8], 0.0).is_err());
        let mut bad = d.clone();
        bad.swap(2, 3);
        assert!(FringeScan::new(bad, vec![1.0; 8], 0.0).is_err());
        assert!(FringeScan::new(d, vec![1.0; 8], 0.0).is_ok());
    }

    #[test]
    fn seed_far_off_hits_window_edge() {
        let w0 = 2.0 * PI * 50e9;
        let delays = grid(64, 60e-12);
        let counts = synth(&delays, 100.0, 0.0, 10.0, 0.0, w0);
        let scan = FringeScan::new(delays, counts, 0.0).unwrap();
        assert!(matches!(
            fit_fringe(&scan, w0 * 1.28),
            Err(EchoError::NoConvergence(_))
        ));
    }

    #[test]
    fn visibility_scale_invariant() {
        let w0 = 2.0 * PI * 50e9;
        let delays = grid(64, 60e-12);
        let noise: Vec<f64> = (0..64)
            .map(|k| ((k * 31 % 17) as f64 - 8.0) * 0.5)
            .collect();
        let counts: Vec<f64> = synth(&delays, 500.0, 3e8, 17.0, 1.1, w0)
            .iter()
            .zip(&noise)
            .map(|(y, n)| y + n)
            .collect();
        let base = visibility_from_fit(
            &fit_fringe(
                &FringeScan::new(delays.clone(), counts.clone(), 0.0).unwrap(),
                w0,
            )
            .unwrap(),
        )
        .unwrap();
        for k in [0.01, 3.0, 1e4] {
            let scaled: Vec<f64> = counts.iter().map(|c| c * k).collect();
            let v = visibility_from_fit(
                &fit_fringe(&FringeScan::new(delays.clone(), scaled, 0.0).unwrap(), w0).unwrap(),
            )
            .unwrap();
            assert!((v.0 - base.0).abs() < 1e-12, "k={k}: {} vs {}", v.0, base.0);
            assert!((v.1 - base.1).abs() < 1e-9 * base.1.max(1e-12));
        }
    }
}
