//! Cross-check of the closed-form ensemble average against Gauss–Hermite
//! quadrature and Monte-Carlo sampling on random three-pulse parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    gaussian_average_mc, gaussian_average_quadrature, sigma_z_terms, EnsembleParams,
};
use crate::error::{EchoError, Result};
use crate::spin::PulseSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub quadrature_nodes: usize,
    pub mc_samples: usize,
    /// Quadrature tolerance (absolute).
    pub quadrature_tol: f64,
    /// Monte-Carlo tolerance in standard errors.
    pub mc_sigmas: f64,
    /// Largest `σ·τ` for either delay.
    pub max_sigma_tau: f64,
    /// Test hook: flips the sign of the echo term in the closed form.
    pub flip_echo_sign: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            quadrature_nodes: 128,
            mc_samples: 100_000,
            quadrature_tol: 1e-8,
            mc_sigmas: 4.0,
            max_sigma_tau: 3.0,
            flip_echo_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub angles: [f64; 3],
    pub taus: [f64; 2],
    pub ensemble: EnsembleParams,
    pub analytic: f64,
    pub quadrature: f64,
    pub monte_carlo: f64,
    pub mc_std_error: f64,
}

impl OracleCase {
    pub fn quadrature_deviation(&self) -> f64 {
        (self.analytic - self.quadrature).abs()
    }

    /// Monte-Carlo deviation in units of its standard error.
    pub fn mc_deviation(&self) -> f64 {
        let d = (self.analytic - self.monte_carlo).abs();
        if self.mc_std_error > 0.0 {
            d / self.mc_std_error
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub cases: Vec<OracleCase>,
    pub worst_quadrature_deviation: f64,
    pub worst_mc_deviation_sigmas: f64,
    pub failures: usize,
    pub passed: bool,
}

fn random_case<R: Rng>(rng: &mut R, max_sigma_tau: f64) -> ([f64; 3], [f64; 2], EnsembleParams) {
    use std::f64::consts::PI;
    let angles = [
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
    ];
    // σ log-uniform over 1e8..1e10 rad/s, ω₀ over 2π×(1..100) GHz
    let sigma = 10f64.powf(rng.random_range(8.0..10.0));
    let omega0 = 2.0 * PI * 1e9 * 10f64.powf(rng.random_range(0.0..2.0));
    let taus = [
        rng.random_range(0.0..max_sigma_tau) / sigma,
        rng.random_range(0.0..max_sigma_tau) / sigma,
    ];
    let p0 = rng.random_range(0.5..1.0);
    (angles, taus, EnsembleParams { omega0, sigma, p0 })
}

/// Runs `n_cases` random comparisons. Case `k` uses Monte-Carlo seed
/// `seed + k`.
pub fn triple_agreement(n_cases: usize, seed: u64, opts: &OracleOptions) -> Result<OracleReport> {
    if n_cases == 0 {
        return Err(EchoError::invalid("oracle check needs at least one case"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(n_cases);
    for k in 0..n_cases {
        let (angles, taus, ens) = random_case(&mut rng, opts.max_sigma_tau);
        let mut terms = sigma_z_terms(angles, taus, &ens)?;
        if opts.flip_echo_sign {
            terms.0[4] = -terms.0[4];
        }
        let analytic = ens.p0 * terms.sum();
        let seq = PulseSequence::three_pulse(angles, taus)?;
        let quad = gaussian_average_quadrature(&seq, &ens, opts.quadrature_nodes)?;
        let mc = gaussian_average_mc(&seq, &ens, opts.mc_samples, seed.wrapping_add(k as u64))?;
        cases.push(OracleCase {
            angles,
            taus,
            ensemble: ens,
            analytic,
            quadrature: quad.mean_sigma_z,
            monte_carlo: mc.mean_sigma_z,
            mc_std_error: mc.std_error,
        });
    }
    let worst_q = cases
        .iter()
        .map(OracleCase::quadrature_deviation)
        .fold(0.0, f64::max);
    let worst_mc = cases
        .iter()
        .map(OracleCase::mc_deviation)
        .fold(0.0, f64::max);
    let failures = cases
        .iter()
        .filter(|c| {
            c.quadrature_deviation() >= opts.quadrature_tol || c.mc_deviation() >= opts.mc_sigmas
        })
        .count();
    Ok(OracleReport {
        cases,
        worst_quadrature_deviation: worst_q,
        worst_mc_deviation_sigmas: worst_mc,
        failures,
        passed: failures == 0,
    })
}
