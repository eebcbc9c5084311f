//! Synthetic three-pulse echo experiment.
//!
//! Timeline per shot: optical pumping into `|↓⟩` (polarization `p0`), pulse 1,
//! free precession `τ₁`, pulse 2, free precession `τ₂ = τ₁ + offset`, pulse 3,
//! population readout. The detected signal is `counts_scale·P + drift·offset`
//! plus shot noise.
//!
//! Decoherence bookkeeping: the pulse-induced excitation is refreshed by every
//! pulse, so coherence present during interval `k` is attenuated by
//! `coherence_decay_factor(τ_k)`. The pulse fidelity `D(θ)` multiplies the
//! coherence leaving pulses 1 and 2. Each ensemble term therefore picks up:
//!
//! | term | coherence during | attenuation |
//! |------|------------------|-------------|
//! | population | none | 1 |
//! | interval-1 | τ₁ | `D₁·f(τ₁)` |
//! | interval-2 | τ₂ | `D₂·f(τ₂)` |
//! | both / echo | τ₁, τ₂ | `D₁·D₂·f(τ₁)·f(τ₂)` |
//!
//! With `τ₁ = τ₂ = τ` the echo attenuation is `f(τ)²`, exactly the
//! equal-delay visibility law.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decay_fit::VisibilityCurve;
use crate::decoherence::{coherence_decay_factor, DecoherenceParams, PulseFidelityModel};
use crate::ensemble::{sigma_z_terms, EnsembleParams};
use crate::error::{ensure_finite, EchoError, Result};
use crate::fringe::{fit_fringe, visibility_from_fit, FringeScan, MIN_SCAN_POINTS};

/// Equal rotation angle (rad) for which `p0 = 0.9` and `D(θ) = 1 - 0.25θ`
/// give an initial visibility of 0.047.
pub const REFERENCE_ANGLE: f64 = 0.678_117_651_634_624_9;
/// Pulse-train repetition time of the rotation laser (s).
pub const DEFAULT_REP_TIME: f64 = 13.2e-9;
pub const DEFAULT_SCAN_POINTS: usize = 64;
pub const DEFAULT_SCAN_SPAN: f64 = 60e-12;
/// Largest allowed `σ·(scan span)`.
pub const MAX_SCAN_SPREAD: f64 = 0.2;
/// Floor on propagated visibility errors so noise-free sweeps stay valid curves.
pub const VISIBILITY_ERROR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    None,
    /// Additive Gaussian noise with standard deviation `rel · expected`.
    Gaussian {
        rel: f64,
    },
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub ensemble: EnsembleParams,
    pub decoherence: DecoherenceParams,
    pub fidelity: PulseFidelityModel,
    pub angles: [f64; 3],
    /// First free-evolution interval (s); a whole number of `rep_time`s.
    pub tau1: f64,
    pub rep_time: f64,
    /// τ₂ - τ₁ offsets (s), strictly increasing.
    pub scan: Vec<f64>,
    /// Mean counts at flip probability 1.
    pub counts_scale: f64,
    /// Linear count drift (counts/s of offset).
    pub drift_rate: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Largest total separation `2τ` of an echo sweep (s).
    pub sweep_max: f64,
    pub sweep_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            ensemble: EnsembleParams::default(),
            decoherence: DecoherenceParams::reference(),
            fidelity: PulseFidelityModel::default(),
            angles: [REFERENCE_ANGLE; 3],
            tau1: 2.0 * DEFAULT_REP_TIME,
            rep_time: DEFAULT_REP_TIME,
            scan: centered_scan(DEFAULT_SCAN_POINTS, DEFAULT_SCAN_SPAN),
            counts_scale: 1e5,
            drift_rate: 0.0,
            noise: NoiseModel::Poisson,
            seed: 0,
            sweep_max: 16e-6,
            sweep_points: 48,
        }
    }
}

/// `points` equally spaced offsets spanning `span`, centred on zero.
pub fn centered_scan(points: usize, span: f64) -> Vec<f64> {
    if points < 2 {
        return vec![0.0; points];
    }
    (0..points)
        .map(|k| span * (k as f64 / (points - 1) as f64 - 0.5))
        .collect()
}

/// Nearest whole number (≥ 1) of repetition periods to `tau`.
pub fn snap_to_rep(tau: f64, rep_time: f64) -> f64 {
    let k = (tau / rep_time).round().max(1.0);
    k * rep_time
}

fn is_rep_multiple(tau: f64, rep_time: f64) -> bool {
    let k = (tau / rep_time).round();
    k >= 1.0 && (tau - k * rep_time).abs() <= 1e-9 * tau
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        self.decoherence.validate()?;
        for a in self.angles {
            ensure_finite("rotation angle", a)?;
        }
        ensure_finite("rep_time", self.rep_time)?;
        if !(self.rep_time > 0.0) {
            return Err(EchoError::invalid(format!(
                "rep_time must be positive, got {}",
                self.rep_time
            )));
        }
        ensure_finite("tau1", self.tau1)?;
        if !is_rep_multiple(self.tau1, self.rep_time) {
            return Err(EchoError::invalid(format!(
                "tau1 = {} s is not a positive multiple of the repetition time {} s",
                self.tau1, self.rep_time
            )));
        }
        if self.scan.len() < MIN_SCAN_POINTS {
            return Err(EchoError::invalid(format!(
                "scan needs at least {MIN_SCAN_POINTS} points, got {}",
                self.scan.len()
            )));
        }
        for &d in &self.scan {
            ensure_finite("scan offset", d)?;
        }
        if !self.scan.windows(2).all(|w| w[1] > w[0]) {
            return Err(EchoError::invalid(
                "scan offsets must be strictly increasing",
            ));
        }
        let span = self.scan[self.scan.len() - 1] - self.scan[0];
        if self.ensemble.sigma * span > MAX_SCAN_SPREAD {
            return Err(EchoError::invalid(format!(
                "scan span {span:e} s exceeds {MAX_SCAN_SPREAD}/sigma = {:e} s; the echo would dephase across the window",
                MAX_SCAN_SPREAD / self.ensemble.sigma
            )));
        }
        if self.tau1 + self.scan[0] < 0.0 {
            return Err(EchoError::invalid("scan reaches a negative second delay"));
        }
        ensure_finite("counts_scale", self.counts_scale)?;
        if !(self.counts_scale > 0.0) {
            return Err(EchoError::invalid(format!(
                "counts_scale must be positive, got {}",
                self.counts_scale
            )));
        }
        ensure_finite("drift_rate", self.drift_rate)?;
        if let NoiseModel::Gaussian { rel } = self.noise {
            if !(rel >= 0.0 && rel.is_finite()) {
                return Err(EchoError::invalid(format!(
                    "gaussian noise level must be >= 0, got {rel}"
                )));
            }
        }
        Ok(())
    }

    /// Echo-sweep separations: `sweep_points` distinct whole-pulse
    /// separations `2τ = 2k·rep_time`, log-spaced in `k` from 1 up to
    /// `sweep_max`. Where log spacing would repeat a `k`, the grid is refined
    /// until it yields `sweep_points` distinct values, so short separations
    /// are sampled at every repetition period.
    pub fn sweep_separations(&self) -> Result<Vec<f64>> {
        let k_max = (self.sweep_max / (2.0 * self.rep_time)).floor();
        if !(k_max >= 2.0) || self.sweep_points < 2 || self.sweep_points as f64 > k_max {
            return Err(EchoError::invalid(format!(
                "sweep_max {} s and sweep_points {} do not give a usable sweep",
                self.sweep_max, self.sweep_points
            )));
        }
        let grid = |m: usize| -> Vec<u64> {
            let mut ks: Vec<u64> = (0..m)
                .map(|i| k_max.powf(i as f64 / (m - 1) as f64).round() as u64)
                .collect();
            ks.dedup();
            ks
        };
        let mut m = self.sweep_points;
        let mut ks = grid(m);
        while ks.len() < self.sweep_points {
            m += 1;
            ks = grid(m);
        }
        Ok(ks
            .into_iter()
            .map(|k| 2.0 * k as f64 * self.rep_time)
            .collect())
    }

    /// Noise-free detected signal at τ₂ offset `offset`.
    pub fn expected_counts(&self, offset: f64) -> Result<f64> {
        Ok(self.counts_scale * self.flip_probability(offset)? + self.drift_rate * offset)
    }

    /// Ensemble flip probability including decoherence and pulse fidelity.
    pub fn flip_probability(&self, offset: f64) -> Result<f64> {
        let tau2 = self.tau1 + offset;
        let terms = sigma_z_terms(self.angles, [self.tau1, tau2], &self.ensemble)?.0;
        let f1 = coherence_decay_factor(self.tau1, &self.decoherence)?;
        let f2 = coherence_decay_factor(tau2, &self.decoherence)?;
        let d1 = self.fidelity.retention(self.angles[0]);
        let d2 = self.fidelity.retention(self.angles[1]);
        let sz = terms[0]
            + d1 * f1 * terms[1]
            + d2 * f2 * terms[2]
            + d1 * d2 * f1 * f2 * (terms[3] + terms[4]);
        Ok(0.5 * (1.0 + self.ensemble.p0 * sz))
    }
}

fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One fringe scan over the configured τ₂ offsets, noise drawn from stream 0.
pub fn simulate_fringe_scan(cfg: &ExperimentConfig) -> Result<FringeScan> {
    cfg.validate()?;
    scan_with_stream(cfg, 0)
}

fn scan_with_stream(cfg: &ExperimentConfig, stream: u64) -> Result<FringeScan> {
    let mut rng = noise_rng(cfg.seed, stream);
    let mut counts = Vec::with_capacity(cfg.scan.len());
    for &offset in &cfg.scan {
        let expected = cfg.expected_counts(offset)?;
        if expected < 0.0 {
            return Err(EchoError::invalid(format!(
                "expected counts {expected} < 0 at offset {offset:e} s; drift too large"
            )));
        }
        let observed = match cfg.noise {
            NoiseModel::None => expected,
            NoiseModel::Poisson => {
                if expected > 0.0 {
                    Poisson::new(expected)
                        .map_err(|e| EchoError::invalid(format!("poisson mean {expected}: {e}")))?
                        .sample(&mut rng)
                } else {
                    0.0
                }
            }
            NoiseModel::Gaussian { rel } => {
                let normal = Normal::new(expected, rel * expected)
                    .map_err(|e| EchoError::invalid(format!("gaussian noise: {e}")))?;
                normal.sample(&mut rng).max(0.0)
            }
        };
        counts.push(observed);
    }
    FringeScan::new(cfg.scan.clone(), counts, cfg.tau1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub index: usize,
    pub separation: f64,
    pub reason: String,
}

/// Result of a visibility sweep. Points whose fringe fit failed are left
/// out of `curve` and listed in `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSweep {
    pub curve: VisibilityCurve,
    pub failures: Vec<PointFailure>,
}

/// Runs a fringe scan at each total separation `2τ` (with `τ₁ = τ`), fits it
/// and collects the visibilities. Point `i` draws its noise from stream `i`,
/// so results do not depend on scheduling.
pub fn simulate_echo_experiment(cfg: &ExperimentConfig, separations: &[f64]) -> Result<EchoSweep> {
    if separations.is_empty() {
        return Err(EchoError::invalid("no separations given"));
    }
    for &sep in separations {
        ensure_finite("separation", sep)?;
        if !is_rep_multiple(0.5 * sep, cfg.rep_time) {
            return Err(EchoError::invalid(format!(
                "separation {sep:e} s is not twice a whole number of repetition periods"
            )));
        }
    }
    let configs: Vec<ExperimentConfig> = separations
        .iter()
        .map(|&sep| ExperimentConfig {
            tau1: 0.5 * sep,
            ..cfg.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }

    let outcomes: Vec<std::result::Result<(f64, f64), String>> = configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let scan = scan_with_stream(c, i as u64).map_err(|e| e.to_string())?;
            let fit = fit_fringe(&scan, c.ensemble.omega0).map_err(|e| e.to_string())?;
            visibility_from_fit(&fit).map_err(|e| e.to_string())
        })
        .collect();

    let mut seps = Vec::new();
    let mut vis = Vec::new();
    let mut errs = Vec::new();
    let mut failures = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((v, sv)) => {
                seps.push(separations[i]);
                vis.push(v);
                errs.push(sv.max(VISIBILITY_ERROR_FLOOR));
            }
            Err(reason) => failures.push(PointFailure {
                index: i,
                separation: separations[i],
                reason,
            }),
        }
    }
    Ok(EchoSweep {
        curve: VisibilityCurve::new(seps, vis, Some(errs))?,
        failures,
    })
}
