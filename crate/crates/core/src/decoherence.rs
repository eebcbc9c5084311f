//! Phenomenological decoherence: intrinsic `T₂` plus a pulse-induced dephasing
//! rate `R` that relaxes with time constant `T_h` after each optical pulse.
//!
//! A coherence obeys
//!
//! ```text
//! d⟨σ⁺⟩/dt = [iω - 1/T₂ - R·e^{-t/T_h}]·⟨σ⁺⟩
//! ```
//!
//! whose magnitude integrates to
//! `|⟨σ⁺(t)⟩| / |⟨σ⁺(0)⟩| = exp(-t/T₂ - R·T_h·(1 - e^{-t/T_h}))`.
//! The clock `t` restarts at every pulse.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, EchoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceParams {
    /// Intrinsic decoherence time `T₂` (s). `f64::INFINITY` disables it.
    pub t2: f64,
    /// Pulse-induced dephasing rate `R` (1/s).
    pub rate_r: f64,
    /// Relaxation time `T_h` of the pulse-induced excitation (s).
    pub t_h: f64,
}

impl DecoherenceParams {
    pub fn new(t2: f64, rate_r: f64, t_h: f64) -> Result<Self> {
        let params = DecoherenceParams { t2, rate_r, t_h };
        params.validate()?;
        Ok(params)
    }

    /// `T₂ = 6.7 µs`, `R⁻¹ = 175 ns`, `T_h = 100 ns`.
    pub fn reference() -> Self {
        DecoherenceParams {
            t2: 6.7e-6,
            rate_r: 1.0 / 175e-9,
            t_h: 100e-9,
        }
    }

    /// No decoherence at all: infinite `T₂`, `R = 0`.
    pub fn none() -> Self {
        DecoherenceParams {
            t2: f64::INFINITY,
            rate_r: 0.0,
            t_h: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t2 > 0.0) {
            return Err(EchoError::invalid(format!(
                "T2 must be positive, got {}",
                self.t2
            )));
        }
        ensure_finite("R", self.rate_r)?;
        if self.rate_r < 0.0 {
            return Err(EchoError::invalid(format!(
                "R must be >= 0, got {}",
                self.rate_r
            )));
        }
        ensure_finite("T_h", self.t_h)?;
        if !(self.t_h > 0.0) {
            return Err(EchoError::invalid(format!(
                "T_h must be positive, got {}",
                self.t_h
            )));
        }
        Ok(())
    }

    /// Exponent `t/T₂ + R·T_h·(1 - e^{-t/T_h})` of the decay after one pulse.
    fn exponent(&self, t: f64) -> f64 {
        t / self.t2 + self.rate_r * self.t_h * (-(t / self.t_h)).exp_m1().abs()
    }
}

/// Per-pulse coherence retention `D(θ) = 1 - slope·|θ|`, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseFidelityModel {
    pub slope: f64,
}

impl PulseFidelityModel {
    pub fn new(slope: f64) -> Result<Self> {
        ensure_finite("fidelity slope", slope)?;
        if slope < 0.0 {
            return Err(EchoError::invalid(format!(
                "fidelity slope must be >= 0, got {slope}"
            )));
        }
        Ok(PulseFidelityModel { slope })
    }

    /// Perfect pulses, `D ≡ 1`.
    pub fn ideal() -> Self {
        PulseFidelityModel { slope: 0.0 }
    }

    pub fn retention(&self, theta: f64) -> f64 {
        (1.0 - self.slope * theta.abs()).clamp(0.0, 1.0)
    }
}

impl Default for PulseFidelityModel {
    fn default() -> Self {
        PulseFidelityModel { slope: 0.25 }
    }
}

/// Magnitude of `⟨σ⁺(t)⟩/⟨σ⁺(0)⟩` a time `t` after a pulse.
pub fn coherence_decay_factor(t: f64, dec: &DecoherenceParams) -> Result<f64> {
    ensure_finite("elapsed time", t)?;
    if t < 0.0 {
        return Err(EchoError::invalid(format!(
            "elapsed time must be >= 0, got {t}"
        )));
    }
    dec.validate()?;
    Ok((-dec.exponent(t)).exp())
}

/// Echo visibility for equal delays `τ₁ = τ₂ = τ`:
/// `V₀·exp(-2τ/T₂ - 2R·T_h·(1 - e^{-τ/T_h}))`.
pub fn visibility_model(tau: f64, v0: f64, dec: &DecoherenceParams) -> Result<f64> {
    ensure_finite("tau", tau)?;
    if tau < 0.0 {
        return Err(EchoError::invalid(format!("tau must be >= 0, got {tau}")));
    }
    if !(0.0..=1.0).contains(&v0) {
        return Err(EchoError::invalid(format!(
            "V0 must lie in [0, 1], got {v0}"
        )));
    }
    dec.validate()?;
    Ok(v0 * (-2.0 * dec.exponent(tau)).exp())
}

/// Initial echo visibility before decay:
///
/// ```text
/// V₀ = p0·D(θ₁)·D(θ₂)·sinθ₃·sin²(θ₂/2)·sinθ₁ / (1 - p0·cosθ₃·cosθ₂·cosθ₁)
/// ```
///
/// With `D ≡ 1` this is exactly the fringe contrast `(max-min)/(max+min)` of
/// the ensemble flip probability once the non-echo terms have dephased. The
/// `θ₂` factor is `sin²(θ₂/2)`, the echo-term coefficient.
pub fn v0_estimate(angles: [f64; 3], p0: f64, fid: &PulseFidelityModel) -> Result<f64> {
    for a in angles {
        ensure_finite("rotation angle", a)?;
    }
    ensure_finite("p0", p0)?;
    if !(-1.0..=1.0).contains(&p0) {
        return Err(EchoError::invalid(format!(
            "p0 must lie in [-1, 1], got {p0}"
        )));
    }
    let [th1, th2, th3] = angles;
    let denom = 1.0 - p0 * th3.cos() * th2.cos() * th1.cos();
    if denom.abs() < 1e-12 {
        return Err(EchoError::DegenerateConfiguration(format!(
            "mean signal vanishes for angles {angles:?} at p0 = {p0}"
        )));
    }
    let numer = p0
        * fid.retention(th1)
        * fid.retention(th2)
        * th3.sin()
        * (0.5 * th2).sin().powi(2)
        * th1.sin();
    Ok(numer / denom)
}

/// `sqrt(π / (8 ln 2))`: `∫exp(-8 ln2·t²/w²) dt = w·GAUSSIAN_SQ_AREA`.
const GAUSSIAN_SQ_AREA: f64 = 0.7526918477892525;

/// Spin rotation angle of a detuned Gaussian optical pulse.
///
/// Adiabatic elimination of the excited state gives the effective coupling
/// `Ω_e(t) = Ω(t)²/(2Δ)`. For `Ω(t) = Ω_peak·exp(-4ln2·t²/fwhm²)` the pulse
/// area is `Ω_peak²·fwhm·sqrt(π/(8ln2)) / (2Δ)`, linear in pulse energy.
pub fn effective_rotation_angle(peak_rabi: f64, detuning: f64, fwhm: f64) -> Result<f64> {
    ensure_finite("peak Rabi frequency", peak_rabi)?;
    ensure_finite("detuning", detuning)?;
    ensure_finite("pulse width", fwhm)?;
    if !(detuning > 0.0) {
        return Err(EchoError::invalid(format!(
            "detuning must be positive, got {detuning}"
        )));
    }
    if !(fwhm > 0.0) {
        return Err(EchoError::invalid(format!(
            "pulse width must be positive, got {fwhm}"
        )));
    }
    if peak_rabi < 0.0 {
        return Err(EchoError::invalid(format!(
            "peak Rabi frequency must be >= 0, got {peak_rabi}"
        )));
    }
    Ok(peak_rabi * peak_rabi * fwhm * GAUSSIAN_SQ_AREA / (2.0 * detuning))
}
