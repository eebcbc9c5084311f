//! Exact single-spin evolution under instantaneous optical rotations and
//! free Larmor precession.
//!
//! States are stored in the `(up, down)` basis. The spin operators follow the
//! spin-1/2 convention `S = σ/2`, so
//!
//! ```text
//! R_x(θ) = exp(-iθσˣ/2) = cos(θ/2)·I - i·sin(θ/2)·σˣ
//! R_z(θ) = exp(-iθσᶻ/2) = diag(e^{-iθ/2}, e^{+iθ/2})
//! ```
//!
//! and `θ = π` is a full spin flip. Angles are never reduced modulo 2π and
//! global phases are kept as computed; only probabilities are meaningful.

use std::ops::Mul;

use num_complex::Complex64;

use crate::error::{ensure_finite, EchoError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Pure state of one spin-1/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinState {
    pub amp_up: Complex64,
    pub amp_down: Complex64,
}

impl SpinState {
    /// Builds a state from two amplitudes, which must already be normalized
    /// to within 1e-10.
    pub fn new(amp_up: Complex64, amp_down: Complex64) -> Result<Self> {
        let state = SpinState { amp_up, amp_down };
        let norm = state.norm_sqr();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-10 {
            return Err(EchoError::invalid(format!(
                "spin state must be normalized, |up|²+|down|² = {norm}"
            )));
        }
        Ok(state)
    }

    pub fn down() -> Self {
        SpinState {
            amp_up: ZERO,
            amp_down: ONE,
        }
    }

    pub fn up() -> Self {
        SpinState {
            amp_up: ONE,
            amp_down: ZERO,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp_up.norm_sqr() + self.amp_down.norm_sqr()
    }

    /// Probability of finding the spin in `|↑⟩`.
    pub fn flip_probability(&self) -> f64 {
        self.amp_up.norm_sqr()
    }

    /// `⟨σᶻ⟩ = |up|² - |down|²`.
    pub fn sigma_z(&self) -> f64 {
        self.amp_up.norm_sqr() - self.amp_down.norm_sqr()
    }
}

/// `|amp_up|²` of a normalized state.
pub fn flip_probability(state: &SpinState) -> f64 {
    state.flip_probability()
}

/// A 2×2 complex matrix, row-major, acting on `(up, down)` column vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary2 {
    pub m: [[Complex64; 2]; 2],
}

impl Unitary2 {
    pub fn identity() -> Self {
        Unitary2 {
            m: [[ONE, ZERO], [ZERO, ONE]],
        }
    }

    pub fn dagger(&self) -> Self {
        let m = &self.m;
        Unitary2 {
            m: [
                [m[0][0].conj(), m[1][0].conj()],
                [m[0][1].conj(), m[1][1].conj()],
            ],
        }
    }

    pub fn det(&self) -> Complex64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, state: &SpinState) -> SpinState {
        let m = &self.m;
        SpinState {
            amp_up: m[0][0] * state.amp_up + m[0][1] * state.amp_down,
            amp_down: m[1][0] * state.amp_up + m[1][1] * state.amp_down,
        }
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Unitary2) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.m[i][j] - other.m[i][j]).norm());
            }
        }
        worst
    }

    /// Largest entrywise deviation of `U†U` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        (self.dagger() * *self).max_abs_diff(&Unitary2::identity())
    }
}

impl Mul for Unitary2 {
    type Output = Unitary2;

    fn mul(self, rhs: Unitary2) -> Unitary2 {
        let a = &self.m;
        let b = &rhs.m;
        let mut m = [[ZERO; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Unitary2 { m }
    }
}

/// Instantaneous rotation by `theta` about x: `cos(θ/2)·I - i·sin(θ/2)·σˣ`.
pub fn rot_x(theta: f64) -> Result<Unitary2> {
    ensure_finite("rotation angle", theta)?;
    Ok(rot_x_unchecked(theta))
}

/// Free precession by `theta` about z: `diag(e^{-iθ/2}, e^{+iθ/2})`.
pub fn rot_z(theta: f64) -> Result<Unitary2> {
    ensure_finite("precession angle", theta)?;
    Ok(rot_z_unchecked(theta))
}

fn rot_x_unchecked(theta: f64) -> Unitary2 {
    let (s, c) = (0.5 * theta).sin_cos();
    let diag = Complex64::new(c, 0.0);
    let off = Complex64::new(0.0, -s);
    Unitary2 {
        m: [[diag, off], [off, diag]],
    }
}

fn rot_z_unchecked(theta: f64) -> Unitary2 {
    let (s, c) = (0.5 * theta).sin_cos();
    Unitary2 {
        m: [[Complex64::new(c, -s), ZERO], [ZERO, Complex64::new(c, s)]],
    }
}

/// Rotation angles (radians) interleaved with free-evolution delays (seconds).
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    angles: Vec<f64>,
    delays: Vec<f64>,
}

impl PulseSequence {
    /// Requires at least one angle and exactly `angles.len() - 1` delays.
    pub fn new(angles: Vec<f64>, delays: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return Err(EchoError::invalid(
                "pulse sequence needs at least one rotation",
            ));
        }
        if delays.len() + 1 != angles.len() {
            return Err(EchoError::invalid(format!(
                "{} rotations need {} delays, got {}",
                angles.len(),
                angles.len() - 1,
                delays.len()
            )));
        }
        for &a in &angles {
            ensure_finite("rotation angle", a)?;
        }
        for &d in &delays {
            ensure_finite("delay", d)?;
            if d < 0.0 {
                return Err(EchoError::invalid(format!(
                    "delays must be non-negative, got {d}"
                )));
            }
        }
        Ok(PulseSequence { angles, delays })
    }

    /// The three-rotation echo sequence `θ₁ – τ₁ – θ₂ – τ₂ – θ₃`.
    pub fn three_pulse(angles: [f64; 3], taus: [f64; 2]) -> Result<Self> {
        PulseSequence::new(angles.to_vec(), taus.to_vec())
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    /// The `(θ₁,θ₂,θ₃)`, `(τ₁,τ₂)` pair when this is a three-pulse sequence.
    pub fn as_three_pulse(&self) -> Option<([f64; 3], [f64; 2])> {
        match (self.angles.as_slice(), self.delays.as_slice()) {
            (&[a, b, c], &[t1, t2]) => Some(([a, b, c], [t1, t2])),
            _ => None,
        }
    }
}

/// Applies `R_x(θ₁)`, `R_z(ω·τ₁)`, `R_x(θ₂)`, … to `initial`, ending with the
/// last rotation.
pub fn evolve_sequence(seq: &PulseSequence, omega: f64, initial: &SpinState) -> Result<SpinState> {
    ensure_finite("Larmor frequency", omega)?;
    let norm = initial.norm_sqr();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(EchoError::invalid(format!(
            "initial state must be normalized, got norm² {norm}"
        )));
    }
    Ok(evolve_unchecked(seq, omega, initial))
}

pub(crate) fn evolve_unchecked(seq: &PulseSequence, omega: f64, initial: &SpinState) -> SpinState {
    let mut state = rot_x_unchecked(seq.angles[0]).apply(initial);
    for (&theta, &tau) in seq.angles[1..].iter().zip(&seq.delays) {
        state = rot_z_unchecked(omega * tau).apply(&state);
        state = rot_x_unchecked(theta).apply(&state);
    }
    state
}

/// Ensemble-member value `2P - 1` for a spin starting in `|↓⟩`.
pub(crate) fn sigma_z_from_down(seq: &PulseSequence, omega: f64) -> f64 {
    2.0 * evolve_unchecked(seq, omega, &SpinState::down()).flip_probability() - 1.0
}
