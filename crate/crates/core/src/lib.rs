//! Simulation and analysis of three-pulse optical spin echoes in
//! inhomogeneously broadened two-level spin ensembles.
//!
//! * [`spin`]: exact SU(2) evolution of a single spin.
//! * [`ensemble`]: Gaussian ensemble averages (closed form, quadrature, Monte Carlo).
//! * [`decoherence`]: pulse-induced and intrinsic decoherence, visibility law, V₀ estimate.
//! * [`fringe`]: drift-removing sinusoid fits and visibility extraction.
//! * [`decay_fit`]: Levenberg–Marquardt fit of the visibility decay.
//! * [`experiment`]: the full synthetic experiment producing scans and curves.
//! * [`io`]: CSV and config-file formats.
//! * [`oracle`]: cross-checks between the three ensemble routes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decay_fit;
pub mod decoherence;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod fringe;
pub mod io;
pub mod oracle;
pub mod quadrature;
pub mod spin;

pub use decay_fit::{fit_visibility_decay, DecayFitResult, DecayGuess, VisibilityCurve};
pub use decoherence::{
    coherence_decay_factor, effective_rotation_angle, v0_estimate, visibility_model,
    DecoherenceParams, PulseFidelityModel,
};
pub use ensemble::{
    echo_amplitude, gaussian_average_mc, gaussian_average_quadrature, sigma_z_analytic,
    EnsembleParams, EnsembleResult,
};
pub use error::{EchoError, Result};
pub use experiment::{
    simulate_echo_experiment, simulate_fringe_scan, EchoSweep, ExperimentConfig, NoiseModel,
};
pub use fringe::{fit_fringe, visibility_from_fit, FringeFit, FringeScan};
pub use spin::{
    evolve_sequence, flip_probability, rot_x, rot_z, PulseSequence, SpinState, Unitary2,
};
