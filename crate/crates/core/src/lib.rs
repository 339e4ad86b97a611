//! Simulation and control synthesis for bilinear quantum systems
//! `ψ' = Aψ + u(t)Bψ` given by spectral data.
//!
//! - [`model`]: the triple `(A, B, Φ)`, Galerkin compressions, structural checks.
//! - [`signal`]: piecewise-constant controls, total variation, `L^p` norms.
//! - [`propagate`]: exact piecewise propagators and an ODE oracle.
//! - [`energy`]: A-norm, energy, and the total-variation growth bounds.
//! - [`pulse`]: resonant sine pulses and ladder climbing.
//! - [`experiments`]: reproducible sweeps behind the command-line tool.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod experiments;
pub mod model;
pub mod propagate;
pub mod pulse;
pub mod signal;

pub use error::{Error, ErrorClass, Result};
pub use model::{make_oscillator, make_rotor, CompressedPair, OperatorTriple, RelativeBound};
pub use propagate::{propagate, PropagationResult, State};
pub use signal::{sample_sine, ControlSignal, SinePulseSpec};
