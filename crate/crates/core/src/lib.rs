//! Integrated Brownian motion: covariance spectra, upper-tail asymptotics and
//! Monte Carlo estimators.

// `!(x > 0.0)` is used throughout to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimators;
pub mod formulas;
pub mod linalg;
pub mod process;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod spectrum;
pub mod verify;

pub use error::{Error, Result};
pub use process::{kernel_value, state_transition, variance, ProcessSpec, StateTransition};
pub use rng::RngStream;
pub use spectrum::{nystrom_spectrum, NystromOptions, Spectrum};
