//! Simulation and estimation toolkit for locked local oscillators.
//!
//! The crate models a noisy local oscillator (LO) with a one-sided
//! fractional-frequency power spectral density, interrogates it with a
//! sequence of Ramsey windows, and compares three ways of steering it:
//! no correction, traditional feedback, and hybrid feedforward, where each
//! correction is a linear predictor built from the transfer-function
//! covariance of past measurements.
//!
//! Module map:
//!
//! * [`spectra`]: power spectra and sum-of-cosines noise synthesis.
//! * [`ramsey`]: measurement windows, sensitivity, cycle schedules.
//! * [`xfer`]: transfer functions and the overlap-integral quadrature.
//! * [`estimator`]: covariance blocks, predictor coefficients, functional unrolling.
//! * [`control`]: controllers, loop plans and per-realization traces.
//! * [`metrics`]: sample/Allan variance, analytic expectations, ensembles.
//! * [`optimize`]: Nelder-Mead and parameter sweeps.
//! * [`config`] and [`cli`]: run configuration and command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod estimator;
pub mod metrics;
pub mod optimize;
mod quad;
pub mod ramsey;
pub mod spectra;
pub mod xfer;

pub use error::{Error, Result};
pub use nalgebra;
