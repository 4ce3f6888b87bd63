//! Utility-based composite endpoint for joint longitudinal tumor-burden and
//! survival data.
//!
//! The crate covers the whole analysis path:
//!
//! * [`datagen`] simulates randomized trials with exponential event times,
//!   administrative censoring from an event-driven stopping rule, and
//!   tumor-burden trajectories on scaled time.
//! * [`likelihood`] evaluates the joint log-posterior (with censored event
//!   times carried as augmented parameters) and its analytic gradient.
//! * [`sampler`] draws from that posterior with Hamiltonian Monte Carlo.
//! * [`endpoint`] turns posterior draws into per-subject areas under the
//!   utility curve (tumor-burden part plus post-event penalty).
//! * [`inference`] computes treatment-effect estimates with Bayesian
//!   bootstrap standard errors and one-sided Wald tests.
//! * [`montecarlo`] replicates the whole pipeline to estimate rejection
//!   rates, bias, and MSE.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod datagen;
pub mod domain;
pub mod endpoint;
pub mod error;
pub mod inference;
pub mod io;
pub mod likelihood;
pub mod montecarlo;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
