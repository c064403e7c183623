//! Certification toolkit for stochastic Lyapunov stability with non-smooth
//! candidate functions.
//!
//! The pipeline runs from coefficient expressions ([`expr`]) through the
//! stochastic system model ([`sde`]) and its generator ([`generator`]) to
//! structured candidates and their semijets ([`candidates`]), the
//! supersolution checker ([`checker`]), C² smoothing surrogates with
//! forward-completeness certificates ([`connector`]), LQG certificates
//! ([`lqg`]) and Monte Carlo probes of the stability functionals
//! ([`montecarlo`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod candidates;
pub mod checker;
pub mod connector;
pub mod error;
pub mod expr;
pub mod generator;
pub mod json;
pub mod linalg;
pub mod lqg;
pub mod montecarlo;
pub mod sde;

pub use error::{Error, Result};
