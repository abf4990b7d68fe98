//! Parameter estimation for nonlinear ODE models from noisy observations.
//!
//! The estimator fits numerical ODE solutions to data by nonlinear least
//! squares. Time-varying parameters are approximated by B-spline sieves.
//! Inference uses the observed pseudo-information and the weighted bootstrap,
//! and spline sizes are chosen by AICc.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod estimate;
pub mod ident;
pub mod inference;
pub mod io;
pub mod models;
pub mod optim;
pub mod rng;
pub mod solver;
pub mod spline;
pub mod study;

pub use error::{Error, Result};
