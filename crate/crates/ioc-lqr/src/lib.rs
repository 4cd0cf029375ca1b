//! Forward and inverse optimal control for infinite-horizon, average-cost
//! linear quadratic regulators.
//!
//! The crate covers the full pipeline around the discrete-time model
//! `x[t+1] = A x[t] + B u[t] + w[t]` with noisy observations
//! `y[t] = x[t] + v[t]`:
//!
//! - [`lqr`] — continuous-to-discrete conversion, the stabilizing solution of
//!   the discrete algebraic Riccati equation, and the optimal feedback gain;
//! - [`identifiability`] — whether the quadratic state cost behind an
//!   observed closed loop is unique, with constructive counterexample
//!   certificates when it is not;
//! - [`sim`] — closed-loop trajectory sampling and streaming reduction of
//!   observations to Gram statistics;
//! - [`conic`] — a small dense solver for linear objectives over the
//!   intersection of semidefinite constraints and Frobenius-norm balls;
//! - [`estimator`] — the convex gain estimator built from Gram statistics;
//! - [`experiment`] — the Monte-Carlo consistency study with log-log rate
//!   fits and CSV/SVG/JSON reporting.
//!
//! Runnable walkthroughs for each capability live in `examples/`; the
//! `ioc-lqr` binary exposes the same operations as subcommands.

pub mod conic;
mod error;
pub mod estimator;
pub mod experiment;
pub mod identifiability;
pub mod linalg;
pub mod lqr;
pub mod model;
pub mod plot;
pub mod sim;

pub use error::{Error, Result};
