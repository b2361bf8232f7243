//! Adaptive tracking control of uncertain Euler-Lagrange systems under
//! user-defined state and input constraints.
//!
//! The crate provides:
//!
//! - [`plant`]: Euler-Lagrange models (a two-link manipulator and a pendulum)
//!   with the regressor decomposition controllers adapt against,
//! - [`feasibility`]: the safe-set algebra that turns state bounds into
//!   error bounds and a barrier radius, plus pre-run checks,
//! - [`controller`]: the saturated, barrier-based adaptive controller and the
//!   classical adaptive baseline,
//! - [`sim`]: a fixed-step simulation engine that integrates the full
//!   augmented closed loop and monitors constraints and the Lyapunov value,
//! - [`runner`]: scenario files, comparison runs, and CSV/JSON emission.
//!
//! The narrative guide under `book/` is mirrored in [`guide`] so its examples
//! compile and run with `cargo test --doc`.

pub mod controller;
pub mod error;
pub mod feasibility;
pub mod guide;
pub mod plant;
pub mod runner;
pub mod sim;

pub use error::{Error, Result};
