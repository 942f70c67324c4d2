//! Fractional differentiation operators on a segment of a ray and a
//! certified one-dimensional Galerkin solver for elliptic problems with a
//! fractional lower-order term.
//!
//! The crate is organized around five areas:
//!
//! * [`frac_ops`]: right-sided fractional integral, truncated and limit
//!   right-sided difference derivatives, and the weighted left-sided
//!   derivative, all evaluated by singularity-aware product integration.
//! * [`discretization`]: interval meshes, piecewise-linear interpolation,
//!   norms, difference quotients and coefficient fields.
//! * [`variational`]: bilinear-form assembly, boundary-value solves,
//!   solvability certificates and an interior-regularity probe.
//! * [`verification`]: independent adaptive-quadrature oracles, identity
//!   tests, convergence studies and scan reports.
//! * [`expr`] / [`config`] / [`runner`]: expression parsing, run
//!   configuration and the command-line driver.

pub mod config;
pub mod discretization;
pub mod error;
pub mod expr;
pub mod frac_ops;
pub mod grid;
pub mod report;
pub mod runner;
pub mod variational;
pub mod verification;

mod par;

pub use error::{Error, Result};
