//! Radial solutions of `-F(D^2 u) = |u|^{p-1} u` in the unit ball, with `F` one
//! of the Pucci extremal operators.
//!
//! The crate computes positive and sign-changing radial solutions by shooting,
//! estimates the critical exponents for positive and nodal solutions, runs the
//! concentration sweeps as the exponent approaches them, and evaluates the
//! scale-invariant weighted energies of each nodal region.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod energy;
pub mod error;
pub mod exponents;
pub mod integrator;
pub mod model;
pub mod nodal;
pub mod repro;
pub mod shooting;

pub use error::{Error, Result};
pub use integrator::{integrate_exterior, integrate_from_center, Event, EventKind, ExteriorKind, IntegrationOptions, RadialProfile, StopRule};
pub use model::{Branch, OperatorSpec};
