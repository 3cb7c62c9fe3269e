//! Optimal dividend ratcheting for a Brownian surplus process.
//!
//! An insurer's surplus follows a Brownian motion with drift; dividends
//! are paid at a rate that may be raised but never lowered, up to a cap,
//! and stop at ruin. This crate computes the value of such strategies and
//! the optimal ones:
//!
//! * [`model`]: closed forms for a fixed rate and for the non-ratcheting
//!   barrier benchmark, plus the characteristic roots everything else is
//!   built from.
//! * [`finite`]: optimal threshold policies when the rate must come from
//!   a finite menu, by backward recursion over the menu. Two independent
//!   routes (scalar maximization and an obstacle-problem formulation)
//!   cross-check each other.
//! * [`curve`]: the optimal free boundary for a continuum of rates, as
//!   the solution of an ODE anchored at the cap, with the transport
//!   coefficient recovered both pointwise and by quadrature, and a
//!   verification sweep of the optimality conditions.
//! * [`sim`]: Monte Carlo estimates of any strategy's value, for
//!   validating every computed value function against the dynamics.
//!
//! Everything is deterministic given its inputs; the simulator is
//! deterministic given its seed.

pub mod bfun;
pub mod curve;
pub mod error;
pub mod finite;
pub mod model;
pub mod numerics;
pub mod sim;

pub use error::{CoreError, Result};
pub use model::ModelParams;
