//! Numerical laboratory for gradient flows `u' = -grad(phi(u))` of C1 energies
//! on R^d (d <= 3) and their discrete proximal (implicit Euler) approximations.
//!
//! The crate is organized around the pipeline it supports:
//!
//! - [`energy`]: energies with gradients, finite point clouds with distance
//!   functions, and empirical concave moduli of continuity;
//! - [`flow`]: a Dormand-Prince reference integrator, sampled trajectories,
//!   and the sup-type trajectory metrics used everywhere else;
//! - [`mm`]: the minimizing-movement engine (global proximal steps, branch
//!   enumeration on ties, Euler residual diagnostics, tau-sweep studies);
//! - [`penalize`]: distance-penalized perturbed energies together with the
//!   quantitative penalty/step-size selection rules and confinement checks;
//! - [`reparam`]: the order structure on solutions sharing a range (time
//!   changes, dwell-time excision, minimality defect);
//! - [`onedim`]: pseudo-inverses of monotone scalar solutions, singular
//!   decomposition of their derivative, mollified smoothing, and the
//!   rectify/lift machinery for curves in R^d;
//! - [`cantor`]: an executable model of a flow whose velocity vanishes on a
//!   Cantor-like set, with a minimal and a non-minimal solution;
//! - [`scenario`]: config-driven experiment runner emitting CSV/JSON.

pub mod cantor;
pub mod catalog;
pub mod energy;
pub mod error;
pub mod flow;
pub mod io;
pub mod mm;
pub mod onedim;
pub mod penalize;
pub mod point;
pub mod reparam;
pub mod scenario;

pub use error::{GradFlowError, Result};
pub use point::Point;
