//! Potential theory for Poisson problems with measure data.
//!
//! The crate solves `-L u = mu` on model domains (interval, ball, gridded
//! rectangle) for the Laplacian, divergence-form operators and the
//! fractional Laplacian, and provides the tools needed to tell diffuse from
//! concentrated data by looking at `u` alone:
//!
//! * [`envelope`]: smallest excessive majorants (obstacle problems), the
//!   `D^1` norm and the tail curve `T_n = || (|u| - n)^+ ||`.
//! * [`reconstruct`]: energy functionals on the window `{n <= u <= 2n}` that
//!   recover the positive concentrated part from local gradient energy or
//!   from the jump measure of a nonlocal operator.
//! * [`stochastic`]: Monte Carlo samplers (walk on spheres, stable paths) and
//!   uniform-integrability diagnostics along stopping-time families.
//!
//! Kernel convention: every Green function is the kernel of `-L` with `L = Δ`
//! (not `Δ/2`) for local operators and `L = -(-Δ)^{α/2}` with Fourier symbol
//! `|ξ|^α` for the fractional one. Exit distributions do not depend on the
//! time normalisation, so harmonic measures, envelopes and tail functionals
//! are the same under either clock.

pub mod envelope;
pub mod error;
pub mod geometry;
pub mod kernels;
mod linalg;
pub mod measures;
pub mod quadrature;
pub mod reconstruct;
pub mod solve;
pub mod special;
pub mod stochastic;

pub use error::{Error, Result};

/// Crate version, recorded in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use geometry::{Domain, Grid, GridField, Point};
pub use kernels::{DiscreteOperator, OperatorSpec};
pub use measures::{Atom, Decomposition, Density, MeasureData};
pub use solve::Solution;
