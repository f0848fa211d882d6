//! Solver and verification toolkit for a 1D parabolic-parabolic
//! Keller-Segel system,
//!
//! ```text
//! u_t = (u_x + u W_x - chi u v_x)_x
//! v_t = v_xx - kappa v + chi u
//! ```
//!
//! discretized as a minimizing-movement (JKO) scheme for the entropy
//!
//! ```text
//! H(u,v) = int [ u log u + u W + 1/2 v_x^2 + kappa/2 v^2 - chi u v ] dx
//! ```
//!
//! with respect to the compound metric
//! `dist((u,v),(u',v'))^2 = W2(u,u')^2 + ||v - v'||_L2^2`.
//!
//! The cell density `u` is carried in Lagrangian (quantile) form, which makes
//! the 1D Wasserstein distance a plain L2 gap and conserves mass exactly; the
//! chemoattractant `v` lives on a uniform Eulerian grid.
//!
//! Modules:
//! - [`grid_transport`]: grids, quantile densities, exact 1D optimal transport
//! - [`energetics`]: the entropy functional and its Lyapunov decomposition
//! - [`jko_solver`]: the variational time stepper
//! - [`equilibrium`]: the unique stationary state via damped Picard iteration
//! - [`reference_fd`]: an independent IMEX finite-difference oracle
//! - [`diagnostics`]: decay-rate fits, inequality checks, cross-validation
//! - [`sampling`]: seeded generators of smooth random states for property runs

pub mod diagnostics;
pub mod energetics;
pub mod equilibrium;
mod error;
pub mod grid_transport;
pub mod jko_solver;
pub mod reference_fd;
pub mod sampling;
pub(crate) mod tridiag;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
