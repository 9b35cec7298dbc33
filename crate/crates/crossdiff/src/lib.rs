//! crossdiff: a numerical laboratory for degenerate cross-diffusion parabolic
//! systems u_t - div grad(P(u)) = f(u). It integrates the regularized systems
//! P_n(u) = lambda_n u + P(u) implicitly in time, monitors the discrete
//! analogs of the a priori estimates that control the limit lambda_n -> 0,
//! extracts the limiting field through Cauchy checks on P(u_n), and verifies
//! uniqueness of that limit across regularization sequences with a backward
//! dual solve.

pub mod cascade;
pub mod cli;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod monitors;
pub mod solver;

pub use error::{CrossDiffError, Result};
