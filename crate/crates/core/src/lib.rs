//! Estimation of low-rank Markov transition matrices by rank-constrained
//! maximum likelihood.
//!
//! The rank constraint is replaced by the exact penalty
//! `c (‖X‖_* − ‖X‖_(r))`, which is a difference of convex functions. The
//! [`dc`] module runs a proximal DC iteration on it, each step solved by the
//! symmetric Gauss–Seidel ADMM of [`admm`] applied to the dual problem, and
//! grows `c` until the iterate has rank `r`. Baseline estimators, synthetic
//! low-rank chains, accuracy metrics and a reproducible experiment harness
//! complete the toolkit.
//!
//! ```
//! use lrmc::markov::{count_transitions, generate_latent_lowrank, simulate, SamplingMode};
//! use lrmc::estimators::{estimate, EstimatorSpec};
//!
//! let truth = generate_latent_lowrank(8, 2, 1).unwrap();
//! let traj = simulate(&truth, 5_000, SamplingMode::Chain, 2).unwrap();
//! let counts = count_transitions(&traj);
//! let fit = estimate(&EstimatorSpec::mle(), &counts).unwrap();
//! assert_eq!(fit.matrix.p(), 8);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod admm;
pub mod dc;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod harness;
pub mod io;
pub mod likelihood;
pub mod markov;
pub mod metrics;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use exec::ExecPolicy;

/// Dense real matrix used throughout.
pub type Matrix = nalgebra::DMatrix<f64>;
