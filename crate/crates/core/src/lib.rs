//! Federated optimization engine with fairness-weighted adaptive server
//! moments.
//!
//! Everything in this crate is pure computation over owned data and builds
//! without `std` (an allocator is required). File formats, configuration and
//! the command line live in the `fairfed-sim` crate.
//!
//! Layout:
//!
//! - [`numerics`]: the [`ParamVector`] container and its reductions.
//! - [`models`]: linear-softmax and one-hidden-layer MLP classifiers with
//!   analytic gradients.
//! - [`data`]: LEAF-style synthetic federations, Gaussian-blob pools and
//!   Dirichlet label-skew partitioning.
//! - [`local_solver`]: client-side SGD, heavy-ball and Nesterov momentum.
//! - [`server_opt`]: FedAvg, FedAdam, FedNova, q-FedAvg, centralized Adam and
//!   N-step accumulated Adam.
//! - [`adafedadam`]: normalized client updates, certainty, inverse training
//!   rate weighting and the certainty-adapted Adam step.
//! - [`metrics`]: fairness statistics, convergence diagnostics and Pareto
//!   assembly.
//! - [`federation`]: the per-round driver shared by every algorithm.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adafedadam;
pub mod data;
mod error;
pub mod federation;
pub mod local_solver;
pub(crate) mod math;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod objective;
pub mod rng;
pub mod server_opt;

pub use error::{Error, Result};
pub use numerics::ParamVector;
