//! Numerical solver for forward-backward stochastic Volterra integral
//! equation systems.
//!
//! Two neural fields — a value field Y(t, x) and a two-time control field
//! Z(t, s, x_t, x_s) — are trained to minimize the mean-squared free-term
//! residual of the Euler-discretized variational formulation, over Monte
//! Carlo batches of Wiener increments. The crate ships:
//!
//! * a minimal reverse-mode autodiff tape ([`tape`]) over dense f64
//!   tensors ([`tensor`]);
//! * the two MLP fields ([`net`]);
//! * counter-based reproducible path generation and Euler-Maruyama
//!   simulation, including differentiable coupled forwards ([`sde`], [`rng`]);
//! * the benchmark problem catalog with closed-form references ([`problem`]);
//! * the two-clock rollout loss ([`rollout`]), Adam training ([`trainer`]),
//!   error metrics and convergence/stability studies ([`metrics`],
//!   [`convergence`], [`stability`]);
//! * checkpointing, key = value run configuration, and run manifests
//!   ([`checkpoint`], [`config`], [`manifest`]).
//!
//! Everything that sums over Monte Carlo paths is chunked with fixed
//! boundaries and reduced in chunk order, so results are bitwise
//! reproducible for any thread count (see [`exec`]).

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod convergence;
pub mod error;
pub mod exec;
pub mod fields;
pub mod grid;
pub mod manifest;
pub mod metrics;
pub mod net;
pub mod problem;
pub mod rng;
pub mod rollout;
pub mod sde;
pub mod stability;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
