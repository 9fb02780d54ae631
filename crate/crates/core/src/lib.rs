//! Ground states of the rotating Gross–Pitaevskii equation by energy-adaptive
//! Riemannian conjugate gradients, with an optional learned correction
//! injected once mid-iteration.

// `!(x > 0.0)` is used on purpose so NaN falls into the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accelerator;
pub mod bench;
pub mod config;
pub mod dataset;
pub mod earcg;
pub mod error;
pub mod field;
pub mod hamiltonian;
pub mod manifold;
pub mod nn;
pub mod plot;
pub mod statefile;

pub use error::{Error, Result};
pub use accelerator::{accelerated_solve, AccelConfig, Predictor};
pub use earcg::{earcg_solve, EarcgConfig, RunTrace};
pub use field::{inner_l2, Field, Grid, State, TangentField};
pub use hamiltonian::{GpeOperator, GpeParams, HamiltonianContext};
