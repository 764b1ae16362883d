//! Rotationally invariant L1-norm PCA.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod pipeline;
pub mod solver;
pub mod types;

pub use error::{Error, Result};
pub use solver::{solve, RunReport, RunTrace, StopReason, TraceRecord};
pub use types::{BetaMode, DataMatrix, IterateTriple, SignMatrix, SolverConfig, StiefelPoint};
