//! Federated clustering via matrix-factorization models.
//!
//! The library factors distributed data `X = [X_1 … X_P]` into a shared
//! centroid matrix `W` and per-client assignment matrices `H_p` by
//! alternating projected gradient steps, coordinated by a simulated server:
//! either by averaging client models (`FedCAvg`) or by sharing differential
//! gradient statistics (`FedCGds`), with per-round communication metering,
//! centralized baselines, dataset generators, and clustering metrics.

pub mod algorithms;
pub mod data;
pub mod error;
pub mod fedruntime;
pub mod linalg;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
pub use model::{DataShard, FactorState, Problem};
