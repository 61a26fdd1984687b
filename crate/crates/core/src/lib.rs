//! Federated optimization with linear convergence: the FedLin method, the
//! FedAvg, FedProx, FedNova and FedSplit baselines, closed-form oracles for
//! their fixed points, and a reproducible experiment harness.

pub mod algorithms;
pub mod cli;
pub mod compression;
pub mod error;
pub mod floatfmt;
pub mod harness;
pub mod linalg;
pub mod objectives;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
