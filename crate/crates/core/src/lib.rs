//! Deterministic federated-learning simulator with partial variable training.
//!
//! Clients train only a subset of the model's variables each round, buffer
//! only the activations those variables need, and upload only the deltas of
//! the variables they trained. The server averages each variable over the
//! clients that actually trained it.
//!
//! Module map:
//!
//! - [`nn`]: block network, forward pass, freeze-aware backward pass and a
//!   finite-difference gradient oracle.
//! - [`taxonomy`]: variable classes and freezability.
//! - [`freezing`]: fixed / per-round / per-client-per-round freeze plans.
//! - [`client`]: local SGD under a plan.
//! - [`cost`]: analytic peak-memory and upload-size accounting.
//! - [`wire`]: binary frame for client updates.
//! - [`server`]: aggregation, rounds and hyperparameter escalation.
//! - [`data`]: synthetic data, CSV ingestion, IID and Dirichlet partitions.
//! - [`harness`]: experiment config, metrics CSV, ablations.

pub mod client;
pub mod cost;
pub mod data;
pub mod error;
pub mod freezing;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod server;
pub mod taxonomy;
pub mod wire;

pub use error::{Error, Result};
pub use taxonomy::VarId;
