//! Simulation and optimization core for decentralized federated learning
//! with MIMO over-the-air model aggregation.
//!
//! Devices on an undirected graph run local SGD and gossip their models
//! through a shared analog channel: every device multicasts its normalized
//! model with one transmit beamformer while all neighbors transmit at once,
//! and each receiver recovers the weighted neighborhood average with one
//! combiner. The crate covers the channel and transceiver chain, the
//! closed-form communication-error expectations, and an alternating
//! optimizer for beamformers and the mixing matrix.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;

pub mod aircomp;
pub mod beamopt;
pub mod channel;
pub mod convergence;
pub mod error;
pub mod joint;
pub mod linalg;
pub mod mixing;
pub mod rng;
pub mod run;
pub mod task;
#[cfg(test)]
mod testutil;
pub mod topology;
pub mod trainer;
pub mod validation;

pub use error::{Error, Result};
