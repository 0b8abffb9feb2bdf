//! Core algorithms for client-level differentially private federated learning.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. It contains the
//! local learner ([`model`]), MNIST-style data handling and non-IID sharding
//! ([`data`]), the privacy primitives and moments accountant ([`dp`]), the
//! curator/client orchestration ([`federation`]) and per-round telemetry
//! ([`telemetry`]). File formats, parallel executors and the command line live
//! in the `dpfed` companion crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod dp;
mod error;
pub mod federation;
mod math;
pub mod model;
pub mod rng;
pub mod telemetry;

pub use error::{Error, Result};
