//! File formats, data loading, parallel execution and command implementations
//! for the `dpfed` federated-learning simulator.

pub mod accountant_io;
pub mod commands;
pub mod config;
pub mod error;
pub mod executor;
pub mod metrics;
pub mod mnist;
pub mod model_io;
pub mod sweep;

pub use error::{Error, Result};
