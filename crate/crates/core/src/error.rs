use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {what} expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("bad IDX format: {0}")]
    Format(String),

    #[error("truncated IDX stream: needed {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("cannot evaluate on an empty set")]
    EmptyEvaluation,

    #[error("protocol violation: {0}")]
    Protocol(&'static str),

    #[error("log-moment overflow at q={q}, z={z}, lambda={lambda}: {detail}")]
    Overflow {
        q: f64,
        z: f64,
        lambda: u32,
        detail: &'static str,
    },

    #[error("client index {index} out of range for {clients} clients")]
    ClientIndex { index: usize, clients: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
