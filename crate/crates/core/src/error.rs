use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("data format error: {0}")]
    DataFormat(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("cannot balance weights: {0}")]
    Balance(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("argument outside of domain: {0}")]
    Domain(String),

    #[error("factorization failed: {0}")]
    Singularity(String),

    #[error("cache was built for different hyperparameters")]
    StaleCache,

    #[error("problem too large for the dense reference: {0}")]
    Size(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("worker connect failed: {addr}: {source}")]
    WorkerConnect {
        addr: String,
        #[source]
        source: io::Error,
    },

    #[error("lost connection to worker {addr}: {reason}")]
    WorkerLost { addr: String, reason: String },

    #[error("worker {addr} did not answer within {secs} s")]
    Timeout { addr: String, secs: u64 },

    #[error("worker {addr} reported an error: {message}")]
    Remote { addr: String, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
