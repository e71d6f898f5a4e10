use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid degree distribution: {0}")]
    InvalidDistribution(String),

    #[error("degree distribution violates the AVOID mask: row b={battery} puts mass on degree {degree}")]
    AvoidMaskViolated { battery: usize, degree: usize },

    #[error("operation needs a finite battery capacity")]
    UnlimitedBattery,

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("markov chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("steady state did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("trace contains dropped replicas; conventional SIC cannot handle them")]
    TraceHasDrops,

    #[error("no packets generated, estimate undefined")]
    NoSamples,

    #[error("config file {path}: {message}")]
    ConfigFile { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
