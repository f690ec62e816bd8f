use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("CFL number {cfl:.4} exceeds {limit}; use at least nt = {required_nt}")]
    CflViolation {
        cfl: f64,
        limit: f64,
        required_nt: usize,
    },

    #[error("measured ellipticity {measured:.6} of the smoothed diffusion is below {threshold:.6}")]
    Ellipticity { measured: f64, threshold: f64 },

    #[error("query (t = {t}, x = {x:?}) lies outside the field domain")]
    OutOfDomain { t: f64, x: Vec<f64> },

    #[error("regression at time step {step} is rank deficient (rank {rank} < {basis} basis functions)")]
    RankDeficient {
        step: usize,
        rank: usize,
        basis: usize,
    },

    #[error("atom w = {w:?} lies outside the ball of radius {radius}")]
    OutsideBall { w: Vec<f64>, radius: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
