use std::path::PathBuf;

use deepjive_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("rank constraint violated: {0}")]
    RankConstraint(String),
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not column-orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("wrong variant: {0}")]
    WrongVariant(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("{path}: parse error at byte {offset}: {detail}")]
    Parse {
        path: PathBuf,
        offset: u64,
        detail: String,
    },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
