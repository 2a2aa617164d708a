//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (sidecar/payload disagreement, bad text).
    #[error("format: {0}")]
    Format(String),

    #[error("dims mismatch: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),

    #[error("target dims {target:?} smaller than actual {actual:?}")]
    DimsTooSmall {
        actual: [usize; 3],
        target: [usize; 3],
    },

    #[error("volume is constant; cannot normalize")]
    ConstantVolume,

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),

    #[error("empty surface after morphology")]
    EmptySurface,

    #[error("empty spatial index")]
    EmptyIndex,

    #[error("no valid model: {0}")]
    NoValidModel(&'static str),

    #[error("correlation volume has no valid cells")]
    AllInvalid,

    #[error("phantom spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Pipeline-stage wrapper so callers can tell which stage broke.
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
