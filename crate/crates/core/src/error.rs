use std::path::PathBuf;

/// Errors produced by the SIPS core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sampler diverged at step {step}: state is no longer finite")]
    Diverged { step: usize },

    #[error("training diverged at iteration {iteration}: loss is no longer finite")]
    TrainingDiverged { iteration: usize },

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("predictor requires the paired clean signal as context")]
    MissingContext,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("WAV error: {0}")]
    Wav(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Returns `Ok(t)` when `t` lies in the closed unit interval.
pub(crate) fn check_unit_time(t: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(Error::Domain {
            name: "t",
            value: t,
            domain: "[0, 1]",
        })
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
