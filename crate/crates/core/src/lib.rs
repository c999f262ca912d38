//! Stochastic-interpolant sampling with a predictive–generative drift split.
//!
//! A predictor supplies the constant velocity `P(y) - y`; a denoiser
//! estimates the injected interpolant noise; an Euler–Maruyama loop
//! integrates the resulting SDE from the observation at `t = 0` to the clean
//! estimate at `t = 1`. A Gaussian-mixture prior over paired endpoints gives
//! exact velocity, noise and score fields for verification, and the
//! [`signal`] module carries the compressed STFT representation used for audio.

pub mod denoiser;
pub mod error;
pub mod oracle;
pub mod predictor;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod signal;
pub mod verify;

pub use denoiser::{Denoiser, DenoiserKind, MlpDenoiser, TrainConfig};
pub use error::{Error, Result};
pub use oracle::{GaussianPairComponent, GaussianPairMixture};
pub use predictor::{Predictor, PredictorKind};
pub use sampler::{sips_sample, SamplerConfig, TimeGrid};
pub use schedule::NoiseSchedule;
