//! Denoisers `D(t, x) -> z_hat` estimating the injected interpolant noise.

mod mlp;
mod train;

pub use mlp::{Gradients, MlpDenoiser, TrainingBatch, MODEL_FORMAT, MODEL_VERSION};
pub use train::{sample_batch, train, TrainConfig, TrainOutcome};

use crate::error::{check_dim, Error, Result};
use crate::oracle::GaussianPairMixture;
use crate::schedule::NoiseSchedule;

pub trait Denoiser {
    fn denoise(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserKind {
    Zero,
    /// Exact conditional noise of the mirror interpolant `S + (a + gamma(t)) Z` under `prior`.
    OracleEta {
        prior: GaussianPairMixture,
        schedule: NoiseSchedule,
    },
    Trained(MlpDenoiser),
}

impl DenoiserKind {
    /// Input dimension the denoiser expects, if fixed.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Zero => None,
            Self::OracleEta { prior, .. } => Some(prior.dim()),
            Self::Trained(net) => Some(net.dim()),
        }
    }
}

impl Denoiser for DenoiserKind {
    fn denoise(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Zero => Ok(vec![0.0; x.len()]),
            Self::OracleEta { prior, schedule } => {
                let sigma = schedule.training_sigma(t)?;
                prior.mirror_eta(sigma, x)
            }
            Self::Trained(net) => net.forward(t, x),
        }
    }
}

/// Applies a one-dimensional denoiser to every coordinate independently.
#[derive(Debug, Clone)]
pub struct Coordinatewise<D>(pub D);

impl<D: Denoiser> Denoiser for Coordinatewise<D> {
    fn denoise(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        for &v in x {
            let z = self.0.denoise(t, &[v])?;
            check_dim(1, z.len())?;
            out.push(z[0]);
        }
        Ok(out)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        (**self).denoise(t, x)
    }
}

/// Adapts a closure into a [`Denoiser`].
pub struct FnDenoiser<F>(pub F);

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    fn denoise(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let z = (self.0)(t, x);
        if z.len() != x.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                got: z.len(),
            });
        }
        Ok(z)
    }
}
