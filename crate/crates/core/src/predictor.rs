//! Predictors `P(y) -> s_hat`. Their residual `P(y) - y` is the constant
//! drift the sampler integrates.

use crate::error::{check_dim, Error, Result};
use crate::oracle::GaussianPairMixture;

pub trait Predictor {
    fn predict(&self, y: &[f64]) -> Result<Vec<f64>>;
}

/// Built-in predictors.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorKind {
    Identity,
    /// Returns the paired clean signal. Only usable through [`PredictorKind::with_context`].
    OracleClean,
    /// `E[S | Y = y]` under the given prior.
    MmsePosteriorMean(GaussianPairMixture),
    /// `gain * inner(y) + bias`. An empty `bias` means zero.
    Perturbed {
        inner: Box<PredictorKind>,
        gain: f64,
        bias: Vec<f64>,
    },
}

impl PredictorKind {
    pub fn perturbed(inner: PredictorKind, gain: f64, bias: Vec<f64>) -> Self {
        Self::Perturbed {
            inner: Box::new(inner),
            gain,
            bias,
        }
    }

    pub fn predict(&self, y: &[f64], context: Option<&[f64]>) -> Result<Vec<f64>> {
        match self {
            Self::Identity => Ok(y.to_vec()),
            Self::OracleClean => {
                let s = context.ok_or(Error::MissingContext)?;
                check_dim(y.len(), s.len())?;
                Ok(s.to_vec())
            }
            Self::MmsePosteriorMean(prior) => prior.mmse_predict(y),
            Self::Perturbed { inner, gain, bias } => {
                let mut out = inner.predict(y, context)?;
                if bias.is_empty() {
                    out.iter_mut().for_each(|v| *v *= gain);
                } else {
                    check_dim(out.len(), bias.len())?;
                    out.iter_mut()
                        .zip(bias)
                        .for_each(|(v, b)| *v = gain * *v + b);
                }
                Ok(out)
            }
        }
    }

    /// Binds the paired clean signal so [`PredictorKind::OracleClean`] can answer.
    pub fn with_context<'a>(&'a self, clean: &'a [f64]) -> WithContext<'a> {
        WithContext {
            kind: self,
            clean: Some(clean),
        }
    }
}

impl Predictor for PredictorKind {
    fn predict(&self, y: &[f64]) -> Result<Vec<f64>> {
        PredictorKind::predict(self, y, None)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WithContext<'a> {
    kind: &'a PredictorKind,
    clean: Option<&'a [f64]>,
}

impl Predictor for WithContext<'_> {
    fn predict(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.kind.predict(y, self.clean)
    }
}

/// Adapts a closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn predict(&self, y: &[f64]) -> Result<Vec<f64>> {
        (self.0)(y)
    }
}
