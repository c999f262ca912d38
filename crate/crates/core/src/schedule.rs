//! Noise schedule `gamma(t) = c * sin^2(pi t)` and the offset training level `a + gamma(t)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_unit_time, Error, Result};

pub const DEFAULT_AMPLITUDE: f64 = 0.5;
pub const DEFAULT_OFFSET: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    /// Training noise offset.
    #[serde(default = "default_offset")]
    pub a: f64,
    /// Schedule amplitude.
    #[serde(default = "default_amplitude")]
    pub c: f64,
}

fn default_offset() -> f64 {
    DEFAULT_OFFSET
}

fn default_amplitude() -> f64 {
    DEFAULT_AMPLITUDE
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            a: DEFAULT_OFFSET,
            c: DEFAULT_AMPLITUDE,
        }
    }
}

impl NoiseSchedule {
    pub fn new(c: f64, a: f64) -> Result<Self> {
        let sched = Self { a, c };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::Domain {
                name: "c",
                value: self.c,
                domain: "[0, inf)",
            });
        }
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(Error::Domain {
                name: "a",
                value: self.a,
                domain: "[0, inf)",
            });
        }
        Ok(())
    }

    /// `gamma(t) = c sin^2(pi t)`.
    ///
    /// Evaluated through `min(t, 1 - t)` so both endpoints give exactly zero.
    pub fn gamma(&self, t: f64) -> Result<f64> {
        check_unit_time(t)?;
        Ok(self.gamma_unchecked(t))
    }

    /// `gamma_dot(t) = c pi sin(2 pi t)`.
    pub fn gamma_dot(&self, t: f64) -> Result<f64> {
        check_unit_time(t)?;
        Ok(self.gamma_dot_unchecked(t))
    }

    /// `a + gamma(t)`, the noise level of the mirror training objective.
    pub fn training_sigma(&self, t: f64) -> Result<f64> {
        check_unit_time(t)?;
        Ok(self.training_sigma_unchecked(t))
    }

    #[inline]
    pub(crate) fn gamma_unchecked(&self, t: f64) -> f64 {
        let s = (PI * t.min(1.0 - t)).sin();
        self.c * s * s
    }

    #[inline]
    pub(crate) fn gamma_dot_unchecked(&self, t: f64) -> f64 {
        self.c * PI * (2.0 * PI * t).sin()
    }

    #[inline]
    pub(crate) fn training_sigma_unchecked(&self, t: f64) -> f64 {
        self.a + self.gamma_unchecked(t)
    }
}
