//! Exact Gaussian-mixture prior over paired endpoints `(S, Y)`.
//!
//! Every component is a product of independent per-dimension bivariate
//! Gaussians, so the time-`t` interpolant `X_t = tS + (1-t)Y + gamma(t)Z` is
//! again a Gaussian mixture and every conditional expectation has a closed
//! form. These fields are the ground truth for the samplers and for trained
//! denoisers.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_unit_time, Error, Result};
use crate::schedule::NoiseSchedule;

const WEIGHT_TOLERANCE: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPairComponent {
    pub weight: f64,
    pub mean_s: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub var_ss: Vec<f64>,
    pub var_yy: Vec<f64>,
    pub cov_sy: Vec<f64>,
}

impl GaussianPairComponent {
    /// Same bivariate law `(var_ss, var_yy, cov_sy)` in every dimension.
    pub fn isotropic(
        weight: f64,
        mean_s: Vec<f64>,
        mean_y: Vec<f64>,
        var_ss: f64,
        var_yy: f64,
        cov_sy: f64,
    ) -> Self {
        let d = mean_s.len();
        Self {
            weight,
            mean_s,
            mean_y,
            var_ss: vec![var_ss; d],
            var_yy: vec![var_yy; d],
            cov_sy: vec![cov_sy; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean_s.len()
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(format!("component {index}: {msg}")));
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return bad(format!("weight {} not in (0, 1]", self.weight));
        }
        let d = self.mean_s.len();
        if d == 0 {
            return bad("zero-dimensional component".into());
        }
        for (name, len) in [
            ("mean_y", self.mean_y.len()),
            ("var_ss", self.var_ss.len()),
            ("var_yy", self.var_yy.len()),
            ("cov_sy", self.cov_sy.len()),
        ] {
            if len != d {
                return bad(format!("{name} has length {len}, expected {d}"));
            }
        }
        for j in 0..d {
            let (vs, vy, c) = (self.var_ss[j], self.var_yy[j], self.cov_sy[j]);
            if !(self.mean_s[j].is_finite() && self.mean_y[j].is_finite() && c.is_finite()) {
                return bad(format!("non-finite parameter in dimension {j}"));
            }
            if !(vs > 0.0 && vy > 0.0 && vs.is_finite() && vy.is_finite()) {
                return bad(format!("variances must be positive in dimension {j}"));
            }
            if c * c > vs * vy * (1.0 + 1e-12) {
                return bad(format!(
                    "covariance {c} violates cov^2 <= var_ss * var_yy in dimension {j}"
                ));
            }
        }
        Ok(())
    }
}

/// Mean and variance of one component of the `X_t` mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMarginal {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct GaussianPairMixture {
    components: Vec<GaussianPairComponent>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureSpec {
    components: Vec<GaussianPairComponent>,
}

impl TryFrom<MixtureSpec> for GaussianPairMixture {
    type Error = Error;

    fn try_from(spec: MixtureSpec) -> Result<Self> {
        Self::new(spec.components)
    }
}

impl From<GaussianPairMixture> for MixtureSpec {
    fn from(mix: GaussianPairMixture) -> Self {
        Self {
            components: mix.components,
        }
    }
}

/// Per-component coefficients of the `X_t` mixture at one fixed time and noise level.
#[derive(Debug, Clone)]
pub(crate) struct SliceComponent {
    log_norm: f64,
    mean: Vec<f64>,
    inv_var: Vec<f64>,
    /// `Cov(S - Y, X_t) / Var(X_t)` per dimension.
    velocity_gain: Vec<f64>,
    mean_diff: Vec<f64>,
}

/// The `X_t` mixture frozen at one `(t, noise level)` pair.
#[derive(Debug, Clone)]
pub(crate) struct MarginalSlice {
    components: Vec<SliceComponent>,
    noise: f64,
}

impl MarginalSlice {
    pub(crate) fn new(mix: &GaussianPairMixture, t: f64, noise: f64) -> Self {
        let u = 1.0 - t;
        let components = mix
            .components
            .iter()
            .map(|c| {
                let d = c.dim();
                let mut mean = Vec::with_capacity(d);
                let mut inv_var = Vec::with_capacity(d);
                let mut velocity_gain = Vec::with_capacity(d);
                let mut mean_diff = Vec::with_capacity(d);
                let mut log_norm = c.weight.ln();
                for j in 0..d {
                    let s = t * t * c.var_ss[j]
                        + 2.0 * t * u * c.cov_sy[j]
                        + u * u * c.var_yy[j]
                        + noise * noise;
                    let cross = t * c.var_ss[j] + (1.0 - 2.0 * t) * c.cov_sy[j] - u * c.var_yy[j];
                    mean.push(t * c.mean_s[j] + u * c.mean_y[j]);
                    inv_var.push(1.0 / s);
                    velocity_gain.push(cross / s);
                    mean_diff.push(c.mean_s[j] - c.mean_y[j]);
                    log_norm -= 0.5 * (LN_2PI + s.ln());
                }
                SliceComponent {
                    log_norm,
                    mean,
                    inv_var,
                    velocity_gain,
                    mean_diff,
                }
            })
            .collect();
        Self { components, noise }
    }

    /// Writes unnormalized log responsibilities into `log_r` and returns their log-sum-exp.
    fn log_responsibilities(&self, x: &[f64], log_r: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (lr, comp) in log_r.iter_mut().zip(&self.components) {
            let mut q = 0.0;
            for ((xj, m), iv) in x.iter().zip(&comp.mean).zip(&comp.inv_var) {
                let r = xj - m;
                q += r * r * iv;
            }
            *lr = comp.log_norm - 0.5 * q;
            max = max.max(*lr);
        }
        if self.components.len() == 1 {
            return max;
        }
        let sum: f64 = log_r.iter().map(|lr| (lr - max).exp()).sum();
        max + sum.ln()
    }

    /// Normalized posterior responsibilities of each component given `x`.
    fn responsibilities(&self, x: &[f64], r: &mut [f64]) {
        let lse = self.log_responsibilities(x, r);
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
    }

    pub(crate) fn log_density(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        self.log_responsibilities(x, scratch)
    }

    /// Conditional velocity and conditional noise at `x`, written into the output buffers.
    ///
    /// `scratch` must hold one slot per component.
    pub(crate) fn fields_into(
        &self,
        x: &[f64],
        velocity: &mut [f64],
        eta: &mut [f64],
        scratch: &mut [f64],
    ) {
        velocity.fill(0.0);
        eta.fill(0.0);
        self.responsibilities(x, scratch);
        for (r, comp) in scratch.iter().zip(&self.components) {
            for j in 0..x.len() {
                let dev = x[j] - comp.mean[j];
                velocity[j] += r * (comp.mean_diff[j] + comp.velocity_gain[j] * dev);
                eta[j] += r * self.noise * dev * comp.inv_var[j];
            }
        }
    }

    pub(crate) fn eta_into(&self, x: &[f64], eta: &mut [f64], scratch: &mut [f64]) {
        eta.fill(0.0);
        if self.noise == 0.0 {
            return;
        }
        self.responsibilities(x, scratch);
        for (r, comp) in scratch.iter().zip(&self.components) {
            for j in 0..x.len() {
                eta[j] += r * self.noise * (x[j] - comp.mean[j]) * comp.inv_var[j];
            }
        }
    }

    fn score_into(&self, x: &[f64], score: &mut [f64], scratch: &mut [f64]) {
        score.fill(0.0);
        self.responsibilities(x, scratch);
        for (r, comp) in scratch.iter().zip(&self.components) {
            for j in 0..x.len() {
                score[j] -= r * (x[j] - comp.mean[j]) * comp.inv_var[j];
            }
        }
    }
}

impl GaussianPairMixture {
    pub fn new(components: Vec<GaussianPairComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidParameter("mixture has no components".into()))?;
        let dim = first.dim();
        for (k, c) in components.iter().enumerate() {
            c.validate(k)?;
            if c.dim() != dim {
                return Err(Error::InvalidParameter(format!(
                    "component {k} has dimension {}, expected {dim}",
                    c.dim()
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "component weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { components, dim })
    }

    /// One bivariate Gaussian per dimension, identical across dimensions.
    pub fn single(dim: usize, var_ss: f64, var_yy: f64, cov_sy: f64) -> Result<Self> {
        Self::new(vec![GaussianPairComponent::isotropic(
            1.0,
            vec![0.0; dim],
            vec![0.0; dim],
            var_ss,
            var_yy,
            cov_sy,
        )])
    }

    pub fn components(&self) -> &[GaussianPairComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn slice(&self, sched: &NoiseSchedule, t: f64) -> MarginalSlice {
        MarginalSlice::new(self, t, sched.gamma_unchecked(t))
    }

    fn checked_slice(&self, sched: &NoiseSchedule, t: f64, x: &[f64]) -> Result<MarginalSlice> {
        check_unit_time(t)?;
        check_dim(self.dim, x.len())?;
        Ok(self.slice(sched, t))
    }

    /// Mean and variance of each component of `X_t`.
    pub fn marginal_params(&self, sched: &NoiseSchedule, t: f64) -> Result<Vec<ComponentMarginal>> {
        check_unit_time(t)?;
        let g = sched.gamma_unchecked(t);
        let u = 1.0 - t;
        Ok(self
            .components
            .iter()
            .map(|c| ComponentMarginal {
                mean: (0..self.dim)
                    .map(|j| t * c.mean_s[j] + u * c.mean_y[j])
                    .collect(),
                var: (0..self.dim)
                    .map(|j| {
                        t * t * c.var_ss[j]
                            + 2.0 * t * u * c.cov_sy[j]
                            + u * u * c.var_yy[j]
                            + g * g
                    })
                    .collect(),
            })
            .collect())
    }

    /// Conditional velocity `E[S - Y | X_t = x]`.
    pub fn velocity(&self, sched: &NoiseSchedule, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let slice = self.checked_slice(sched, t, x)?;
        let mut v = vec![0.0; self.dim];
        let mut eta = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.components.len()];
        slice.fields_into(x, &mut v, &mut eta, &mut scratch);
        Ok(v)
    }

    /// Conditional injected noise `E[Z | X_t = x]`; the zero vector wherever `gamma(t) = 0`.
    pub fn eta(&self, sched: &NoiseSchedule, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let slice = self.checked_slice(sched, t, x)?;
        let mut eta = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.components.len()];
        slice.eta_into(x, &mut eta, &mut scratch);
        Ok(eta)
    }

    /// `grad_x log rho_t(x)`.
    pub fn score(&self, sched: &NoiseSchedule, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let slice = self.checked_slice(sched, t, x)?;
        let mut score = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.components.len()];
        slice.score_into(x, &mut score, &mut scratch);
        Ok(score)
    }

    pub fn log_density(&self, sched: &NoiseSchedule, t: f64, x: &[f64]) -> Result<f64> {
        let slice = self.checked_slice(sched, t, x)?;
        let mut scratch = vec![0.0; self.components.len()];
        Ok(slice.log_density(x, &mut scratch))
    }

    /// `E[Z | S + sigma Z = x]`: the conditional noise of the mirror
    /// interpolant used for denoiser training. Only the `S` marginal enters.
    pub fn mirror_eta(&self, sigma: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Domain {
                name: "sigma",
                value: sigma,
                domain: "[0, inf)",
            });
        }
        let slice = MarginalSlice::new(self, 1.0, sigma);
        let mut eta = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.components.len()];
        slice.eta_into(x, &mut eta, &mut scratch);
        Ok(eta)
    }

    /// Posterior mean `E[S | Y = y]`.
    pub fn mmse_predict(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, y.len())?;
        let slice = MarginalSlice::new(self, 0.0, 0.0);
        let mut r = vec![0.0; self.components.len()];
        slice.responsibilities(y, &mut r);
        let mut out = vec![0.0; self.dim];
        for (w, c) in r.iter().zip(&self.components) {
            for j in 0..self.dim {
                out[j] += w * (c.mean_s[j] + c.cov_sy[j] / c.var_yy[j] * (y[j] - c.mean_y[j]));
            }
        }
        Ok(out)
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> &GaussianPairComponent {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                return c;
            }
        }
        self.components.last().expect("mixture is non-empty")
    }

    /// Draws a correlated pair `(s, y)`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let c = self.pick_component(rng);
        let mut s = Vec::with_capacity(self.dim);
        let mut y = Vec::with_capacity(self.dim);
        for j in 0..self.dim {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let sd_s = c.var_ss[j].sqrt();
            let loading = c.cov_sy[j] / sd_s;
            let resid = (c.var_yy[j] - loading * loading).max(0.0).sqrt();
            s.push(c.mean_s[j] + sd_s * z1);
            y.push(c.mean_y[j] + loading * z1 + resid * z2);
        }
        (s, y)
    }

    /// Draws from the `S` marginal only; consumes no randomness tied to `Y`.
    pub fn sample_clean<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let c = self.pick_component(rng);
        (0..self.dim)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                c.mean_s[j] + c.var_ss[j].sqrt() * z
            })
            .collect()
    }

    /// Direct draw of the interpolant `tS + (1-t)Y + gamma(t)Z`.
    pub fn sample_interpolant<R: Rng + ?Sized>(
        &self,
        sched: &NoiseSchedule,
        t: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        check_unit_time(t)?;
        let g = sched.gamma_unchecked(t);
        let (s, y) = self.sample_pair(rng);
        Ok(s.iter()
            .zip(&y)
            .map(|(s, y)| {
                let z: f64 = rng.sample(StandardNormal);
                t * s + (1.0 - t) * y + g * z
            })
            .collect())
    }
}
