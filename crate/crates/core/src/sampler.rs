//! Euler–Maruyama integration of the SIPS inference dynamics and of the
//! oracle forward SDE.
//!
//! Both use the left-endpoint discretization
//! `x += (drift + (gamma_dot(t_i) - kappa) * z_hat) * dt + sqrt(2 dt kappa gamma(t_i)) * xi`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{check_dim, Error, Result};
use crate::oracle::{GaussianPairMixture, MarginalSlice};
use crate::predictor::Predictor;
use crate::schedule::NoiseSchedule;

const GRID_MATCH_TOLERANCE: f64 = 1e-12;

/// Strictly increasing time points from 0 to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidParameter(
                "time grid needs at least two points".into(),
            ));
        }
        if points[0] != 0.0 || points[points.len() - 1] != 1.0 {
            return Err(Error::InvalidParameter(
                "time grid must start at 0 and end at 1".into(),
            ));
        }
        if points.windows(2).any(|w| w[1].is_nan() || w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// `{i / M : i = 0..=M}`.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter(
                "step count must be positive".into(),
            ));
        }
        let m = steps as f64;
        Ok(Self {
            points: (0..=steps).map(|i| i as f64 / m).collect(),
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// Index of the grid point equal to `t` (within 1e-12).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.points
            .iter()
            .position(|p| (p - t).abs() <= GRID_MATCH_TOLERANCE)
            .ok_or_else(|| Error::InvalidParameter(format!("t = {t} is not a grid point")))
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(grid: TimeGrid) -> Self {
        grid.points
    }
}

pub fn uniform_grid(steps: usize) -> Result<TimeGrid> {
    TimeGrid::uniform(steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub kappa: f64,
    pub grid: TimeGrid,
    pub post_process: bool,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn uniform(kappa: f64, steps: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            kappa,
            grid: TimeGrid::uniform(steps)?,
            post_process: false,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::Domain {
                name: "kappa",
                value: self.kappa,
                domain: "[0, inf)",
            });
        }
        Ok(())
    }
}

fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

/// Runs the SIPS sampler from the observation `y`.
///
/// The predictor is evaluated once and its residual `P(y) - y` is the
/// constant drift. The state is carried as
/// `x_i = t_i P(y) + (1 - t_i) y + r_i`, where `r_i` accumulates the denoiser
/// and diffusion increments; this is the same Euler–Maruyama recursion with
/// the constant-drift part summed in closed form, so `x_M = P(y)` exactly
/// whenever the increments vanish.
pub fn sips_sample<P, D, R>(
    y: &[f64],
    predictor: &P,
    denoiser: &D,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    P: Predictor + ?Sized,
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let d = y.len();
    check_finite(y, 0)?;
    let target = predictor.predict(y)?;
    check_dim(d, target.len())?;
    check_finite(&target, 0)?;

    let points = cfg.grid.points();
    let mut x = y.to_vec();
    let mut offset = vec![0.0; d];
    for step in 0..cfg.steps() {
        let t = points[step];
        let dt = points[step + 1] - t;
        let z_hat = denoiser.denoise(t, &x)?;
        check_dim(d, z_hat.len())?;
        let drift_gain = (sched.gamma_dot_unchecked(t) - cfg.kappa) * dt;
        let diffusion = (2.0 * dt * cfg.kappa * sched.gamma_unchecked(t)).sqrt();
        if diffusion > 0.0 {
            for (r, z) in offset.iter_mut().zip(&z_hat) {
                let xi: f64 = rng.sample(StandardNormal);
                *r += drift_gain * z + diffusion * xi;
            }
        } else {
            for (r, z) in offset.iter_mut().zip(&z_hat) {
                *r += drift_gain * z;
            }
        }
        let t_next = points[step + 1];
        for j in 0..d {
            x[j] = t_next * target[j] + (1.0 - t_next) * y[j] + offset[j];
        }
        check_finite(&x, step)?;
    }
    if cfg.post_process {
        let out = predictor.predict(&x)?;
        check_dim(d, out.len())?;
        check_finite(&out, cfg.steps())?;
        return Ok(out);
    }
    Ok(x)
}

/// The oracle forward SDE
/// `dX = [v(t, X) + (gamma_dot(t) - kappa) eta(t, X)] dt + sqrt(2 kappa gamma(t)) dW`
/// with every field precomputed on the grid.
#[derive(Debug, Clone)]
pub struct ForwardSde {
    slices: Vec<MarginalSlice>,
    gamma: Vec<f64>,
    gamma_dot: Vec<f64>,
    grid: TimeGrid,
    kappa: f64,
    dim: usize,
    components: usize,
}

impl ForwardSde {
    pub fn new(
        prior: &GaussianPairMixture,
        sched: &NoiseSchedule,
        grid: TimeGrid,
        kappa: f64,
    ) -> Result<Self> {
        sched.validate()?;
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::Domain {
                name: "kappa",
                value: kappa,
                domain: "[0, inf)",
            });
        }
        let left = &grid.points()[..grid.steps()];
        Ok(Self {
            slices: left.iter().map(|&t| prior.slice(sched, t)).collect(),
            gamma: left.iter().map(|&t| sched.gamma_unchecked(t)).collect(),
            gamma_dot: left.iter().map(|&t| sched.gamma_dot_unchecked(t)).collect(),
            grid,
            kappa,
            dim: prior.dim(),
            components: prior.components().len(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Integrates from `x0` at `t = 0` and records the state at each grid
    /// index in `stops` (ascending). The integration ends at the last stop.
    pub fn run<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        stops: &[usize],
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        check_dim(self.dim, x0.len())?;
        if stops.windows(2).any(|w| w[1] < w[0]) || stops.iter().any(|&s| s > self.grid.steps()) {
            return Err(Error::InvalidParameter(
                "stop indices must be ascending grid indices".into(),
            ));
        }
        let points = self.grid.points();
        let end = stops.last().copied().unwrap_or(0);
        let mut x = x0.to_vec();
        let mut velocity = vec![0.0; self.dim];
        let mut eta = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.components];
        let mut out = Vec::with_capacity(stops.len());
        let mut next_stop = 0;
        for step in 0..=end {
            while next_stop < stops.len() && stops[next_stop] == step {
                out.push(x.clone());
                next_stop += 1;
            }
            if step == end {
                break;
            }
            let dt = points[step + 1] - points[step];
            self.slices[step].fields_into(&x, &mut velocity, &mut eta, &mut scratch);
            let gain = self.gamma_dot[step] - self.kappa;
            let diffusion = (2.0 * self.kappa * self.gamma[step] * dt).sqrt();
            for j in 0..self.dim {
                x[j] += (velocity[j] + gain * eta[j]) * dt;
                if diffusion > 0.0 {
                    let xi: f64 = rng.sample(StandardNormal);
                    x[j] += diffusion * xi;
                }
            }
            check_finite(&x, step)?;
        }
        Ok(out)
    }
}

/// Integrates the oracle forward SDE from `y0` up to the grid point `t_stop`.
pub fn forward_sde_sample<R: Rng + ?Sized>(
    prior: &GaussianPairMixture,
    y0: &[f64],
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
    t_stop: f64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(t_stop > 0.0 && t_stop <= 1.0) {
        return Err(Error::Domain {
            name: "t_stop",
            value: t_stop,
            domain: "(0, 1]",
        });
    }
    let stop = cfg.grid.index_of(t_stop)?;
    let sde = ForwardSde::new(prior, sched, cfg.grid.clone(), cfg.kappa)?;
    Ok(sde
        .run(y0, &[stop], rng)?
        .pop()
        .expect("one stop requested"))
}
