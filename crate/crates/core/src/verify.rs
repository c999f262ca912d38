//! Two-sample distances and the marginal-equivalence harness comparing the
//! oracle forward SDE against direct interpolant draws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::oracle::GaussianPairMixture;
use crate::rng::{self, domain};
use crate::sampler::{ForwardSde, TimeGrid};
use crate::schedule::NoiseSchedule;

/// Points per sample set used by the brute-force multivariate energy distance.
pub const ENERGY_MAX_POINTS: usize = 2_000;

const CHUNK: usize = 1_000;

/// Order-statistics estimate of the 1-Wasserstein distance between equal-size samples.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("sample set"));
    }
    check_dim(a.len(), b.len())?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// `sum_{i<j} |x_i - x_j|` for sorted `x`.
fn pairwise_abs_sum(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(k, x)| x * (2.0 * k as f64 - n + 1.0))
        .sum()
}

/// V-statistic energy distance `2E|A-B| - E|A-A'| - E|B-B'|` for scalar samples in `O(n log n)`.
pub fn energy_distance_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("sample set"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable_by(f64::total_cmp);
    sb.sort_unstable_by(f64::total_cmp);
    let mut all: Vec<f64> = sa.iter().chain(&sb).copied().collect();
    all.sort_unstable_by(f64::total_cmp);
    let (within_a, within_b) = (pairwise_abs_sum(&sa), pairwise_abs_sum(&sb));
    let cross = pairwise_abs_sum(&all) - within_a - within_b;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let e = 2.0 * cross / (n * m) - 2.0 * within_a / (n * n) - 2.0 * within_b / (m * m);
    Ok(e.max(0.0))
}

/// V-statistic energy distance between vector samples.
///
/// Scalar samples use the exact sorted formula; otherwise the first
/// [`ENERGY_MAX_POINTS`] of each set enter a brute-force double sum.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (Some(first_a), Some(first_b)) = (a.first(), b.first()) else {
        return Err(Error::EmptyInput("sample set"));
    };
    let d = first_a.len();
    check_dim(d, first_b.len())?;
    for v in a.iter().chain(b) {
        check_dim(d, v.len())?;
    }
    if d == 1 {
        let a: Vec<f64> = a.iter().map(|v| v[0]).collect();
        let b: Vec<f64> = b.iter().map(|v| v[0]).collect();
        return energy_distance_1d(&a, &b);
    }
    let a = &a[..a.len().min(ENERGY_MAX_POINTS)];
    let b = &b[..b.len().min(ENERGY_MAX_POINTS)];
    let dist = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    };
    let mean_pairs = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        x.iter()
            .map(|p| y.iter().map(|q| dist(p, q)).sum::<f64>())
            .sum::<f64>()
            / (x.len() * y.len()) as f64
    };
    let e = 2.0 * mean_pairs(a, b) - mean_pairs(a, a) - mean_pairs(b, b);
    Ok(e.max(0.0))
}

/// Per-dimension 1-Wasserstein distances, aggregated by maximum.
pub fn max_marginal_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = a.first().ok_or(Error::EmptyInput("sample set"))?.len();
    let mut worst: f64 = 0.0;
    for j in 0..d {
        let xa: Vec<f64> = a.iter().map(|v| v[j]).collect();
        let xb: Vec<f64> = b.iter().map(|v| v[j]).collect();
        worst = worst.max(wasserstein_1d(&xa, &xb)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub t_stop: f64,
    pub kappa: f64,
    pub n_samples: usize,
    pub steps: usize,
    pub wasserstein1: f64,
    pub energy_distance: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl MarginalReport {
    pub const CSV_HEADER: &'static str = "t_stop,kappa,n,steps,w1,energy,threshold,passed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.t_stop,
            self.kappa,
            self.n_samples,
            self.steps,
            self.wasserstein1,
            self.energy_distance,
            self.threshold,
            self.passed
        )
    }
}

/// `n` direct draws of `X_t`, independent of every other stream for distinct `set`.
pub fn direct_interpolant_samples(
    prior: &GaussianPairMixture,
    sched: &NoiseSchedule,
    t: f64,
    n: usize,
    seed: u64,
    set: u64,
) -> Result<Vec<Vec<f64>>> {
    let chunks: Vec<Vec<Vec<f64>>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, domain::DIRECT_INTERPOLANT, (set << 32) | c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .map(|_| prior.sample_interpolant(sched, t, &mut r))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Runs `n` forward-SDE trajectories from `Y` draws and records them at every `t_stop`.
///
/// Trajectory `i` uses the stream `(seed, SDE_TRAJECTORY, i)` regardless of
/// thread scheduling or `kappa`.
pub fn forward_sde_samples(
    prior: &GaussianPairMixture,
    sched: &NoiseSchedule,
    kappa: f64,
    t_stops: &[f64],
    n: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let grid = TimeGrid::uniform(steps)?;
    let mut stops = Vec::with_capacity(t_stops.len());
    for &t in t_stops {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain {
                name: "t_stop",
                value: t,
                domain: "(0, 1]",
            });
        }
        stops.push(grid.index_of(t)?);
    }
    let mut order: Vec<usize> = (0..stops.len()).collect();
    order.sort_by_key(|&i| stops[i]);
    let sorted: Vec<usize> = order.iter().map(|&i| stops[i]).collect();

    let sde = ForwardSde::new(prior, sched, grid, kappa)?;
    let paths: Vec<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, domain::SDE_TRAJECTORY, i as u64);
            let (_, y0) = prior.sample_pair(&mut r);
            sde.run(&y0, &sorted, &mut r)
        })
        .collect::<Result<_>>()?;

    let mut per_stop = vec![Vec::with_capacity(n); stops.len()];
    for path in paths {
        for (slot, state) in order.iter().zip(path) {
            per_stop[*slot].push(state);
        }
    }
    Ok(per_stop)
}

/// Marginal-equivalence checks for every `(t_stop, kappa)` pair, sharing
/// trajectories across stop times. Reports are ordered `t_stop`-major.
#[allow(clippy::too_many_arguments)]
pub fn marginal_check_grid(
    prior: &GaussianPairMixture,
    sched: &NoiseSchedule,
    kappas: &[f64],
    t_stops: &[f64],
    n_samples: usize,
    steps: usize,
    threshold: f64,
    seed: u64,
) -> Result<Vec<MarginalReport>> {
    if n_samples == 0 {
        return Err(Error::EmptyInput("sample budget"));
    }
    let direct: Vec<Vec<Vec<f64>>> = t_stops
        .iter()
        .enumerate()
        .map(|(i, &t)| direct_interpolant_samples(prior, sched, t, n_samples, seed, i as u64))
        .collect::<Result<_>>()?;
    let sde: Vec<Vec<Vec<Vec<f64>>>> = kappas
        .iter()
        .map(|&k| forward_sde_samples(prior, sched, k, t_stops, n_samples, steps, seed))
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(t_stops.len() * kappas.len());
    for (ti, &t_stop) in t_stops.iter().enumerate() {
        for (ki, &kappa) in kappas.iter().enumerate() {
            let a = &sde[ki][ti];
            let b = &direct[ti];
            let wasserstein1 = max_marginal_wasserstein(a, b)?;
            reports.push(MarginalReport {
                t_stop,
                kappa,
                n_samples,
                steps,
                wasserstein1,
                energy_distance: energy_distance(a, b)?,
                threshold,
                passed: wasserstein1 < threshold,
            });
        }
    }
    Ok(reports)
}

/// Compares `n_samples` forward-SDE states at `t_stop` against as many direct interpolant draws.
#[allow(clippy::too_many_arguments)]
pub fn marginal_check(
    prior: &GaussianPairMixture,
    sched: &NoiseSchedule,
    kappa: f64,
    t_stop: f64,
    n_samples: usize,
    steps: usize,
    threshold: f64,
    seed: u64,
) -> Result<MarginalReport> {
    let mut r = marginal_check_grid(
        prior,
        sched,
        &[kappa],
        &[t_stop],
        n_samples,
        steps,
        threshold,
        seed,
    )?;
    Ok(r.pop().expect("one report"))
}

/// Wasserstein distance between two independent direct-sample sets of size `n`:
/// the noise floor any sampler comparison at this budget sits on.
pub fn baseline_wasserstein(
    prior: &GaussianPairMixture,
    sched: &NoiseSchedule,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let a = direct_interpolant_samples(prior, sched, t, n, seed, u32::MAX as u64)?;
    let b = direct_interpolant_samples(prior, sched, t, n, seed, u32::MAX as u64 - 1)?;
    max_marginal_wasserstein(&a, &b)
}

/// Central-difference step used by [`score_check`].
pub const FD_STEP: f64 = 1e-5;
/// Score magnitudes below this are compared in absolute rather than relative terms.
pub const FD_RELATIVE_FLOOR: f64 = 1e-3;

/// Consistency of the oracle denoiser, score, and log density at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreCheck {
    /// `|eta + gamma * score|`.
    pub relation_residual: f64,
    /// Worst per-coordinate error of the score against central differences of the log density.
    pub fd_relative_error: f64,
}

pub fn score_check(
    prior: &GaussianPairMixture,
    sched: &NoiseSchedule,
    t: f64,
    x: &[f64],
) -> Result<ScoreCheck> {
    let g = sched.gamma(t)?;
    let eta = prior.eta(sched, t, x)?;
    let score = prior.score(sched, t, x)?;
    let relation_residual = eta
        .iter()
        .zip(&score)
        .map(|(e, s)| (e + g * s).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut fd_relative_error = 0.0f64;
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + FD_STEP;
        let up = prior.log_density(sched, t, &probe)?;
        probe[j] = x[j] - FD_STEP;
        let down = prior.log_density(sched, t, &probe)?;
        probe[j] = x[j];
        let fd = (up - down) / (2.0 * FD_STEP);
        let err = (fd - score[j]).abs() / score[j].abs().max(FD_RELATIVE_FLOOR);
        fd_relative_error = fd_relative_error.max(err);
    }
    Ok(ScoreCheck {
        relation_residual,
        fd_relative_error,
    })
}
