//! Adam training of [`MlpDenoiser`] on the mirror-interpolant objective.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpDenoiser, TrainingBatch};
use crate::error::{check_dim, Error, Result};
use crate::oracle::GaussianPairMixture;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub first_moment_decay: f64,
    pub second_moment_decay: f64,
    pub epsilon_stabilizer: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            iterations: 20_000,
            seed: 0,
            first_moment_decay: 0.9,
            second_moment_decay: 0.999,
            epsilon_stabilizer: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidParameter(format!("train config: {m}")));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("learning_rate must be finite and nonnegative");
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return fail("batch_size and iterations must be positive");
        }
        for (name, beta) in [
            ("first_moment_decay", self.first_moment_decay),
            ("second_moment_decay", self.second_moment_decay),
        ] {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "train config: {name} must lie in (0, 1)"
                )));
            }
        }
        if self.epsilon_stabilizer.is_nan() || self.epsilon_stabilizer <= 0.0 {
            return fail("epsilon_stabilizer must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: MlpDenoiser,
    /// Batch loss before each parameter update.
    pub loss_trace: Vec<f64>,
}

/// Draws `(s, z, t)` with `s` from the clean marginal only, `z ~ N(0, I)` and `t ~ U[0, 1)`.
pub fn sample_batch<R: Rng + ?Sized>(
    prior: &GaussianPairMixture,
    batch_size: usize,
    rng: &mut R,
) -> TrainingBatch {
    let d = prior.dim();
    let mut clean = Array2::zeros((batch_size, d));
    let mut noise = Array2::zeros((batch_size, d));
    let mut t = Array1::zeros(batch_size);
    for b in 0..batch_size {
        t[b] = rng.random::<f64>();
        let s = prior.sample_clean(rng);
        for j in 0..d {
            clean[[b, j]] = s[j];
            noise[[b, j]] = rng.sample(StandardNormal);
        }
    }
    TrainingBatch { clean, noise, t }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(net: &MlpDenoiser) -> Self {
        let sizes: Vec<usize> = (0..net.num_layers())
            .map(|l| net.layer_param_count(l))
            .collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, net: &mut MlpDenoiser, grads: &Gradients, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.first_moment_decay, cfg.second_moment_decay);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = cfg.learning_rate;
        let eps = cfg.epsilon_stabilizer;
        for l in 0..net.num_layers() {
            for k in 0..self.m[l].len() {
                let g = grads.get(l, k);
                self.m[l][k] = b1 * self.m[l][k] + (1.0 - b1) * g;
                self.v[l][k] = b2 * self.v[l][k] + (1.0 - b2) * g * g;
            }
        }
        let (m, v) = (&self.m, &self.v);
        net.apply_update(|l, k, p| {
            let m_hat = m[l][k] / c1;
            let v_hat = v[l][k] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
}

/// Trains `net` in place of a copy and returns it with the per-iteration loss trace.
///
/// Batches come from the stream `(cfg.seed, TRAINING, iteration)`, so only
/// the `S` marginal of `prior` influences the result.
pub fn train(
    net: &MlpDenoiser,
    prior: &GaussianPairMixture,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dim(net.dim(), prior.dim())?;
    let mut network = net.clone();
    network.set_seed(cfg.seed);
    let mut adam = Adam::new(&network);
    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let mut rng = crate::rng::stream(cfg.seed, crate::rng::domain::TRAINING, iteration as u64);
        let batch = sample_batch(prior, cfg.batch_size, &mut rng);
        let (loss, grads) = match network.loss_and_grad(&batch) {
            Ok(v) => v,
            Err(Error::NonFiniteLoss) => return Err(Error::TrainingDiverged { iteration }),
            Err(e) => return Err(e),
        };
        loss_trace.push(loss);
        adam.update(&mut network, &grads, cfg);
    }
    Ok(TrainOutcome {
        network,
        loss_trace,
    })
}
