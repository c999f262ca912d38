//! Fully connected tanh network conditioned on `(t, a + gamma(t))`, with
//! hand-written reverse-mode gradients for the mirror-interpolant loss.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::error::{check_dim, check_unit_time, Error, Result};
use crate::schedule::NoiseSchedule;

pub const MODEL_FORMAT: &str = "sips-mlp-denoiser";
pub const MODEL_VERSION: u32 = 1;

/// Number of conditioning features appended to `x`: raw `t` and `a + gamma(t)`.
const TIME_FEATURES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `out x in`
    weight: Array2<f64>,
    bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    layers: Vec<Dense>,
    schedule: NoiseSchedule,
    seed: u64,
}

/// Parameter gradients, one weight matrix and bias vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Clean samples, noise draws and times for one evaluation of the training loss.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    /// `batch x d`
    pub clean: Array2<f64>,
    /// `batch x d`
    pub noise: Array2<f64>,
    pub t: Array1<f64>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

impl MlpDenoiser {
    /// Glorot-uniform weights, zero biases, deterministic for a given `seed`.
    pub fn new(dim: usize, hidden: &[usize], schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        if dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidParameter(
                "layer widths must be positive".into(),
            ));
        }
        schedule.validate()?;
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(dim + TIME_FEATURES);
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let mut rng = crate::rng::stream(seed, crate::rng::domain::INIT, 0);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                        rng.random_range(-limit..=limit)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layers,
            schedule,
            seed,
        })
    }

    /// A network with every weight and bias zero.
    pub fn zeros(dim: usize, hidden: &[usize], schedule: NoiseSchedule) -> Result<Self> {
        let mut net = Self::new(dim, hidden, schedule, 0)?;
        for l in &mut net.layers {
            l.weight.fill(0.0);
        }
        Ok(net)
    }

    pub fn dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weight.ncols()];
        sizes.extend(self.layers.iter().map(|l| l.weight.nrows()));
        sizes
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Parameter count of one layer: weights (row-major) followed by biases.
    pub fn layer_param_count(&self, layer: usize) -> usize {
        self.layers[layer].weight.len() + self.layers[layer].bias.len()
    }

    pub fn param(&self, layer: usize, index: usize) -> f64 {
        let l = &self.layers[layer];
        let nw = l.weight.len();
        if index < nw {
            l.weight.as_slice().expect("standard layout")[index]
        } else {
            l.bias[index - nw]
        }
    }

    pub fn set_param(&mut self, layer: usize, index: usize, value: f64) {
        let l = &mut self.layers[layer];
        let nw = l.weight.len();
        if index < nw {
            l.weight.as_slice_mut().expect("standard layout")[index] = value;
        } else {
            l.bias[index - nw] = value;
        }
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.layers[layer].weight
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Array1<f64> {
        &mut self.layers[layer].bias
    }

    fn features(&self, t: f64, x: &[f64], row: &mut [f64]) {
        let d = x.len();
        row[..d].copy_from_slice(x);
        row[d] = t;
        row[d + 1] = self.schedule.training_sigma_unchecked(t);
    }

    /// Evaluates the network at a single point.
    pub fn forward(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_unit_time(t)?;
        check_dim(self.dim(), x.len())?;
        let mut input = Array2::zeros((1, x.len() + TIME_FEATURES));
        self.features(t, x, input.as_slice_mut().expect("standard layout"));
        let out = self.forward_batch(input);
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Network output for a `batch x (d + 2)` feature matrix.
    fn forward_batch(&self, mut h: Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.weight.t()) + &l.bias;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    /// Mirror-interpolant loss `mean ||D(t, s + (a + gamma(t)) z) - z||^2` and its gradients.
    pub fn loss_and_grad(&self, batch: &TrainingBatch) -> Result<(f64, Gradients)> {
        let n = batch.len();
        let d = self.dim();
        if n == 0 {
            return Err(Error::EmptyInput("training batch"));
        }
        check_dim(d, batch.clean.ncols())?;
        check_dim(d, batch.noise.ncols())?;
        check_dim(n, batch.clean.nrows())?;
        check_dim(n, batch.noise.nrows())?;

        let mut input = Array2::zeros((n, d + TIME_FEATURES));
        for (b, mut row) in input.axis_iter_mut(Axis(0)).enumerate() {
            let t = check_unit_time(batch.t[b])?;
            let sigma = self.schedule.training_sigma_unchecked(t);
            for j in 0..d {
                row[j] = batch.clean[[b, j]] + sigma * batch.noise[[b, j]];
            }
            row[d] = t;
            row[d + 1] = sigma;
        }

        // activations[0] is the input; activations[i + 1] is the output of layer i
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input);
        for (i, l) in self.layers.iter().enumerate() {
            let mut h = activations[i].dot(&l.weight.t()) + &l.bias;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
            activations.push(h);
        }

        let residual = &activations[last + 1] - &batch.noise;
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }

        let mut delta = residual * (2.0 / n as f64);
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            weights.push(delta.t().dot(&activations[i]));
            biases.push(delta.sum_axis(Axis(0)));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weight);
                back.zip_mut_with(&activations[i], |g, a| *g *= 1.0 - a * a);
                delta = back;
            }
        }
        weights.reverse();
        biases.reverse();
        Ok((loss, Gradients { weights, biases }))
    }

    /// Loss only; skips the backward pass.
    pub fn loss(&self, batch: &TrainingBatch) -> Result<f64> {
        let n = batch.len();
        let d = self.dim();
        if n == 0 {
            return Err(Error::EmptyInput("training batch"));
        }
        check_dim(d, batch.clean.ncols())?;
        let mut input = Array2::zeros((n, d + TIME_FEATURES));
        for (b, mut row) in input.axis_iter_mut(Axis(0)).enumerate() {
            let t = check_unit_time(batch.t[b])?;
            let sigma = self.schedule.training_sigma_unchecked(t);
            for j in 0..d {
                row[j] = batch.clean[[b, j]] + sigma * batch.noise[[b, j]];
            }
            row[d] = t;
            row[d + 1] = sigma;
        }
        let out = self.forward_batch(input);
        let loss = (&out - &batch.noise).iter().map(|r| r * r).sum::<f64>() / n as f64;
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFiniteLoss)
        }
    }

    pub(crate) fn apply_update(&mut self, update: impl Fn(usize, usize, &mut f64)) {
        for (li, l) in self.layers.iter_mut().enumerate() {
            let nw = l.weight.len();
            for (k, w) in l.weight.iter_mut().enumerate() {
                update(li, k, w);
            }
            for (k, b) in l.bias.iter_mut().enumerate() {
                update(li, nw + k, b);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

impl Gradients {
    pub fn get(&self, layer: usize, index: usize) -> f64 {
        let nw = self.weights[layer].len();
        if index < nw {
            self.weights[layer].as_slice().expect("standard layout")[index]
        } else {
            self.biases[layer][index - nw]
        }
    }
}

impl Denoiser for MlpDenoiser {
    fn denoise(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(t, x)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    activation: String,
    /// Row-major `out x in` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    schedule: NoiseSchedule,
    seed: u64,
}

impl From<&MlpDenoiser> for ModelDocument {
    fn from(net: &MlpDenoiser) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            layer_sizes: net.layer_sizes(),
            activation: "tanh".into(),
            weights: net
                .layers
                .iter()
                .map(|l| l.weight.iter().copied().collect())
                .collect(),
            biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
            schedule: net.schedule,
            seed: net.seed,
        }
    }
}

impl TryFrom<ModelDocument> for MlpDenoiser {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let invalid = |m: String| Err(Error::InvalidParameter(format!("model document: {m}")));
        if doc.format != MODEL_FORMAT {
            return invalid(format!("unknown format {:?}", doc.format));
        }
        if doc.version != MODEL_VERSION {
            return invalid(format!("unsupported version {}", doc.version));
        }
        if doc.activation != "tanh" {
            return invalid(format!("unsupported activation {:?}", doc.activation));
        }
        let sizes = &doc.layer_sizes;
        if sizes.len() < 2 || sizes.contains(&0) {
            return invalid("need at least two positive layer sizes".into());
        }
        if sizes[0] != sizes[sizes.len() - 1] + TIME_FEATURES {
            return invalid(format!(
                "input width {} must be output width {} plus {TIME_FEATURES}",
                sizes[0],
                sizes[sizes.len() - 1]
            ));
        }
        let n_layers = sizes.len() - 1;
        if doc.weights.len() != n_layers || doc.biases.len() != n_layers {
            return invalid(format!("expected {n_layers} weight and bias arrays"));
        }
        doc.schedule.validate()?;
        let mut layers = Vec::with_capacity(n_layers);
        for (i, (w, b)) in doc.weights.into_iter().zip(doc.biases).enumerate() {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            if b.len() != fan_out {
                return invalid(format!("layer {i}: bias length {} != {fan_out}", b.len()));
            }
            let weight = Array2::from_shape_vec((fan_out, fan_in), w)
                .map_err(|e| Error::InvalidParameter(format!("model document: layer {i}: {e}")))?;
            layers.push(Dense {
                weight,
                bias: Array1::from(b),
            });
        }
        Ok(Self {
            layers,
            schedule: doc.schedule,
            seed: doc.seed,
        })
    }
}
