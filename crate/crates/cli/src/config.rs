//! Experiment configuration: one JSON document per run, with defaults for
//! every section except the prior.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sips_core::{
    DenoiserKind, GaussianPairMixture, MlpDenoiser, NoiseSchedule, PredictorKind, SamplerConfig,
    TrainConfig,
};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schedule: NoiseSchedule,
    #[serde(default)]
    pub sampler: SamplerSection,
    /// Optional only for `enhance` with a denoiser that needs no prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<GaussianPairMixture>,
    #[serde(default)]
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub denoiser: DenoiserSpec,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub gate: GateSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("sips-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub kappa: f64,
    pub steps: usize,
    pub post_process: bool,
    pub seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            kappa: 0.0,
            steps: 15,
            post_process: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    Identity,
    OracleClean,
    /// Posterior mean of `S` given `Y` under the configured prior.
    #[default]
    Mmse,
    Perturbed {
        inner: Box<PredictorSpec>,
        gain: f64,
        #[serde(default)]
        bias: Vec<f64>,
    },
}

impl PredictorSpec {
    pub fn build(&self, prior: &GaussianPairMixture) -> PredictorKind {
        match self {
            Self::Identity => PredictorKind::Identity,
            Self::OracleClean => PredictorKind::OracleClean,
            Self::Mmse => PredictorKind::MmsePosteriorMean(prior.clone()),
            Self::Perturbed { inner, gain, bias } => {
                PredictorKind::perturbed(inner.build(prior), *gain, bias.clone())
            }
        }
    }

    fn check(&self, dim: usize) -> Result<(), String> {
        match self {
            Self::Perturbed { inner, gain, bias } => {
                if !gain.is_finite() {
                    return Err(format!("predictor gain must be finite, got {gain}"));
                }
                if !bias.is_empty() && bias.len() != dim {
                    return Err(format!(
                        "predictor bias has {} entries but the prior has dimension {dim}",
                        bias.len()
                    ));
                }
                if bias.iter().any(|b| !b.is_finite()) {
                    return Err("predictor bias must be finite".into());
                }
                inner.check(dim)
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    Zero,
    /// Exact conditional noise under the configured prior and schedule.
    #[default]
    OracleEta,
    /// A model written by `sips train`. Relative paths resolve against the config file.
    Trained {
        model: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub n_samples: usize,
    pub t_stops: Vec<f64>,
    pub kappas: Vec<f64>,
    pub steps: usize,
    pub threshold: f64,
    pub score_points: usize,
    pub relation_tolerance: f64,
    pub fd_tolerance: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            t_stops: vec![0.25, 0.5, 0.75, 1.0],
            kappas: vec![0.0, 0.4, 1.0],
            steps: 2000,
            threshold: 0.02,
            score_points: 1000,
            relation_tolerance: 1e-10,
            fd_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    /// Size of the held-out set used to report the trained loss.
    pub held_out: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            held_out: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub n: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { n: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub kappas: Vec<f64>,
    pub steps: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            kappas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            steps: vec![1, 2, 4, 8, 15, 30, 60],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    pub gain_floor: f64,
    pub noise_percentile: f64,
}

impl Default for GateSection {
    fn default() -> Self {
        Self {
            gain_floor: 0.1,
            noise_percentile: 50.0,
        }
    }
}

/// Flag overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub kappa: Option<f64>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads, parses, resolves relative paths, and validates a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DenoiserSpec::Trained { model } = &mut cfg.denoiser {
            if model.is_relative() {
                *model = base.join(&*model);
            }
        }
        cfg.validate().map_err(|(key, message)| {
            let (line, column) = locate(&text, key);
            CliError::Config {
                path: path.to_path_buf(),
                line,
                column,
                message,
            }
        })?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.kappa {
            self.sampler.kappa = k;
        }
        if let Some(m) = o.steps {
            self.sampler.steps = m;
        }
        if let Some(s) = o.seed {
            self.sampler.seed = s;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
    }

    /// Checks every numeric constraint. Errors carry the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        self.schedule
            .validate()
            .map_err(|e| ("schedule", e.to_string()))?;
        self.sampler_config(self.sampler.kappa, self.sampler.steps)
            .map_err(|e| ("sampler", e.to_string()))?;
        if let Some(prior) = &self.prior {
            self.predictor
                .check(prior.dim())
                .map_err(|m| ("predictor", m))?;
        }
        let v = &self.verify;
        if v.n_samples == 0 || v.score_points == 0 {
            return Err(("verify", "sample counts must be positive".into()));
        }
        if v.steps == 0 {
            return Err(("verify", "steps must be at least 1".into()));
        }
        for &t in &v.t_stops {
            if !(t > 0.0 && t <= 1.0) {
                return Err(("t_stops", format!("t_stop {t} is outside (0, 1]")));
            }
            let scaled = t * v.steps as f64;
            if (scaled - scaled.round()).abs() > 1e-9 {
                return Err((
                    "t_stops",
                    format!("t_stop {t} is not a point of the {}-step grid", v.steps),
                ));
            }
        }
        for &k in &v.kappas {
            if !(k.is_finite() && k >= 0.0) {
                return Err((
                    "kappas",
                    format!("kappa {k} must be finite and non-negative"),
                ));
            }
        }
        let positive = |x: f64| x > 0.0;
        if !positive(v.threshold) || !positive(v.relation_tolerance) || !positive(v.fd_tolerance) {
            return Err((
                "verify",
                "thresholds and tolerances must be positive".into(),
            ));
        }
        if self.network.hidden.contains(&0) {
            return Err(("hidden", "hidden layer widths must be positive".into()));
        }
        if self.network.held_out == 0 {
            return Err(("held_out", "held-out set must be non-empty".into()));
        }
        self.train
            .validate()
            .map_err(|e| ("train", e.to_string()))?;
        if self.sample.n == 0 {
            return Err(("sample", "n must be positive".into()));
        }
        for &k in &self.sweep.kappas {
            if !(k.is_finite() && k >= 0.0) {
                return Err((
                    "sweep",
                    format!("kappa {k} must be finite and non-negative"),
                ));
            }
        }
        if self.sweep.steps.contains(&0) {
            return Err(("sweep", "step counts must be at least 1".into()));
        }
        let g = &self.gate;
        if !(0.0..=1.0).contains(&g.gain_floor) || !(0.0..=100.0).contains(&g.noise_percentile) {
            return Err((
                "gate",
                "gain_floor must lie in [0, 1] and noise_percentile in [0, 100]".into(),
            ));
        }
        Ok(())
    }

    pub fn sampler_config(&self, kappa: f64, steps: usize) -> sips_core::Result<SamplerConfig> {
        let mut cfg = SamplerConfig::uniform(kappa, steps, self.sampler.seed)?;
        cfg.post_process = self.sampler.post_process;
        Ok(cfg)
    }

    pub fn require_prior(&self, path: &Path) -> Result<&GaussianPairMixture, CliError> {
        self.prior.as_ref().ok_or_else(|| CliError::Config {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            message: "this command needs a `prior` section".into(),
        })
    }

    /// Builds the configured denoiser, loading the model file if there is one.
    pub fn denoiser(&self, path: &Path) -> Result<DenoiserKind, CliError> {
        let config_error = |message: String| CliError::Config {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            message,
        };
        match &self.denoiser {
            DenoiserSpec::Zero => Ok(DenoiserKind::Zero),
            DenoiserSpec::OracleEta => Ok(DenoiserKind::OracleEta {
                prior: self.require_prior(path)?.clone(),
                schedule: self.schedule,
            }),
            DenoiserSpec::Trained { model } => {
                if !model.is_file() {
                    return Err(config_error(format!(
                        "denoiser model {} does not exist",
                        model.display()
                    )));
                }
                let net = MlpDenoiser::load(model)
                    .map_err(|e| config_error(format!("{}: {e}", model.display())))?;
                if net.schedule() != self.schedule {
                    return Err(config_error(format!(
                        "denoiser model {} was trained with a different schedule",
                        model.display()
                    )));
                }
                Ok(DenoiserKind::Trained(net))
            }
        }
    }

    /// The effective configuration, with paths made absolute so the file can be
    /// reloaded from anywhere.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if let DenoiserSpec::Trained { model } = &mut out.denoiser {
            *model = absolute(model);
        }
        out.output_dir = absolute(&out.output_dir);
        out
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// 1-based line and column of the first occurrence of `"key"` in `text`, or `(0, 0)`.
fn locate(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    for (i, line) in text.lines().enumerate() {
        if let Some(col) = line.find(&needle) {
            return (i + 1, col + 1);
        }
    }
    (0, 0)
}
