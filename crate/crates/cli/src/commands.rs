//! Subcommand implementations. Each returns the exit code on success and
//! writes its result files plus `resolved_config.json` into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use sips_core::denoiser::{self, Coordinatewise};
use sips_core::rng::{self, domain};
use sips_core::signal::{self, SpectralGatePredictor};
use sips_core::verify::{self, MarginalReport, ScoreCheck};
use sips_core::{sips_sample, DenoiserKind, GaussianPairMixture, MlpDenoiser, PredictorKind};

use crate::config::ExperimentConfig;
use crate::error::{exit, CliError, Context};

pub const SAMPLE_SUMMARY_HEADER: &str = "kappa,steps,n,mse,w1,energy";

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, &text)
}

fn write_resolved(dir: &Path, cfg: &ExperimentConfig) -> Result<(), CliError> {
    write_json(&dir.join("resolved_config.json"), &cfg.resolved())
}

#[derive(Serialize)]
struct MarginalSummary<'a> {
    all_passed: bool,
    reports: &'a [MarginalReport],
}

pub fn verify_marginals(
    cfg: &ExperimentConfig,
    path: &Path,
    kappa: Option<f64>,
    steps: Option<usize>,
) -> Result<i32, CliError> {
    const CMD: &str = "verify-marginals";
    let mut cfg = cfg.clone();
    if let Some(k) = kappa {
        cfg.verify.kappas = vec![k];
    }
    if let Some(m) = steps {
        cfg.verify.steps = m;
    }
    cfg.validate()
        .map_err(|(_, message)| CliError::Usage(message))?;
    let prior = cfg.require_prior(path)?;
    let v = &cfg.verify;
    let reports = verify::marginal_check_grid(
        prior,
        &cfg.schedule,
        &v.kappas,
        &v.t_stops,
        v.n_samples,
        v.steps,
        v.threshold,
        cfg.sampler.seed,
    )
    .during(CMD)?;

    let mut csv = format!("{}\n", MarginalReport::CSV_HEADER);
    for r in &reports {
        println!("{}", r.csv_row());
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    let all_passed = reports.iter().all(|r| r.passed);
    let dir = &cfg.output_dir;
    write_file(&dir.join("marginals.csv"), &csv)?;
    write_json(
        &dir.join("marginals.json"),
        &MarginalSummary {
            all_passed,
            reports: &reports,
        },
    )?;
    write_resolved(dir, &cfg)?;
    Ok(if all_passed { exit::OK } else { exit::FAILED })
}

#[derive(Serialize)]
struct ScoreSummary {
    points: usize,
    max_relation_residual: f64,
    max_fd_relative_error: f64,
    relation_tolerance: f64,
    fd_tolerance: f64,
    passed: bool,
}

/// Smallest noise level at which the denoiser-score relation is checked.
const MIN_GAMMA: f64 = 1e-3;

pub fn verify_score(cfg: &ExperimentConfig, path: &Path) -> Result<i32, CliError> {
    const CMD: &str = "verify-score";
    let prior = cfg.require_prior(path)?;
    let sched = cfg.schedule;
    if sched.gamma(0.5).during(CMD)? <= MIN_GAMMA {
        return Err(CliError::Usage(format!(
            "verify-score needs a schedule with gamma above {MIN_GAMMA} somewhere"
        )));
    }
    let n = cfg.verify.score_points;
    let points: Vec<(f64, Vec<f64>, ScoreCheck)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.sampler.seed, domain::HELD_OUT, i as u64);
            let t = loop {
                let t: f64 = r.random();
                if sched.gamma(t)? > MIN_GAMMA {
                    break t;
                }
            };
            let x = prior.sample_interpolant(&sched, t, &mut r)?;
            let check = verify::score_check(prior, &sched, t, &x)?;
            Ok((t, x, check))
        })
        .collect::<sips_core::Result<_>>()
        .during(CMD)?;

    let d = prior.dim();
    let mut csv = String::from("index,t");
    for j in 0..d {
        let _ = write!(csv, ",x_{j}");
    }
    csv.push_str(",relation_residual,fd_relative_error\n");
    let mut max_rel = 0.0f64;
    let mut max_fd = 0.0f64;
    for (i, (t, x, c)) in points.iter().enumerate() {
        let _ = write!(csv, "{i},{t}");
        for v in x {
            let _ = write!(csv, ",{v}");
        }
        let _ = writeln!(csv, ",{},{}", c.relation_residual, c.fd_relative_error);
        max_rel = max_rel.max(c.relation_residual);
        max_fd = max_fd.max(c.fd_relative_error);
    }
    let v = &cfg.verify;
    let summary = ScoreSummary {
        points: n,
        max_relation_residual: max_rel,
        max_fd_relative_error: max_fd,
        relation_tolerance: v.relation_tolerance,
        fd_tolerance: v.fd_tolerance,
        passed: max_rel < v.relation_tolerance && max_fd < v.fd_tolerance,
    };
    println!(
        "points={n} max_relation_residual={max_rel:e} max_fd_relative_error={max_fd:e} passed={}",
        summary.passed
    );
    let dir = &cfg.output_dir;
    write_file(&dir.join("score.csv"), &csv)?;
    write_json(&dir.join("score.json"), &summary)?;
    write_resolved(dir, cfg)?;
    Ok(if summary.passed {
        exit::OK
    } else {
        exit::FAILED
    })
}

#[derive(Serialize)]
struct TrainSummary {
    iterations: usize,
    final_loss: f64,
    held_out_n: usize,
    held_out_loss: f64,
}

pub fn train(cfg: &ExperimentConfig, path: &Path) -> Result<i32, CliError> {
    const CMD: &str = "train";
    let prior = cfg.require_prior(path)?;
    let init = MlpDenoiser::new(
        prior.dim(),
        &cfg.network.hidden,
        cfg.schedule,
        cfg.train.seed,
    )
    .during(CMD)?;
    let outcome = denoiser::train(&init, prior, &cfg.train).during(CMD)?;

    let mut r = rng::stream(cfg.train.seed, domain::HELD_OUT, 0);
    let held_out = denoiser::sample_batch(prior, cfg.network.held_out, &mut r);
    let held_out_loss = outcome.network.loss(&held_out).during(CMD)?;

    let mut csv = String::from("iteration,loss\n");
    for (i, l) in outcome.loss_trace.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    let summary = TrainSummary {
        iterations: cfg.train.iterations,
        final_loss: outcome.loss_trace.last().copied().unwrap_or(f64::NAN),
        held_out_n: cfg.network.held_out,
        held_out_loss,
    };
    println!(
        "iterations={} final_loss={} held_out_loss={}",
        summary.iterations, summary.final_loss, summary.held_out_loss
    );
    let dir = &cfg.output_dir;
    let mut model = outcome.network.to_json().during(CMD)?;
    model.push('\n');
    write_file(&dir.join("model.json"), &model)?;
    write_file(&dir.join("loss_trace.csv"), &csv)?;
    write_json(&dir.join("train_summary.json"), &summary)?;
    write_resolved(dir, cfg)?;
    Ok(exit::OK)
}

/// Paired draws `(s, y)` and sampler outputs for one `(kappa, steps)` setting.
pub struct SampleRun {
    pub clean: Vec<Vec<f64>>,
    pub observed: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

/// One summary row: mean squared error to the paired clean signal and
/// distances from the outputs to the clean draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleSummary {
    pub kappa: f64,
    pub steps: usize,
    pub n: usize,
    pub mse: f64,
    pub w1: f64,
    pub energy: f64,
}

impl SampleSummary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.kappa, self.steps, self.n, self.mse, self.w1, self.energy
        )
    }
}

/// Pair `i` comes from `(seed, PRIOR_DRAW, i)` and its sampler noise from
/// `(seed, SIPS_TRAJECTORY, i)`, so every setting of a sweep sees the same inputs.
pub fn sample_run(
    cfg: &ExperimentConfig,
    prior: &GaussianPairMixture,
    predictor: &PredictorKind,
    den: &DenoiserKind,
    kappa: f64,
    steps: usize,
) -> sips_core::Result<(SampleRun, SampleSummary)> {
    let sampler = cfg.sampler_config(kappa, steps)?;
    let seed = cfg.sampler.seed;
    let n = cfg.sample.n;
    let triples: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (s, y) = prior.sample_pair(&mut rng::stream(seed, domain::PRIOR_DRAW, i as u64));
            let mut r = rng::stream(seed, domain::SIPS_TRAJECTORY, i as u64);
            let p = predictor.with_context(&s);
            let x = sips_sample(&y, &p, den, &cfg.schedule, &sampler, &mut r)?;
            Ok((s, y, x))
        })
        .collect::<sips_core::Result<_>>()?;
    let mut run = SampleRun {
        clean: Vec::with_capacity(n),
        observed: Vec::with_capacity(n),
        outputs: Vec::with_capacity(n),
    };
    for (s, y, x) in triples {
        run.clean.push(s);
        run.observed.push(y);
        run.outputs.push(x);
    }
    let d = prior.dim();
    let sq: f64 = run
        .outputs
        .iter()
        .zip(&run.clean)
        .flat_map(|(x, s)| x.iter().zip(s).map(|(a, b)| (a - b).powi(2)))
        .sum();
    let summary = SampleSummary {
        kappa,
        steps,
        n,
        mse: sq / (n * d) as f64,
        w1: verify::max_marginal_wasserstein(&run.outputs, &run.clean)?,
        energy: verify::energy_distance(&run.outputs, &run.clean)?,
    };
    Ok((run, summary))
}

fn build_models(
    cfg: &ExperimentConfig,
    path: &Path,
) -> Result<(GaussianPairMixture, PredictorKind, DenoiserKind), CliError> {
    let prior = cfg.require_prior(path)?.clone();
    let predictor = cfg.predictor.build(&prior);
    let den = cfg.denoiser(path)?;
    if let Some(d) = den.dim() {
        if d != prior.dim() {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                line: 0,
                column: 0,
                message: format!(
                    "denoiser expects dimension {d} but the prior has dimension {}",
                    prior.dim()
                ),
            });
        }
    }
    Ok((prior, predictor, den))
}

pub fn sample(cfg: &ExperimentConfig, path: &Path) -> Result<i32, CliError> {
    const CMD: &str = "sample";
    let (prior, predictor, den) = build_models(cfg, path)?;
    let (run, summary) = sample_run(
        cfg,
        &prior,
        &predictor,
        &den,
        cfg.sampler.kappa,
        cfg.sampler.steps,
    )
    .during(CMD)?;

    let d = prior.dim();
    let mut csv = String::from("index");
    for prefix in ["y", "s", "x"] {
        for j in 0..d {
            let _ = write!(csv, ",{prefix}_{j}");
        }
    }
    csv.push('\n');
    for i in 0..run.outputs.len() {
        let _ = write!(csv, "{i}");
        for row in [&run.observed[i], &run.clean[i], &run.outputs[i]] {
            for v in row {
                let _ = write!(csv, ",{v}");
            }
        }
        csv.push('\n');
    }
    println!("{SAMPLE_SUMMARY_HEADER}\n{}", summary.csv_row());
    let dir = &cfg.output_dir;
    write_file(&dir.join("samples.csv"), &csv)?;
    write_file(
        &dir.join("summary.csv"),
        &format!("{SAMPLE_SUMMARY_HEADER}\n{}\n", summary.csv_row()),
    )?;
    write_resolved(dir, cfg)?;
    Ok(exit::OK)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Kappa,
    Steps,
}

pub fn sweep(cfg: &ExperimentConfig, path: &Path, which: Sweep) -> Result<i32, CliError> {
    let (cmd, file) = match which {
        Sweep::Kappa => ("sweep-kappa", "sweep_kappa.csv"),
        Sweep::Steps => ("sweep-steps", "sweep_steps.csv"),
    };
    let (prior, predictor, den) = build_models(cfg, path)?;
    let settings: Vec<(f64, usize)> = match which {
        Sweep::Kappa => cfg
            .sweep
            .kappas
            .iter()
            .map(|&k| (k, cfg.sampler.steps))
            .collect(),
        Sweep::Steps => cfg
            .sweep
            .steps
            .iter()
            .map(|&m| (cfg.sampler.kappa, m))
            .collect(),
    };
    let mut csv = format!("{SAMPLE_SUMMARY_HEADER}\n");
    println!("{SAMPLE_SUMMARY_HEADER}");
    for (kappa, steps) in settings {
        let (_, summary) = sample_run(cfg, &prior, &predictor, &den, kappa, steps).during(cmd)?;
        println!("{}", summary.csv_row());
        csv.push_str(&summary.csv_row());
        csv.push('\n');
    }
    let dir = &cfg.output_dir;
    write_file(&dir.join(file), &csv)?;
    write_resolved(dir, cfg)?;
    Ok(exit::OK)
}

pub fn enhance(
    cfg: &ExperimentConfig,
    path: &Path,
    input: &Path,
    output: &Path,
) -> Result<i32, CliError> {
    const CMD: &str = "enhance";
    let den = cfg.denoiser(path)?;
    if den.dim().is_some_and(|d| d != 1) {
        return Err(CliError::Config {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            message: "enhance applies the denoiser per time-frequency value and needs a one-dimensional denoiser".into(),
        });
    }
    let wave = signal::read_wav(input).during(CMD)?;
    let stacked = signal::analyze(&wave).during(CMD)?;
    let predictor = SpectralGatePredictor {
        length: wave.len(),
        sample_rate: wave.sample_rate,
        gain_floor: cfg.gate.gain_floor,
        noise_percentile: cfg.gate.noise_percentile,
    };
    let sampler = cfg
        .sampler_config(cfg.sampler.kappa, cfg.sampler.steps)
        .during(CMD)?;
    let mut r = rng::stream(cfg.sampler.seed, domain::SIPS_TRAJECTORY, 0);
    let x = sips_sample(
        &stacked.data,
        &predictor,
        &Coordinatewise(&den),
        &cfg.schedule,
        &sampler,
        &mut r,
    )
    .during(CMD)?;
    let spec = signal::StackedSpectrogram::from_vector(stacked.shape[1], stacked.shape[2], x)
        .during(CMD)?;
    let enhanced = signal::synthesize(&spec, wave.len(), wave.sample_rate).during(CMD)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    signal::write_wav(output, &enhanced).during(CMD)?;
    let dir: PathBuf = output
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut resolved = cfg.clone();
    resolved.output_dir = dir.clone();
    write_resolved(&dir, &resolved)?;
    println!(
        "wrote {} ({} samples at {} Hz)",
        output.display(),
        enhanced.len(),
        enhanced.sample_rate
    );
    Ok(exit::OK)
}
