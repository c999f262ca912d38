//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Every tolerance below is fixed; none is tuned
//! to the observed values.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use sips_cli::ExperimentConfig;
use sips_core::denoiser::{sample_batch, FnDenoiser, MlpDenoiser};
use sips_core::signal::{self, Waveform};
use sips_core::verify;
use sips_core::{
    rng, sips_sample, DenoiserKind, GaussianPairComponent, GaussianPairMixture, NoiseSchedule,
    PredictorKind, SamplerConfig,
};

const TOY_W1_MAX: f64 = 0.02;
const BIMODAL_W1_MAX: f64 = 0.05;
const MARGINAL_SAMPLES: usize = 100_000;
const MARGINAL_STEPS: usize = 2000;
const MARGINAL_BUDGET: Duration = Duration::from_secs(5 * 60);
const RELATION_TOL: f64 = 1e-10;
const SCORE_FD_TOL: f64 = 1e-5;
const MIN_GAMMA: f64 = 1e-3;
const SCORE_POINTS: usize = 1000;
const CONSTANT_DENOISER_TOL: f64 = 1e-10;
const TRAINED_LOSS_REL_TOL: f64 = 0.10;
const GRAD_FD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_PARAMS_PER_LAYER: usize = 50;
const ROUND_TRIP_TOL: f64 = 1e-9;
const SI_SDR_TOL: f64 = 1e-9;
const SWEEP_BUDGET: Duration = Duration::from_secs(10 * 60);

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

struct Ctx {
    tmp: tempfile::TempDir,
    /// Runs to repeat for the determinism check: (label, args, output directory).
    reruns: Vec<(String, Vec<String>, PathBuf)>,
}

impl Ctx {
    fn dir(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    /// Runs `sips` and records the invocation for the determinism check.
    fn sips(&mut self, label: &str, args: &[&str], out: &Path) -> Result<(), String> {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let code = sips(&args)?;
        ensure!(code == 0, "{label}: exit {code}");
        self.reruns
            .push((label.to_string(), args, out.to_path_buf()));
        Ok(())
    }
}

fn sips(args: &[String]) -> Result<i32, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_sips"))
        .args(args)
        .env("SIPS_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        eprint!("{}", String::from_utf8_lossy(&o.stderr));
    }
    o.status.code().ok_or_else(|| "killed by signal".into())
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn read_text(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn csv_rows(path: &Path) -> Result<Vec<Vec<String>>, String> {
    Ok(read_text(path)?
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn rich_prior() -> GaussianPairMixture {
    GaussianPairMixture::new(vec![
        GaussianPairComponent {
            weight: 0.5,
            mean_s: vec![1.0, -1.0],
            mean_y: vec![0.5, 0.0],
            var_ss: vec![0.6, 1.2],
            var_yy: vec![1.5, 2.0],
            cov_sy: vec![0.4, -0.3],
        },
        GaussianPairComponent::isotropic(0.3, vec![-2.0, 1.5], vec![-1.0, 1.0], 0.3, 1.0, 0.2),
        GaussianPairComponent::isotropic(0.2, vec![0.0, 3.0], vec![0.5, 2.0], 0.8, 0.9, 0.0),
    ])
    .unwrap()
}

fn marginal_equivalence(ctx: &mut Ctx) -> Check {
    let start = Instant::now();
    let mut worst = Vec::new();
    for (name, limit) in [("toy.json", TOY_W1_MAX), ("bimodal.json", BIMODAL_W1_MAX)] {
        let out = ctx.dir(&format!("marginals-{name}"));
        let config = shipped(name);
        let args = [
            "verify-marginals",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        if name == "toy.json" {
            ctx.sips("verify-marginals", &args, &out)?;
        } else {
            let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
            ensure!(sips(&args)? == 0, "{name}: verify-marginals failed");
        }
        let rows = csv_rows(&out.join("marginals.csv"))?;
        ensure!(rows.len() == 12, "{name}: {} rows", rows.len());
        let mut max_w1 = 0.0f64;
        for (i, r) in rows.iter().enumerate() {
            let (t, k) = (num(&r[0]), num(&r[1]));
            ensure!(
                t == [0.25, 0.5, 0.75, 1.0][i / 3],
                "{name}: unexpected t_stop {t}"
            );
            ensure!(k == [0.0, 0.4, 1.0][i % 3], "{name}: unexpected kappa {k}");
            ensure!(r[2] == MARGINAL_SAMPLES.to_string(), "{name}: n = {}", r[2]);
            ensure!(
                r[3] == MARGINAL_STEPS.to_string(),
                "{name}: steps = {}",
                r[3]
            );
            let w1 = num(&r[4]);
            ensure!(w1 <= limit, "{name}: W1 {w1} > {limit} at t={t}, kappa={k}");
            max_w1 = max_w1.max(w1);
        }
        worst.push(format!("{name} max W1 {max_w1:.4} <= {limit}"));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed <= MARGINAL_BUDGET, "took {elapsed:?}");
    Ok(format!(
        "{}; {:.0} s",
        worst.join(", "),
        elapsed.as_secs_f64()
    ))
}

fn denoiser_score_relation(ctx: &mut Ctx) -> Check {
    let out = ctx.dir("score");
    let config = shipped("bimodal.json");
    ctx.sips(
        "verify-score",
        &[
            "verify-score",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    )?;
    let summary: serde_json::Value =
        serde_json::from_str(&read_text(&out.join("score.json"))?).map_err(|e| e.to_string())?;
    let cli_rel = summary["max_relation_residual"]
        .as_f64()
        .unwrap_or(f64::NAN);
    let cli_fd = summary["max_fd_relative_error"]
        .as_f64()
        .unwrap_or(f64::NAN);
    ensure!(
        summary["points"] == SCORE_POINTS,
        "points {}",
        summary["points"]
    );
    ensure!(
        cli_rel < RELATION_TOL && cli_fd < SCORE_FD_TOL,
        "CLI: {cli_rel:e}, {cli_fd:e}"
    );

    let prior = rich_prior();
    let sched = NoiseSchedule::default();
    let mut r = rng::stream(99, 0, 0);
    let (mut max_rel, mut max_fd) = (0.0f64, 0.0f64);
    let mut n = 0;
    while n < SCORE_POINTS {
        let t: f64 = r.random();
        if sched.gamma(t).unwrap() <= MIN_GAMMA {
            continue;
        }
        let x = [r.random_range(-4.0..4.0), r.random_range(-4.0..4.0)];
        let c = verify::score_check(&prior, &sched, t, &x).map_err(|e| e.to_string())?;
        max_rel = max_rel.max(c.relation_residual);
        max_fd = max_fd.max(c.fd_relative_error);
        n += 1;
    }
    ensure!(max_rel < RELATION_TOL, "relation residual {max_rel:e}");
    ensure!(max_fd < SCORE_FD_TOL, "score FD error {max_fd:e}");
    Ok(format!(
        "bimodal 1-D: {cli_rel:.1e} / {cli_fd:.1e}; 3-component 2-D: {max_rel:.1e} / {max_fd:.1e}"
    ))
}

fn algorithm_reductions(_: &mut Ctx) -> Check {
    let prior = rich_prior();
    let sched = NoiseSchedule::default();
    let mmse = PredictorKind::MmsePosteriorMean(prior.clone());
    let oracle = PredictorKind::OracleClean;
    let mut r = rng::stream(7, 0, 0);
    let mut worst_const = 0.0f64;
    for _ in 0..500 {
        let (s, y) = prior.sample_pair(&mut r);
        let cfg = SamplerConfig::uniform(0.0, r.random_range(1..=60), 0).unwrap();
        let noise = &mut rng::stream(0, 0, 0);

        let out = sips_sample(&y, &mmse, &DenoiserKind::Zero, &sched, &cfg, noise).unwrap();
        ensure!(
            out == prior.mmse_predict(&y).unwrap(),
            "(i) differs for y = {y:?}"
        );

        let out = sips_sample(
            &y,
            &oracle.with_context(&s),
            &DenoiserKind::Zero,
            &sched,
            &cfg,
            noise,
        )
        .unwrap();
        ensure!(out == s, "(ii) differs for y = {y:?}");

        let c: f64 = r.random_range(-5.0..5.0);
        let constant = FnDenoiser(move |_, x: &[f64]| vec![c; x.len()]);
        let out = sips_sample(&y, &mmse, &constant, &sched, &cfg, noise).unwrap();
        let target = prior.mmse_predict(&y).unwrap();
        for (a, b) in out.iter().zip(&target) {
            worst_const = worst_const.max((a - b).abs());
        }
    }
    ensure!(
        worst_const <= CONSTANT_DENOISER_TOL,
        "(iii) deviation {worst_const:e}"
    );
    Ok(format!(
        "(i), (ii) exact on 500 draws; (iii) max deviation {worst_const:.1e}"
    ))
}

/// `E_t[1 / (1 + (a + gamma(t))^2)]`, the optimal loss for unit-variance `S`, by Simpson's rule.
fn optimal_denoising_loss(sched: &NoiseSchedule) -> f64 {
    let n = 20_000;
    let h = 1.0 / n as f64;
    let f = |t: f64| {
        let sigma = sched.a + sched.c * (std::f64::consts::PI * t).sin().powi(2);
        1.0 / (1.0 + sigma * sigma)
    };
    let inner: f64 = (1..n)
        .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h))
        .sum();
    (f(0.0) + inner + f(1.0)) * h / 3.0
}

fn training_optimality(ctx: &mut Ctx) -> Check {
    let out = ctx.dir("train");
    let config = shipped("toy.json");
    ctx.sips(
        "train",
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    )?;
    let summary: serde_json::Value =
        serde_json::from_str(&read_text(&out.join("train_summary.json"))?)
            .map_err(|e| e.to_string())?;
    let trained = summary["held_out_loss"].as_f64().unwrap_or(f64::NAN);
    let cfg = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
    let prior = cfg.prior.as_ref().ok_or("toy config has no prior")?;
    let c = &prior.components()[0];
    ensure!(
        prior.dim() == 1 && c.var_ss[0] == 1.0 && c.mean_s[0] == 0.0,
        "toy clean marginal is not N(0, 1)"
    );
    let minimum = optimal_denoising_loss(&cfg.schedule);
    let rel = (trained - minimum).abs() / minimum;
    ensure!(
        rel <= TRAINED_LOSS_REL_TOL,
        "trained {trained} vs optimum {minimum}"
    );

    let n = 100_000;
    let zero = MlpDenoiser::zeros(1, &cfg.network.hidden, cfg.schedule).unwrap();
    let batch = sample_batch(prior, n, &mut rng::stream(31, rng::domain::HELD_OUT, 0));
    let zero_loss = zero.loss(&batch).unwrap();
    let se = (2.0 / n as f64).sqrt();
    ensure!(
        (zero_loss - 1.0).abs() < 3.0 * se,
        "zero-network loss {zero_loss}"
    );
    Ok(format!(
        "held-out {trained:.4} vs optimum {minimum:.4} ({:.1}%); zero net {zero_loss:.4} (3 SE = {:.4})",
        100.0 * rel,
        3.0 * se
    ))
}

fn gradient_correctness(_: &mut Ctx) -> Check {
    let sched = NoiseSchedule::default();
    let prior = rich_prior();
    let net = MlpDenoiser::new(2, &[24, 16], sched, 5).unwrap();
    let batch = sample_batch(&prior, 64, &mut rng::stream(6, 0, 0));
    let (_, grads) = net.loss_and_grad(&batch).unwrap();
    let mut pick = rng::stream(8, 0, 0);
    let mut worst = 0.0f64;
    for layer in 0..net.num_layers() {
        let count = net.layer_param_count(layer);
        for _ in 0..GRAD_PARAMS_PER_LAYER {
            let idx = pick.random_range(0..count);
            let p = net.param(layer, idx);
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.set_param(layer, idx, p + GRAD_FD_STEP);
            minus.set_param(layer, idx, p - GRAD_FD_STEP);
            let fd =
                (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * GRAD_FD_STEP);
            let g = grads.get(layer, idx);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            ensure!(rel < GRAD_REL_TOL, "layer {layer} param {idx}: {g} vs {fd}");
            worst = worst.max(rel);
        }
    }
    Ok(format!(
        "{} layers x {GRAD_PARAMS_PER_LAYER} params, max relative error {worst:.1e}",
        net.num_layers()
    ))
}

fn representation_fidelity(_: &mut Ctx) -> Check {
    let mut r = rng::stream(12, 0, 0);
    let mut worst = 0.0f64;
    for len in [16_000usize, 1_000, 12_345] {
        let samples: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
        let w = Waveform::new(samples, 16_000).unwrap();
        let spec = signal::stft(&w)
            .unwrap()
            .map(signal::compress)
            .map(signal::decompress);
        let back = signal::istft(&spec, len, 16_000).unwrap();
        let err: f64 = w
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let norm: f64 = w.samples.iter().map(|a| a * a).sum();
        worst = worst.max((err / norm).sqrt());
    }
    ensure!(worst < ROUND_TRIP_TOL, "round trip error {worst:e}");

    let c = signal::compress(num_complex::Complex64::new(4.0, 0.0));
    ensure!(c.re == 0.3 && c.im == 0.0, "compress(4) = {c}");

    let s: Vec<f64> = (0..2000).map(|_| r.random_range(-1.0..1.0)).collect();
    let est: Vec<f64> = s
        .iter()
        .map(|v| v + 0.3 * r.random_range(-1.0..1.0))
        .collect();
    let base = signal::si_sdr_samples(&s, &est).unwrap();
    for a in [2.0, -4.0, 0.5, 1024.0, -0.125] {
        let scaled: Vec<f64> = est.iter().map(|v| a * v).collect();
        let v = signal::si_sdr_samples(&s, &scaled).unwrap();
        ensure!(v == base, "scale {a}: {v} vs {base}");
    }

    let mut e: Vec<f64> = (0..2000).map(|_| r.random_range(-1.0..1.0)).collect();
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let proj = s.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / ss;
    e.iter_mut().zip(&s).for_each(|(e, s)| *e -= proj * s);
    let ee: f64 = e.iter().map(|v| v * v).sum();
    let k = (ss / (10.0 * ee)).sqrt();
    let est: Vec<f64> = s.iter().zip(&e).map(|(s, e)| s + k * e).collect();
    let db = signal::si_sdr_samples(&s, &est).unwrap();
    ensure!(
        (db - 10.0).abs() < SI_SDR_TOL,
        "10:1 construction gives {db} dB"
    );
    Ok(format!(
        "round trip {worst:.1e}; compress(4) = 0.3; scale-invariant; 10:1 -> {db:.12} dB"
    ))
}

fn sweep_sanity(ctx: &mut Ctx) -> Check {
    let start = Instant::now();
    let config = shipped("toy.json");
    let cfg = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;

    let out = ctx.dir("sweep-steps");
    ctx.sips(
        "sweep-steps",
        &[
            "sweep-steps",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    )?;
    let rows = csv_rows(&out.join("sweep_steps.csv"))?;
    let steps: Vec<usize> = rows.iter().map(|r| r[1].parse().unwrap_or(0)).collect();
    ensure!(steps == [1, 2, 4, 8, 15, 30, 60], "step grid {steps:?}");
    // sampling noise of W1 at this budget: two independent clean sets of the same size
    let prior = cfg.prior.as_ref().ok_or("toy config has no prior")?;
    let noise = verify::baseline_wasserstein(prior, &cfg.schedule, 1.0, cfg.sample.n, 1)
        .map_err(|e| e.to_string())?;
    let w1: Vec<f64> = rows.iter().map(|r| num(&r[4])).collect();
    for i in 0..4 {
        ensure!(
            w1[i + 1] <= w1[i] + noise,
            "W1 rises from {} at M={} to {} at M={} (noise {noise})",
            w1[i],
            steps[i],
            w1[i + 1],
            steps[i + 1]
        );
    }

    let out = ctx.dir("sweep-kappa");
    ctx.sips(
        "sweep-kappa",
        &[
            "sweep-kappa",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    )?;
    let rows = csv_rows(&out.join("sweep_kappa.csv"))?;
    ensure!(rows.len() == 11, "{} kappa rows", rows.len());
    for (i, r) in rows.iter().enumerate() {
        ensure!(
            (num(&r[0]) - i as f64 / 10.0).abs() < 1e-12,
            "kappa row {i} is {}",
            r[0]
        );
    }
    let elapsed = start.elapsed();
    ensure!(elapsed <= SWEEP_BUDGET, "took {elapsed:?}");
    let trace: Vec<String> = w1[..5].iter().map(|w| format!("{w:.4}")).collect();
    Ok(format!(
        "W1 over M=1..15: {} (noise {noise:.4}); 11 kappa rows; {:.1} s",
        trace.join(" "),
        elapsed.as_secs_f64()
    ))
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let entry = entry.map_err(|e| e.to_string())?;
        if entry.path().is_file() {
            let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
            files.insert(entry.file_name().to_string_lossy().into_owned(), bytes);
        }
    }
    Ok(files)
}

fn determinism(ctx: &mut Ctx) -> Check {
    let toy = shipped("toy.json");
    let demo = shipped("demo.json");
    let wav = ctx.dir("in.wav");
    let mut r = rng::stream(21, 0, 0);
    let noisy: Vec<f64> = (0..16_000)
        .map(|n| {
            let tone = if (4000..11000).contains(&n) {
                0.4 * (2.0 * std::f64::consts::PI * 300.0 * n as f64 / 16_000.0).sin()
            } else {
                0.0
            };
            tone + 0.03 * r.random_range(-1.0..1.0)
        })
        .collect();
    signal::write_wav(&wav, &Waveform::new(noisy, 16_000).unwrap()).map_err(|e| e.to_string())?;
    for kappa in ["0", "0.4"] {
        for cmd in ["sample", "enhance"] {
            let out = ctx.dir(&format!("{cmd}-{kappa}"));
            let out_wav = out.join("out.wav");
            let label = format!("{cmd} --kappa {kappa}");
            let mut args = vec![cmd, "--kappa", kappa, "--seed", "7"];
            if cmd == "sample" {
                args.extend([
                    "--config",
                    toy.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                ]);
            } else {
                args.extend([
                    "--config",
                    demo.to_str().unwrap(),
                    "--in",
                    wav.to_str().unwrap(),
                ]);
                args.extend(["--out", out_wav.to_str().unwrap()]);
            }
            ctx.sips(&label, &args, &out)?;
        }
    }

    let reruns = std::mem::take(&mut ctx.reruns);
    let mut labels = Vec::new();
    for (label, args, out) in &reruns {
        let before = snapshot(out)?;
        ensure!(!before.is_empty(), "{label}: no files written");
        ensure!(sips(args)? == 0, "{label}: re-run failed");
        let after = snapshot(out)?;
        ensure!(
            before.keys().eq(after.keys()),
            "{label}: different file sets"
        );
        for (name, bytes) in &before {
            ensure!(after[name] == *bytes, "{label}: {name} differs on re-run");
        }
        labels.push(label.as_str());
    }
    Ok(format!(
        "{} runs byte-identical: {}",
        reruns.len(),
        labels.join(", ")
    ))
}

fn main() {
    let mut ctx = Ctx {
        tmp: tempfile::tempdir().expect("temp dir"),
        reruns: Vec::new(),
    };
    type Criterion = fn(&mut Ctx) -> Check;
    let criteria: [(&str, Criterion); 8] = [
        ("marginal equivalence", marginal_equivalence),
        ("denoiser-score relation", denoiser_score_relation),
        ("sampler reductions", algorithm_reductions),
        ("training optimality", training_optimality),
        ("gradient correctness", gradient_correctness),
        ("representation fidelity", representation_fidelity),
        ("sweep harness sanity", sweep_sanity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| check(&mut ctx)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} PASS {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
