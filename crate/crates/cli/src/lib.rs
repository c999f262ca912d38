//! The `sips` command-line tool: marginal and score verification, denoiser
//! training, κ and step sweeps, and the WAV enhancement demo.
//!
//! Every subcommand reads one JSON experiment config, applies flag
//! overrides, and writes its results plus `resolved_config.json` to the
//! output directory. Exit codes: 0 success, 1 a check failed, 2 bad
//! configuration or usage, 3 numerical divergence.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{ExperimentConfig, Overrides};
pub use error::{exit, CliError};

const MARGINALS_HELP: &str = "\
Outputs (in the output directory):
  marginals.csv   one row per (t_stop, kappa), t_stop-major
                  columns: t_stop,kappa,n,steps,w1,energy,threshold,passed
                  w1 is the largest per-dimension 1-Wasserstein distance
                  between forward-SDE and direct interpolant samples
  marginals.json  {all_passed, reports}
Overrides: --kappa replaces verify.kappas with one value, --steps sets verify.steps.
Exit status 0 iff every row passes.";

const SCORE_HELP: &str = "\
Outputs (in the output directory):
  score.csv   columns: index,t,x_0..x_{d-1},relation_residual,fd_relative_error
              relation_residual = |eta + gamma * score|
              fd_relative_error = worst coordinate error of the score against
              central differences of the log density
  score.json  maxima, tolerances, and the pass flag
Exit status 0 iff both maxima are below verify.relation_tolerance and verify.fd_tolerance.";

const TRAIN_HELP: &str = "\
Outputs (in the output directory):
  model.json          trained denoiser
  loss_trace.csv      columns: iteration,loss
  train_summary.json  iterations, final_loss, held_out_n, held_out_loss
Overrides: --steps sets train.iterations, --seed sets train.seed.";

const SAMPLE_HELP: &str = "\
Outputs (in the output directory):
  samples.csv  columns: index,y_0..,s_0..,x_0..  (observation, paired clean
               signal, sampler output)
  summary.csv  columns: kappa,steps,n,mse,w1,energy
               mse is the mean squared error to the paired clean signal per
               coordinate; w1 and energy compare outputs against the clean draws";

const SWEEP_KAPPA_HELP: &str = "\
Outputs (in the output directory):
  sweep_kappa.csv  one row per sweep.kappas entry at sampler.steps
                   columns: kappa,steps,n,mse,w1,energy (as in `sample`)";

const SWEEP_STEPS_HELP: &str = "\
Outputs (in the output directory):
  sweep_steps.csv  one row per sweep.steps entry at sampler.kappa
                   columns: kappa,steps,n,mse,w1,energy (as in `sample`)";

const ENHANCE_HELP: &str = "\
Reads a mono 16-bit WAV, runs the sampler in the compressed STFT domain with
the spectral gate as predictor and the configured one-dimensional denoiser
applied to every time-frequency value, and writes a mono 16-bit WAV.
resolved_config.json is written next to the output file.";

#[derive(Debug, Parser)]
#[command(
    name = "sips",
    version,
    about = "Stochastic-interpolant sampling experiments"
)]
#[command(after_help = "Environment: SIPS_THREADS caps worker threads (0 or unset = all cores).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare forward-SDE and direct interpolant marginals over the verify grid.
    #[command(after_help = MARGINALS_HELP)]
    VerifyMarginals(Common),
    /// Check the denoiser-score relation and the score against finite differences.
    #[command(after_help = SCORE_HELP)]
    VerifyScore(Common),
    /// Train the MLP denoiser on the prior's clean marginal.
    #[command(after_help = TRAIN_HELP)]
    Train(TrainArgs),
    /// Run the sampler on observations drawn from the prior.
    #[command(after_help = SAMPLE_HELP)]
    Sample(Common),
    /// Repeat `sample` over sweep.kappas.
    #[command(after_help = SWEEP_KAPPA_HELP)]
    SweepKappa(Common),
    /// Repeat `sample` over sweep.steps.
    #[command(after_help = SWEEP_STEPS_HELP)]
    SweepSteps(Common),
    /// Enhance a WAV file.
    #[command(after_help = ENHANCE_HELP)]
    Enhance(EnhanceArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Sampler noise scale.
    #[arg(long)]
    kappa: Option<f64>,
    /// Number of uniform sampler steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Base seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Optimizer iterations.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Input WAV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output WAV.
    #[arg(long)]
    out: PathBuf,
}

fn load(path: &Path, o: Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(&o);
    cfg.validate()
        .map_err(|(_, message)| CliError::Usage(message))?;
    Ok(cfg)
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        load(
            &self.config,
            Overrides {
                kappa: self.kappa,
                steps: self.steps,
                seed: self.seed,
                out: self.out.clone(),
            },
        )
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    use commands::Sweep;
    match command {
        Command::VerifyMarginals(c) => {
            // --kappa and --steps target the verify grid, not the sampler section.
            let cfg = load(
                &c.config,
                Overrides {
                    seed: c.seed,
                    out: c.out.clone(),
                    ..Overrides::default()
                },
            )?;
            commands::verify_marginals(&cfg, &c.config, c.kappa, c.steps)
        }
        Command::VerifyScore(c) => commands::verify_score(&c.load()?, &c.config),
        Command::Train(a) => {
            let mut cfg = load(
                &a.config,
                Overrides {
                    out: a.out.clone(),
                    ..Overrides::default()
                },
            )?;
            if let Some(m) = a.steps {
                cfg.train.iterations = m;
            }
            if let Some(s) = a.seed {
                cfg.train.seed = s;
            }
            cfg.validate()
                .map_err(|(_, message)| CliError::Usage(message))?;
            commands::train(&cfg, &a.config)
        }
        Command::Sample(c) => commands::sample(&c.load()?, &c.config),
        Command::SweepKappa(c) => commands::sweep(&c.load()?, &c.config, Sweep::Kappa),
        Command::SweepSteps(c) => commands::sweep(&c.load()?, &c.config, Sweep::Steps),
        Command::Enhance(a) => {
            let cfg = load(
                &a.config,
                Overrides {
                    kappa: a.kappa,
                    steps: a.steps,
                    seed: a.seed,
                    out: None,
                },
            )?;
            commands::enhance(&cfg, &a.config, &a.input, &a.out)
        }
    }
}

fn thread_count() -> Result<usize, CliError> {
    match std::env::var("SIPS_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Usage(format!(
                "SIPS_THREADS must be a non-negative integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(0),
    }
}

/// Runs the tool on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = thread_count().and_then(|threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
        pool.install(|| dispatch(cli.command))
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("sips: error: {e}");
            e.exit_code()
        }
    }
}
