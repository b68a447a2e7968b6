use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mepol::artifacts::{self, Provenance};
use mepol::experiments::{self, Distribution, CHECK_COLUMNS, HORIZON_COLUMNS};
use mepol::{Checkpoint, ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(name = "mepol", version, about = "Maximum-entropy exploration policies: training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write logs, checkpoints and the aggregate CSV.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// k-NN entropy index of a fresh batch from a checkpoint.
    EvalEntropy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Eval,
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Entropy of the visit counts on the env's 2-D spatial grid.
    EvalDiscrete {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Eval,
    },
    /// H(d_h) and H(d̄_h) for one or more checkpoints over the config's eval horizons.
    HorizonCurves {
        #[command(flatten)]
        common: Common,
        /// Checkpoints to compare; labels are the file stems.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Rollout length; defaults to the largest h.
        #[arg(long)]
        rollout: Option<usize>,
        #[arg(long)]
        n_traj: Option<usize>,
        #[arg(short, long)]
        k: Option<usize>,
        /// Overrides the config's eval_horizons.
        #[arg(long, value_delimiter = ',')]
        h: Vec<usize>,
    },
    /// Log-probability visitation grid as CSV.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Eval,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Bias and variance of the k-NN estimators on distributions with known answers.
    EstimatorCheck {
        /// uniform-box, gaussian or reweighted-pair
        #[arg(long, default_value = "uniform-box")]
        distribution: String,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1_000usize, 10_000, 100_000])]
        n: Vec<usize>,
        #[arg(short, long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON), or a preset name: gridworld, mountaincar, ndgrid.
    #[arg(long)]
    config: String,
    /// Overrides the config's first seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (train) or file (CSV-producing commands).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing output.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    n_traj: Option<usize>,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match mepol::presets::get(&common.config) {
        Some(text) if !Path::new(&common.config).exists() => ExperimentConfig::from_json_str(text)?,
        _ => ExperimentConfig::load(Path::new(&common.config))?,
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn check_file_target(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(HarnessError::OutputExists(path.to_path_buf()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let config = load_config(&common)?;
            let out = common.out.clone().unwrap_or_else(|| config.output_dir.clone());
            let progress = |seed: u64, r: &mepol_core::EpochRecord| {
                eprintln!(
                    "seed {seed} epoch {:>4}  H = {:.4}  iters {:>2}  kl {:.4}  {:.1}s",
                    r.epoch, r.entropy_index, r.inner_iters, r.final_kl, r.seconds
                );
            };
            let summary = experiments::run_training(&config, &out, common.force, &progress)?;
            if let Some(last) = summary.aggregate.last() {
                println!(
                    "{}: epoch {} mean entropy index {:.4} ± {:.4} over {} seed(s)",
                    summary.out.display(),
                    last.epoch,
                    last.mean_entropy_index,
                    last.ci95_half_width,
                    last.n_seeds
                );
            }
        }
        Command::EvalEntropy { common, eval, k } => {
            let config = load_config(&common)?;
            let ckpt = Checkpoint::load(&eval.checkpoint)?;
            let report = experiments::eval_entropy(
                &ckpt,
                &config.env.build(),
                eval.horizon.unwrap_or(config.horizon),
                eval.n_traj.unwrap_or(config.n_traj),
                k.unwrap_or(config.k),
                config.seed,
            )?;
            println!("{}", report.value);
        }
        Command::EvalDiscrete { common, eval } => {
            let config = load_config(&common)?;
            let env = config.env.build();
            let cell = config
                .discrete_cell_for(&env)
                .ok_or_else(|| HarnessError::config("env", "environment has no 2-D spatial view"))?;
            let ckpt = Checkpoint::load(&eval.checkpoint)?;
            let h = experiments::eval_discrete_entropy(
                &ckpt,
                &env,
                eval.horizon.unwrap_or(config.horizon),
                eval.n_traj.unwrap_or(config.eval_n_traj()),
                cell,
                config.seed,
            )?;
            println!("{h}");
        }
        Command::HorizonCurves {
            common,
            checkpoints,
            rollout,
            n_traj,
            k,
            h,
        } => {
            let config = load_config(&common)?;
            let hs = if h.is_empty() { config.eval_horizons.clone() } else { h };
            if hs.is_empty() {
                return Err(HarnessError::config("eval_horizons", "no horizons given"));
            }
            let policies = checkpoints
                .iter()
                .map(|p| {
                    let label = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    Ok((label, Checkpoint::load(p)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = experiments::eval_horizon_curves(
                &policies,
                &config.env.build(),
                rollout.unwrap_or_else(|| *hs.iter().max().unwrap()),
                n_traj.unwrap_or(config.eval_n_traj()),
                k.unwrap_or(config.k),
                &hs,
                config.seed,
            )?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("horizon_curves.csv"));
            check_file_target(&out, common.force)?;
            let provenance = Provenance {
                config_hash: Some(config.hash()),
                seed: Some(config.seed),
                seeds: vec![config.seed],
            };
            artifacts::write_table(&out, &HORIZON_COLUMNS, &rows, &provenance)?;
            println!("{}", out.display());
        }
        Command::Heatmap { common, eval, resolution } => {
            let config = load_config(&common)?;
            let ckpt = Checkpoint::load(&eval.checkpoint)?;
            let grid = experiments::heatmap(
                &ckpt,
                &config.env.build(),
                eval.n_traj.unwrap_or(config.eval_n_traj()),
                eval.horizon.unwrap_or(config.horizon),
                resolution.unwrap_or(config.heatmap_resolution),
                config.seed,
            )?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("heatmap.csv"));
            check_file_target(&out, common.force)?;
            artifacts::write_heatmap(&out, &grid, &Provenance::run(&config.hash(), config.seed))?;
            println!("{}", out.display());
        }
        Command::EstimatorCheck {
            distribution,
            dim,
            n,
            k,
            seeds,
            out,
            force,
        } => {
            let dist = Distribution::parse(&distribution, dim)
                .ok_or_else(|| HarnessError::config("distribution", format!("unknown distribution {distribution:?}")))?;
            let report = experiments::estimator_check(dist, &n, k, seeds)?;
            println!("{:>8} {:>10} {:>10} {:>10}", "N", "mean", "bias", "variance");
            for r in &report.rows {
                println!("{:>8} {:>10.5} {:>10.5} {:>10.3e}", r.n, r.mean, r.bias, r.variance);
            }
            println!(
                "bias shrinks: {}  final |bias| < {}: {}",
                report.bias_shrinks,
                dist.tolerance(),
                report.final_bias_ok
            );
            if let Some(out) = out {
                check_file_target(&out, force)?;
                artifacts::write_table(&out, &CHECK_COLUMNS, &report.rows, &Provenance::default())?;
            }
            if !report.passed() {
                return Err(HarnessError::Other("estimator check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
