//! Training orchestration and evaluation operations.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use mepol_core::env::{Env, Environment, SpatialView};
use mepol_core::estimators::{EntropyReport, EstimatorOptions, KnnGeometry, WeightVector};
use mepol_core::knn::PointSet;
use mepol_core::rng::{derive_seed, stream_rng};
use mepol_core::{collect, Clock, EpochRecord, ParamVector, ParticleDataset, TrainLog, Trainer};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, AggregateRow, Provenance, AGGREGATE_COLUMNS};
use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::HeatmapGrid;
use crate::stats::{mean_ci95, variance};

pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Worker cap from `MEPOL_THREADS`, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("MEPOL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub type Progress<'a> = &'a (dyn Fn(u64, &EpochRecord) + Sync);

pub fn no_progress(_: u64, _: &EpochRecord) {}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub log: TrainLog,
    pub params: ParamVector,
}

#[derive(Debug, Clone)]
pub struct TrainingSummary {
    pub out: PathBuf,
    pub runs: Vec<SeedRun>,
    pub aggregate: Vec<AggregateRow>,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn checkpoint_path(seed_dir: &Path, epoch: usize) -> PathBuf {
    seed_dir.join("checkpoints").join(format!("epoch-{epoch:05}.json"))
}

/// Creates `out`, refusing a non-empty existing directory unless `force`.
pub fn prepare_output(out: &Path, force: bool) -> Result<()> {
    let occupied = out.exists() && (out.is_file() || std::fs::read_dir(out).map_or(true, |mut d| d.next().is_some()));
    if occupied {
        if !force {
            return Err(HarnessError::OutputExists(out.to_path_buf()));
        }
        let removed = if out.is_dir() {
            std::fs::remove_dir_all(out)
        } else {
            std::fs::remove_file(out)
        };
        removed.map_err(|e| HarnessError::io(out, e))?;
    }
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))
}

/// Trains every configured seed under `out`: `config.json`,
/// `aggregate.csv`, and per seed `seed-<s>/train_log.csv` plus checkpoints.
pub fn run_training(config: &ExperimentConfig, out: &Path, force: bool, progress: Progress) -> Result<TrainingSummary> {
    config.validate()?;
    prepare_output(out, force)?;
    let config_path = out.join("config.json");
    std::fs::write(&config_path, config.to_json()).map_err(|e| HarnessError::io(&config_path, e))?;

    let seeds = config.seed_list();
    let threads = worker_threads().min(seeds.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<SeedRun>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let result = train_seed(config, seeds[i], &seed_dir(out, seeds[i]), progress);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    let runs = slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every seed ran"))
        .collect::<Result<Vec<_>>>()?;

    let aggregate = aggregate(&runs.iter().map(|r| &r.log).collect::<Vec<_>>());
    let provenance = Provenance {
        config_hash: Some(config.hash()),
        seed: None,
        seeds: seeds.clone(),
    };
    artifacts::write_table(&out.join("aggregate.csv"), &AGGREGATE_COLUMNS, &aggregate, &provenance)?;
    Ok(TrainingSummary {
        out: out.to_path_buf(),
        runs,
        aggregate,
    })
}

/// One seed into its own directory. Checkpoints are written before the
/// first epoch, every `checkpoint_every` epochs, and after the last.
pub fn train_seed(config: &ExperimentConfig, seed: u64, dir: &Path, progress: Progress) -> Result<SeedRun> {
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| HarnessError::io(&ckpt_dir, e))?;
    let env = config.env.build();
    let mepol = config.mepol(seed);
    let spec = mepol.policy.clone();
    let mut trainer = Trainer::new(&env, mepol)?;
    let save = |t: &Trainer<Env>| {
        Checkpoint::new(spec.clone(), t.params().clone(), seed, t.epoch(), t.env_samples())
            .with_adam(t.adam_state())
            .save(&checkpoint_path(dir, t.epoch()))
    };
    save(&trainer)?;
    let clock = WallClock::start();
    while trainer.epoch() < config.epochs {
        let record = trainer.run_epoch(&clock)?;
        progress(seed, &record);
        let done = trainer.epoch();
        if done == config.epochs || (config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
            save(&trainer)?;
        }
    }
    let provenance = Provenance::run(&config.hash(), seed);
    artifacts::write_train_log(&dir.join("train_log.csv"), trainer.log(), &provenance)?;
    let (params, log) = trainer.into_parts();
    Ok(SeedRun {
        seed,
        dir: dir.to_path_buf(),
        log,
        params,
    })
}

/// Per-epoch mean and 95% CI of the entropy index over the runs that
/// reached that epoch.
pub fn aggregate(logs: &[&TrainLog]) -> Vec<AggregateRow> {
    let epochs = logs.iter().map(|l| l.len()).max().unwrap_or(0);
    (0..epochs)
        .map(|e| {
            let xs: Vec<f64> = logs
                .iter()
                .filter_map(|l| l.records.get(e).map(|r| r.entropy_index))
                .collect();
            let ci = mean_ci95(&xs).expect("at least one run");
            AggregateRow {
                epoch: e,
                mean_entropy_index: ci.mean,
                ci95_half_width: ci.half_width,
                n_seeds: ci.n,
            }
        })
        .collect()
}

// --------------------------------------------------------------------------
// Evaluation

fn check_compatible(ckpt: &Checkpoint, env: &Env) -> Result<()> {
    let spec = env.spec();
    for (expected, actual) in [
        (spec.obs_dim, ckpt.spec.input_dim),
        (spec.action_dim, ckpt.spec.output_dim),
    ] {
        if expected != actual {
            return Err(mepol_core::Error::DimensionMismatch { expected, actual }.into());
        }
    }
    Ok(())
}

/// A fresh batch from the checkpointed policy; `seed` is used as the batch
/// seed directly, so a training epoch's batch is reproduced by passing
/// `mepol_core::optimizer::epoch_seed(run_seed, epoch)`.
pub fn eval_batch(ckpt: &Checkpoint, env: &Env, horizon: usize, n_traj: usize, seed: u64) -> Result<ParticleDataset> {
    check_compatible(ckpt, env)?;
    let policy = ckpt.policy()?;
    Ok(collect(env, &policy, &ckpt.params, horizon, n_traj, seed)?)
}

pub fn eval_entropy(
    ckpt: &Checkpoint,
    env: &Env,
    horizon: usize,
    n_traj: usize,
    k: usize,
    seed: u64,
) -> Result<EntropyReport> {
    let ds = eval_batch(ckpt, env, horizon, n_traj, seed)?;
    Ok(KnnGeometry::new(ds.features(), k, EstimatorOptions::default())?.entropy())
}

fn spatial_view(env: &Env) -> Result<SpatialView> {
    env.spec()
        .spatial
        .ok_or_else(|| HarnessError::Other("environment has no 2-D spatial view".into()))
}

/// Counts of the batch's particle states on the two spatial axes.
pub fn spatial_counts(ds: &ParticleDataset, view: &SpatialView, mut grid: HeatmapGrid) -> HeatmapGrid {
    for i in 0..ds.len() {
        let s = ds.state(i);
        grid.add(s[view.dims[0]], s[view.dims[1]]);
    }
    grid
}

pub fn eval_discrete_entropy(
    ckpt: &Checkpoint,
    env: &Env,
    horizon: usize,
    n_traj: usize,
    cell: [f64; 2],
    seed: u64,
) -> Result<f64> {
    let view = spatial_view(env)?;
    let ds = eval_batch(ckpt, env, horizon, n_traj, seed)?;
    Ok(spatial_counts(&ds, &view, HeatmapGrid::with_cell(&view, cell)).entropy())
}

pub fn heatmap(
    ckpt: &Checkpoint,
    env: &Env,
    n_traj: usize,
    horizon: usize,
    resolution: usize,
    seed: u64,
) -> Result<HeatmapGrid> {
    if resolution < 2 {
        return Err(HarnessError::config("heatmap_resolution", "must be >= 2"));
    }
    let view = spatial_view(env)?;
    let ds = eval_batch(ckpt, env, horizon, n_traj, seed)?;
    Ok(spatial_counts(&ds, &view, HeatmapGrid::new(&view, resolution, resolution)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub policy: String,
    pub h: usize,
    /// Entropy of the states reached at step `h`.
    pub entropy_step: f64,
    /// Entropy of the states pooled over steps `1..=h`.
    pub entropy_avg: f64,
}

pub const HORIZON_COLUMNS: [&str; 4] = ["policy", "h", "entropy_step", "entropy_avg"];

/// States of steps `1..=h` of every trajectory, trajectory-major.
fn pooled_states(ds: &ParticleDataset, h: usize, only_last: bool) -> PointSet {
    let t = ds.horizon();
    let features = ds.feature_indices();
    let mut coords = Vec::new();
    for j in 0..ds.num_trajectories() {
        let first = if only_last { h } else { 1 };
        for step in first..=h {
            let s = ds.state(j * t + step - 1);
            coords.extend(features.iter().map(|&d| s[d]));
        }
    }
    PointSet::new(features.len(), coords).expect("finite states")
}

/// Entropy of the step-`h` cloud and of the pooled steps `1..=h` for each
/// policy, from one batch of `rollout` steps per policy.
pub fn eval_horizon_curves(
    policies: &[(String, Checkpoint)],
    env: &Env,
    rollout: usize,
    n_traj: usize,
    k: usize,
    hs: &[usize],
    seed: u64,
) -> Result<Vec<HorizonRow>> {
    if let Some(&h) = hs.iter().find(|&&h| h == 0 || h > rollout) {
        return Err(mepol_core::Error::InvalidParameter {
            name: "h",
            reason: format!("{h} is outside 1..={rollout}"),
        }
        .into());
    }
    let mut rows = Vec::new();
    for (label, ckpt) in policies {
        let ds = eval_batch(ckpt, env, rollout, n_traj, seed)?;
        for &h in hs {
            let opts = EstimatorOptions::default();
            let step = KnnGeometry::new(&pooled_states(&ds, h, true), k, opts)?.entropy();
            let avg = KnnGeometry::new(&pooled_states(&ds, h, false), k, opts)?.entropy();
            rows.push(HorizonRow {
                policy: label.clone(),
                h,
                entropy_step: step.value,
                entropy_avg: avg.value,
            });
        }
    }
    Ok(rows)
}

// --------------------------------------------------------------------------
// Estimator validation

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// `U([0,1]^dim)`, entropy 0.
    UniformBox { dim: usize },
    /// Standard normal in `dim` dimensions, entropy `dim/2 · ln(2πe)`.
    Gaussian { dim: usize },
    /// Samples of `U[0,1]` weighted toward a two-level target; the KL
    /// estimate should approach ln 2.
    ReweightedPair,
}

impl Distribution {
    pub fn parse(name: &str, dim: usize) -> Option<Self> {
        match name {
            "uniform-box" => Some(Distribution::UniformBox { dim }),
            "gaussian" => Some(Distribution::Gaussian { dim }),
            "reweighted-pair" => Some(Distribution::ReweightedPair),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Distribution::UniformBox { .. } => "uniform-box",
            Distribution::Gaussian { .. } => "gaussian",
            Distribution::ReweightedPair => "reweighted-pair",
        }
    }

    pub fn truth(&self) -> f64 {
        match *self {
            Distribution::UniformBox { .. } => 0.0,
            Distribution::Gaussian { dim } => {
                0.5 * dim as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
            }
            Distribution::ReweightedPair => std::f64::consts::LN_2,
        }
    }

    /// Error allowed at the largest sample size.
    pub fn tolerance(&self) -> f64 {
        match self {
            Distribution::ReweightedPair => 0.07,
            _ => 0.05,
        }
    }

    /// One estimate from `n` fresh samples.
    pub fn estimate(&self, n: usize, k: usize, seed: u64) -> Result<f64> {
        let mut rng = stream_rng(seed, 0);
        match *self {
            Distribution::UniformBox { dim } => {
                let pts = PointSet::new(dim, (0..n * dim).map(|_| rng.random::<f64>()).collect())?;
                Ok(KnnGeometry::new(&pts, k, EstimatorOptions::default())?.entropy().value)
            }
            Distribution::Gaussian { dim } => {
                let pts = PointSet::new(dim, (0..n * dim).map(|_| rng.sample(StandardNormal)).collect())?;
                Ok(KnnGeometry::new(&pts, k, EstimatorOptions::default())?.entropy().value)
            }
            Distribution::ReweightedPair => {
                let (pts, w) = reweighted_pair(n, seed);
                Ok(KnnGeometry::new(&pts, k, EstimatorOptions::default())?.kl(&w)?.value)
            }
        }
    }
}

/// `n` samples of `U[0,1]` with ratios `1 ± √3/2` on the two halves, so
/// KL(sampling ‖ target) = −½ ln(1 − 3/4) = ln 2.
pub fn reweighted_pair(n: usize, seed: u64) -> (PointSet, WeightVector) {
    let c = 3f64.sqrt() / 2.0;
    let mut rng = stream_rng(seed, 0);
    let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let ratios: Vec<f64> = xs.iter().map(|&x| if x < 0.5 { 1.0 + c } else { 1.0 - c }).collect();
    (
        PointSet::new(1, xs).expect("finite samples"),
        WeightVector::from_ratios(&ratios).expect("positive ratios"),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub distribution: String,
    pub n: usize,
    pub k: usize,
    pub seeds: usize,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
}

pub const CHECK_COLUMNS: [&str; 8] = ["distribution", "n", "k", "seeds", "truth", "mean", "bias", "variance"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
    /// |bias| never grows by more than 1.5× from one N to the next.
    pub bias_shrinks: bool,
    /// |bias| at the largest N is within the distribution's tolerance.
    pub final_bias_ok: bool,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.bias_shrinks && self.final_bias_ok
    }
}

/// Bias and variance of the estimator over `seeds` independent samples at
/// each size in `ns`.
pub fn estimator_check(dist: Distribution, ns: &[usize], k: usize, seeds: usize) -> Result<CheckReport> {
    if ns.is_empty() || seeds < 2 {
        return Err(HarnessError::config("seeds", "need at least one N and two seeds"));
    }
    let truth = dist.truth();
    let mut rows = Vec::new();
    for &n in ns {
        let est = (0..seeds as u64)
            .map(|s| dist.estimate(n, k, derive_seed(s, n as u64)))
            .collect::<Result<Vec<f64>>>()?;
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        rows.push(CheckRow {
            distribution: dist.name().into(),
            n,
            k,
            seeds,
            truth,
            mean,
            bias: mean - truth,
            variance: variance(&est),
        });
    }
    let bias_shrinks = rows.windows(2).all(|w| w[1].bias.abs() <= 1.5 * w[0].bias.abs());
    let final_bias_ok = rows.last().is_some_and(|r| r.bias.abs() < dist.tolerance());
    Ok(CheckReport {
        rows,
        bias_shrinks,
        final_bias_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_with_one_seed_has_zero_width() {
        let log = TrainLog {
            records: vec![EpochRecord {
                epoch: 0,
                entropy_index: 1.25,
                inner_iters: 1,
                final_kl: 0.0,
                final_iw_entropy: 1.25,
                breached: false,
                final_ess: 1.0,
                env_samples: 10,
                seconds: 0.0,
                seed: 0,
            }],
        };
        let rows = aggregate(&[&log]);
        assert_eq!(rows[0].mean_entropy_index, 1.25);
        assert_eq!(rows[0].ci95_half_width, 0.0);
        assert_eq!(rows[0].n_seeds, 1);
    }

    #[test]
    fn output_collision_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        prepare_output(&out, false).unwrap();
        // empty directories are reused
        prepare_output(&out, false).unwrap();
        std::fs::write(out.join("x"), "1").unwrap();
        assert!(matches!(prepare_output(&out, false), Err(HarnessError::OutputExists(_))));
        prepare_output(&out, true).unwrap();
        assert!(!out.join("x").exists());
    }

    #[test]
    fn distributions_parse() {
        assert_eq!(Distribution::parse("gaussian", 2), Some(Distribution::Gaussian { dim: 2 }));
        assert_eq!(Distribution::parse("nope", 1), None);
        assert!((Distribution::Gaussian { dim: 1 }.truth() - 1.418_938_533_204_672_7).abs() < 1e-15);
    }
}
