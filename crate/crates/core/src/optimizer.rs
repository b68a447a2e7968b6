//! The training loop.
//!
//! Each epoch collects a fresh batch with the current parameters `θ_0`,
//! builds the neighbor geometry once, then takes constant-step gradient
//! ascent steps on the IW entropy estimate. After each step the KL estimate
//! between the batch and the candidate is checked: the step is kept iff it
//! is ≤ δ, and the first breaching step is undone, so every returned iterate
//! lies inside the trust region.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::env::Environment;
use crate::error::{Diagnostics, Error, Result};
use crate::estimators::{EstimatorOptions, GradientForm, KnnGeometry, WeightVector};
use crate::knn::PointSet;
use crate::policy::{BatchForward, GaussianPolicy, ParamVector, PolicySpec, PretrainOptions};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::sampler::{collect, ParticleDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct MepolConfig {
    /// Exploration horizon `T`.
    pub horizon: usize,
    /// Trajectories per epoch; the batch holds `horizon · n_traj` particles.
    pub n_traj: usize,
    /// Trust-region threshold on the KL estimate, in nats.
    pub delta: f64,
    /// Constant learning rate.
    pub alpha: f64,
    pub update: UpdateRule,
    pub k: usize,
    pub max_inner_iters: usize,
    pub epochs: usize,
    pub seed: u64,
    pub policy: PolicySpec,
    pub gradient_form: GradientForm,
    pub estimator: EstimatorOptions,
    /// Zero-mean pretraining before the first epoch; `None` skips it.
    pub pretrain: Option<PretrainOptions>,
    /// States drawn uniformly from the observation box for pretraining.
    pub pretrain_states: usize,
}

impl MepolConfig {
    /// Table delta used by the main experiments.
    pub const DELTA_TABLE: f64 = 15.0;
    /// Delta used by the sensitivity study.
    pub const DELTA_SENSITIVITY: f64 = 0.05;

    pub fn new(policy: PolicySpec) -> Self {
        MepolConfig {
            horizon: 400,
            n_traj: 20,
            delta: Self::DELTA_TABLE,
            alpha: 1e-4,
            update: UpdateRule::Ascent,
            k: 4,
            max_inner_iters: 30,
            epochs: 1,
            seed: 0,
            policy,
            gradient_form: GradientForm::Corrected,
            estimator: EstimatorOptions::default(),
            pretrain: Some(PretrainOptions::default()),
            pretrain_states: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be >= 1"));
        }
        if self.n_traj == 0 {
            return Err(Error::param("n_traj", "must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::param("delta", "must be positive and finite"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", "must be positive and finite"));
        }
        if let UpdateRule::Adam { beta1, beta2, epsilon } = self.update {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::param("update", "adam needs beta1, beta2 in [0, 1) and epsilon > 0"));
            }
        }
        if self.max_inner_iters == 0 {
            return Err(Error::param("max_inner_iters", "must be >= 1"));
        }
        if self.k == 0 || self.k >= self.horizon * self.n_traj {
            return Err(Error::param("k", "must satisfy 1 <= k < horizon * n_traj"));
        }
        if self.pretrain.is_some() && self.pretrain_states == 0 {
            return Err(Error::param("pretrain_states", "must be >= 1 when pretraining"));
        }
        self.policy.validate()
    }

    pub fn batch_size(&self) -> usize {
        self.horizon * self.n_traj
    }
}

/// How a gradient becomes a parameter step.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum UpdateRule {
    /// `θ ← θ + α ∇H`.
    Ascent,
    /// Adam moments on `∇H`; the moments persist across epochs and are
    /// restored together with the parameters when a step is rolled back.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam first and second moments.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    /// The step for `grad` and the moments after taking it.
    fn step(&self, grad: &ParamVector, alpha: f64, beta1: f64, beta2: f64, eps: f64) -> (ParamVector, AdamState) {
        let n = grad.len();
        let (m0, v0) = if self.m.len() == n {
            (&self.m[..], &self.v[..])
        } else {
            (&[][..], &[][..])
        };
        let t = self.t + 1;
        let c1 = 1.0 - crate::math::powu(beta1, t);
        let c2 = 1.0 - crate::math::powu(beta2, t);
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut step = ParamVector::zeros(n);
        for i in 0..n {
            let g = grad[i];
            let mi = beta1 * m0.get(i).copied().unwrap_or(0.0) + (1.0 - beta1) * g;
            let vi = beta2 * v0.get(i).copied().unwrap_or(0.0) + (1.0 - beta2) * g * g;
            step[i] = alpha * (mi / c1) / (crate::math::sqrt(vi / c2) + eps);
            m.push(mi);
            v.push(vi);
        }
        (step, AdamState { m, v, t })
    }
}

/// Seed of the batch collected at `epoch`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    derive_seed(derive_seed(seed, streams::EPOCH), epoch as u64)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    /// Entropy estimate of the batch collected at the start of the epoch.
    pub entropy_index: f64,
    /// Accepted inner steps.
    pub inner_iters: usize,
    /// KL estimate at the returned iterate; 0 when no step was accepted.
    pub final_kl: f64,
    /// IW entropy estimate at the returned iterate.
    pub final_iw_entropy: f64,
    /// Whether the inner loop stopped on a rejected step.
    pub breached: bool,
    /// Effective sample size of the weights at the returned iterate.
    pub final_ess: f64,
    pub env_samples: u64,
    pub seconds: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn entropy_indices(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.entropy_index).collect()
    }
}

/// Wall-clock source; the core library has no clock of its own.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Always reports zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Everything about an epoch that stays fixed during the inner loop.
pub struct EpochBatch {
    pub dataset: ParticleDataset,
    pub geometry: KnnGeometry,
    base_log_probs: Vec<f64>,
}

impl EpochBatch {
    pub fn new(
        dataset: ParticleDataset,
        policy: &GaussianPolicy,
        theta0: &ParamVector,
        k: usize,
        options: EstimatorOptions,
    ) -> Result<Self> {
        let geometry = KnnGeometry::new(dataset.features(), k, options)?;
        let base_log_probs = dataset.step_log_probs(policy, theta0)?.log_probs().to_vec();
        Ok(EpochBatch {
            dataset,
            geometry,
            base_log_probs,
        })
    }

    /// Log-probabilities of every step under the sampling parameters.
    pub fn base_log_probs(&self) -> &[f64] {
        &self.base_log_probs
    }

    pub fn weights(&self, target: &BatchForward) -> Result<WeightVector> {
        self.dataset
            .weights_from_step_log_probs(target.log_probs(), &self.base_log_probs)
    }

    fn diagnostics(&self, weights: Option<&WeightVector>) -> Diagnostics {
        let features = self.dataset.features();
        Diagnostics {
            particles: features.coords().to_vec(),
            feature_dim: features.dim(),
            weights: weights.map(|w| w.normalized().to_vec()).unwrap_or_default(),
            radii: self.geometry.neighbors().radii().to_vec(),
        }
    }
}

/// Outcome of one inner step.
#[derive(Debug, Clone)]
pub struct InnerStep {
    /// Candidate on acceptance, otherwise a copy of the input iterate.
    pub theta: ParamVector,
    /// KL estimate at the candidate.
    pub kl: f64,
    pub accepted: bool,
    /// IW entropy at the returned iterate.
    pub iw_entropy: f64,
    pub ess: f64,
}

/// Current iterate together with its cached forward pass.
struct Iterate {
    theta: ParamVector,
    fwd: BatchForward,
    weights: WeightVector,
}

fn evaluate(batch: &EpochBatch, policy: &GaussianPolicy, theta: ParamVector) -> Result<Iterate> {
    let fwd = batch.dataset.step_forward(policy, &theta)?;
    let weights = batch.weights(&fwd)?;
    Ok(Iterate { theta, fwd, weights })
}

fn gradient(
    batch: &EpochBatch,
    policy: &GaussianPolicy,
    it: &Iterate,
    form: GradientForm,
) -> Result<ParamVector> {
    let beta = batch.geometry.iw_entropy_coefficients(&it.weights, form)?;
    let coeffs = batch.dataset.step_coefficients(&beta);
    policy.weighted_score(&it.theta, &it.fwd, &coeffs)
}

/// Tries `θ_h + step` and returns the candidate's evaluation if its KL
/// estimate is within `delta`. A candidate whose weights cannot be formed
/// counts as a breach.
fn try_step(
    batch: &EpochBatch,
    policy: &GaussianPolicy,
    current: &Iterate,
    step: &ParamVector,
    delta: f64,
) -> Result<(Option<Iterate>, f64)> {
    let mut theta = current.theta.clone();
    theta.add_scaled(1.0, step);
    let candidate = match evaluate(batch, policy, theta) {
        Ok(c) => c,
        Err(Error::NonFinite { .. }) | Err(Error::InvalidParameter { .. }) => {
            return Ok((None, f64::INFINITY));
        }
        Err(e) => return Err(e),
    };
    let kl = batch.geometry.kl(&candidate.weights)?.value;
    if kl <= delta {
        Ok((Some(candidate), kl))
    } else {
        Ok((None, kl))
    }
}

/// One plain ascent step `θ_h + α ∇H` from `theta_h`, accepted iff the KL
/// estimate of the candidate is within `delta`.
pub fn inner_step(
    batch: &EpochBatch,
    policy: &GaussianPolicy,
    theta_h: &ParamVector,
    alpha: f64,
    delta: f64,
    form: GradientForm,
) -> Result<InnerStep> {
    let current = evaluate(batch, policy, theta_h.clone())?;
    let grad = gradient(batch, policy, &current, form)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            context: "entropy gradient",
            particle: None,
        });
    }
    let mut step = grad;
    step.iter_mut().for_each(|g| *g *= alpha);
    let (next, kl) = try_step(batch, policy, &current, &step, delta)?;
    let accepted = next.is_some();
    let kept = next.unwrap_or(current);
    let iw = batch.geometry.iw_entropy(&kept.weights)?;
    Ok(InnerStep {
        theta: kept.theta,
        kl,
        accepted,
        iw_entropy: iw.value,
        ess: iw.ess,
    })
}

/// Called after every inner step with the iterate it started from.
pub trait InnerObserver {
    fn on_step(&mut self, epoch: usize, iteration: usize, before: &ParamVector, step: &InnerStep);
}

impl InnerObserver for () {
    fn on_step(&mut self, _: usize, _: usize, _: &ParamVector, _: &InnerStep) {}
}

/// Stateful training run over one environment.
pub struct Trainer<'a, E: Environment + ?Sized> {
    env: &'a E,
    config: MepolConfig,
    policy: GaussianPolicy,
    params: ParamVector,
    epoch: usize,
    env_samples: u64,
    adam: AdamState,
    log: TrainLog,
}

impl<'a, E: Environment + ?Sized> Trainer<'a, E> {
    /// Initializes parameters from the seed and runs zero-mean pretraining
    /// if configured.
    pub fn new(env: &'a E, config: MepolConfig) -> Result<Self> {
        config.validate()?;
        check_env(env, &config.policy)?;
        let policy = GaussianPolicy::new(config.policy.clone())?;
        let mut params = policy.init_params(&mut stream_rng(config.seed, streams::INIT));
        if let Some(opts) = config.pretrain {
            let states = pretrain_states(env, config.pretrain_states, config.seed);
            params = policy.zero_mean_pretrain(&params, &states, opts)?;
        }
        Ok(Self::resume(env, config, policy, params, 0, 0))
    }

    /// Continues from saved parameters at `epoch`.
    pub fn from_checkpoint(
        env: &'a E,
        config: MepolConfig,
        params: ParamVector,
        epoch: usize,
        env_samples: u64,
    ) -> Result<Self> {
        config.validate()?;
        check_env(env, &config.policy)?;
        let policy = GaussianPolicy::new(config.policy.clone())?;
        if params.len() != policy.num_params() {
            return Err(Error::DimensionMismatch {
                expected: policy.num_params(),
                actual: params.len(),
            });
        }
        Ok(Self::resume(env, config, policy, params, epoch, env_samples))
    }

    fn resume(
        env: &'a E,
        config: MepolConfig,
        policy: GaussianPolicy,
        params: ParamVector,
        epoch: usize,
        env_samples: u64,
    ) -> Self {
        Trainer {
            env,
            config,
            policy,
            params,
            epoch,
            env_samples,
            adam: AdamState::default(),
            log: TrainLog::default(),
        }
    }

    pub fn config(&self) -> &MepolConfig {
        &self.config
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn env_samples(&self) -> u64 {
        self.env_samples
    }

    /// Adam moments; empty under plain ascent.
    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    /// Restores Adam moments saved with a checkpoint.
    pub fn set_adam_state(&mut self, state: AdamState) {
        self.adam = state;
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn into_parts(self) -> (ParamVector, TrainLog) {
        (self.params, self.log)
    }

    /// Collects the batch the next epoch would train on.
    pub fn collect_batch(&self) -> Result<EpochBatch> {
        let c = &self.config;
        let dataset = collect(
            self.env,
            &self.policy,
            &self.params,
            c.horizon,
            c.n_traj,
            epoch_seed(c.seed, self.epoch),
        )?;
        EpochBatch::new(dataset, &self.policy, &self.params, c.k, c.estimator)
    }

    pub fn run_epoch(&mut self, clock: &dyn Clock) -> Result<EpochRecord> {
        self.run_epoch_observed(clock, &mut ())
    }

    pub fn run_epoch_observed(
        &mut self,
        clock: &dyn Clock,
        observer: &mut dyn InnerObserver,
    ) -> Result<EpochRecord> {
        let start = clock.seconds();
        let epoch = self.epoch;
        let (alpha, delta, form) = (self.config.alpha, self.config.delta, self.config.gradient_form);
        let batch = self.collect_batch()?;
        let abort = |what, weights: Option<&WeightVector>, batch: &EpochBatch| Error::EpochAborted {
            epoch,
            what,
            diagnostics: Box::new(batch.diagnostics(weights)),
        };

        let entropy_index = batch.geometry.entropy().value;
        if !entropy_index.is_finite() {
            return Err(abort("entropy", None, &batch));
        }
        let mut current = evaluate(&batch, &self.policy, self.params.clone())?;
        let mut final_kl = 0.0;
        let mut accepted = 0;
        let mut breached = false;
        for iteration in 0..self.config.max_inner_iters {
            let grad = gradient(&batch, &self.policy, &current, form)?;
            if !grad.is_finite() {
                return Err(abort("gradient", Some(&current.weights), &batch));
            }
            let (step, adam) = match self.config.update {
                UpdateRule::Ascent => {
                    let mut step = grad;
                    step.iter_mut().for_each(|g| *g *= alpha);
                    (step, None)
                }
                UpdateRule::Adam { beta1, beta2, epsilon } => {
                    let (step, state) = self.adam.step(&grad, alpha, beta1, beta2, epsilon);
                    (step, Some(state))
                }
            };
            let (next, kl) = try_step(&batch, &self.policy, &current, &step, delta)?;
            let before = current.theta.clone();
            let ok = next.is_some();
            if let Some(next) = next {
                assert!(kl <= delta, "accepted step outside the trust region");
                if let Some(state) = adam {
                    self.adam = state;
                }
                current = next;
                final_kl = kl;
                accepted += 1;
            }
            let iw = batch.geometry.iw_entropy(&current.weights)?;
            observer.on_step(
                epoch,
                iteration,
                &before,
                &InnerStep {
                    theta: current.theta.clone(),
                    kl,
                    accepted: ok,
                    iw_entropy: iw.value,
                    ess: iw.ess,
                },
            );
            if !ok {
                breached = true;
                break;
            }
        }
        let iw = batch.geometry.iw_entropy(&current.weights)?;
        if !iw.value.is_finite() {
            return Err(abort("IW entropy", Some(&current.weights), &batch));
        }

        self.params = current.theta;
        self.epoch += 1;
        self.env_samples += batch.dataset.len() as u64;
        let record = EpochRecord {
            epoch,
            entropy_index,
            inner_iters: accepted,
            final_kl,
            final_iw_entropy: iw.value,
            breached,
            final_ess: iw.ess,
            env_samples: self.env_samples,
            seconds: clock.seconds() - start,
            seed: self.config.seed,
        };
        self.log.records.push(record.clone());
        Ok(record)
    }

    /// Runs the configured number of epochs.
    pub fn run(&mut self, clock: &dyn Clock) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(clock)?;
        }
        Ok(())
    }
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train<E: Environment + ?Sized>(env: &E, config: MepolConfig) -> Result<(ParamVector, TrainLog)> {
    let mut trainer = Trainer::new(env, config)?;
    trainer.run(&NoClock)?;
    Ok(trainer.into_parts())
}

fn check_env<E: Environment + ?Sized>(env: &E, spec: &PolicySpec) -> Result<()> {
    let s = env.spec();
    if s.obs_dim != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: s.obs_dim,
            actual: spec.input_dim,
        });
    }
    if s.action_dim != spec.output_dim {
        return Err(Error::DimensionMismatch {
            expected: s.action_dim,
            actual: spec.output_dim,
        });
    }
    Ok(())
}

/// States drawn uniformly from the observation box.
fn pretrain_states<E: Environment + ?Sized>(env: &E, n: usize, seed: u64) -> PointSet {
    use rand::Rng;
    let spec = env.spec();
    let mut rng = stream_rng(seed, streams::PRETRAIN_STATES);
    let mut coords = Vec::with_capacity(n * spec.obs_dim);
    for _ in 0..n {
        for (lo, hi) in spec.obs_low.iter().zip(&spec.obs_high) {
            coords.push(lo + (hi - lo) * rng.random::<f64>());
        }
    }
    PointSet::new(spec.obs_dim, coords).expect("finite box")
}
