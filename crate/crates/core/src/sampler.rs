//! Rollouts into particle datasets.
//!
//! A batch of `n_traj` trajectories of `T` steps yields `N = n_traj · T`
//! particles, one per visited state `s_1 … s_T` (the initial state is not a
//! particle). Particle `(j, t)` is reached by the actions `a_0 … a_{t-1}` of
//! trajectory `j`, so its log importance ratio is the sum of the per-step
//! log-ratios over those `t` actions.
//!
//! Particles and steps share one ordering: index `j · T + (t − 1)` for
//! particles and `j · T + z` for the step `(s_z, a_z)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::estimators::WeightVector;
use crate::knn::PointSet;
use crate::policy::{BatchForward, GaussianPolicy, ParamVector};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(T + 1) × obs_dim`, row-major.
    pub states: Vec<f64>,
    /// `T × action_dim`, row-major; the raw (unclipped) policy samples.
    pub actions: Vec<f64>,
    /// Random stream the trajectory was drawn from.
    pub stream: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Particle {
    pub trajectory: usize,
    /// Time index of the state, `1..=T`.
    pub t: usize,
}

#[derive(Debug, Clone)]
pub struct ParticleDataset {
    obs_dim: usize,
    action_dim: usize,
    horizon: usize,
    seed: u64,
    trajectories: Vec<Trajectory>,
    feature_indices: Vec<usize>,
    features: PointSet,
    step_states: Vec<f64>,
    step_actions: Vec<f64>,
}

/// Rolls out `n_traj` trajectories of `horizon` steps. Trajectory `j` draws
/// its start state and action noise from stream `j` of `seed`.
pub fn collect<E: Environment + ?Sized>(
    env: &E,
    policy: &GaussianPolicy,
    params: &ParamVector,
    horizon: usize,
    n_traj: usize,
    seed: u64,
) -> Result<ParticleDataset> {
    if horizon == 0 {
        return Err(Error::param("horizon", "must be >= 1"));
    }
    if n_traj == 0 {
        return Err(Error::param("n_traj", "must be >= 1"));
    }
    let spec = env.spec();
    if spec.obs_dim != policy.state_dim() || spec.action_dim != policy.action_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.obs_dim,
            actual: policy.state_dim(),
        });
    }
    let (od, ad) = (spec.obs_dim, spec.action_dim);
    let mut rngs: Vec<_> = (0..n_traj).map(|j| stream_rng(seed, j as u64)).collect();
    let mut states: Vec<_> = rngs.iter_mut().map(|r| env.reset(r)).collect();
    let mut trajectories: Vec<Trajectory> = states
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mut st = Vec::with_capacity((horizon + 1) * od);
            st.extend_from_slice(&s.observation);
            Trajectory {
                states: st,
                actions: Vec::with_capacity(horizon * ad),
                stream: j as u64,
            }
        })
        .collect();
    let mut current = vec![0.0; n_traj * od];
    for _ in 0..horizon {
        for (j, s) in states.iter().enumerate() {
            current[j * od..(j + 1) * od].copy_from_slice(&s.observation);
        }
        let mut means = policy.mean_batch(params, &current)?;
        for j in 0..n_traj {
            let action = &mut means[j * ad..(j + 1) * ad];
            policy
                .perturb(params, action, &mut rngs[j])
                .map_err(|_| Error::Environment {
                    trajectory: j,
                    reason: "non-finite policy output".into(),
                })?;
            let next = env.step(&states[j], action);
            if !spec.contains(&next.observation) {
                return Err(Error::Environment {
                    trajectory: j,
                    reason: alloc::format!("observation {:?} out of bounds", next.observation),
                });
            }
            trajectories[j].actions.extend_from_slice(action);
            trajectories[j].states.extend_from_slice(&next.observation);
            states[j] = next;
        }
    }
    ParticleDataset::from_trajectories(
        od,
        ad,
        horizon,
        seed,
        trajectories,
        spec.entropy_features.clone(),
    )
}

impl ParticleDataset {
    pub fn from_trajectories(
        obs_dim: usize,
        action_dim: usize,
        horizon: usize,
        seed: u64,
        trajectories: Vec<Trajectory>,
        feature_indices: Vec<usize>,
    ) -> Result<Self> {
        if feature_indices.is_empty() || feature_indices.iter().any(|&f| f >= obs_dim) {
            return Err(Error::param("entropy_features", "empty or out of range"));
        }
        for tr in &trajectories {
            if tr.states.len() != (horizon + 1) * obs_dim || tr.actions.len() != horizon * action_dim {
                return Err(Error::param("trajectory", "inconsistent lengths"));
            }
        }
        let n = trajectories.len() * horizon;
        let p = feature_indices.len();
        let mut feats = Vec::with_capacity(n * p);
        let mut step_states = Vec::with_capacity(n * obs_dim);
        let mut step_actions = Vec::with_capacity(n * action_dim);
        for tr in &trajectories {
            for t in 1..=horizon {
                let s = &tr.states[t * obs_dim..(t + 1) * obs_dim];
                feats.extend(feature_indices.iter().map(|&f| s[f]));
            }
            step_states.extend_from_slice(&tr.states[..horizon * obs_dim]);
            step_actions.extend_from_slice(&tr.actions);
        }
        Ok(ParticleDataset {
            obs_dim,
            action_dim,
            horizon,
            seed,
            features: PointSet::new(p, feats)?,
            trajectories,
            feature_indices,
            step_states,
            step_actions,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len() * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn feature_indices(&self) -> &[usize] {
        &self.feature_indices
    }

    /// Particle states projected onto the entropy features.
    pub fn features(&self) -> &PointSet {
        &self.features
    }

    pub fn particle(&self, i: usize) -> Particle {
        Particle {
            trajectory: i / self.horizon,
            t: i % self.horizon + 1,
        }
    }

    /// Full observation of particle `i`.
    pub fn state(&self, i: usize) -> &[f64] {
        let p = self.particle(i);
        let od = self.obs_dim;
        &self.trajectories[p.trajectory].states[p.t * od..(p.t + 1) * od]
    }

    /// States `s_0 … s_{T-1}` of every trajectory, in step order.
    pub fn step_states(&self) -> &[f64] {
        &self.step_states
    }

    pub fn step_actions(&self) -> &[f64] {
        &self.step_actions
    }

    /// Batched forward pass over every `(s_z, a_z)` step.
    pub fn step_forward(&self, policy: &GaussianPolicy, params: &ParamVector) -> Result<BatchForward> {
        let fwd = policy.forward_batch(params, &self.step_states, &self.step_actions)?;
        if let Some(step) = fwd.log_probs().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "log_prob",
                particle: Some(step),
            });
        }
        Ok(fwd)
    }

    /// log π(a_z | s_z) for every step.
    pub fn step_log_probs(&self, policy: &GaussianPolicy, params: &ParamVector) -> Result<BatchForward> {
        self.step_forward(policy, params)
    }

    /// Cumulative per-trajectory sums of per-step log-ratios: the log of the
    /// prefix probability ratio for every particle.
    pub fn prefix_log_ratios(&self, target: &[f64], base: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (tgt, bs) in target
            .chunks_exact(self.horizon)
            .zip(base.chunks_exact(self.horizon))
        {
            let mut acc = 0.0;
            for (a, b) in tgt.iter().zip(bs) {
                acc += a - b;
                out.push(acc);
            }
        }
        out
    }

    pub fn weights_from_step_log_probs(&self, target: &[f64], base: &[f64]) -> Result<WeightVector> {
        WeightVector::from_log_ratios(self.prefix_log_ratios(target, base))
    }

    /// Normalized importance weights of the target parameters relative to
    /// the sampling parameters.
    pub fn log_ratios(
        &self,
        policy: &GaussianPolicy,
        theta_prime: &ParamVector,
        theta0: &ParamVector,
    ) -> Result<WeightVector> {
        let target = self.step_forward(policy, theta_prime)?;
        let base = self.step_forward(policy, theta0)?;
        self.weights_from_step_log_probs(target.log_probs(), base.log_probs())
    }

    /// Per-particle Σ_{z<t} ∇ log π_θ(a_z | s_z). Costs one backward pass
    /// per step; meant for checks on small datasets.
    pub fn score_prefix_sums(&self, policy: &GaussianPolicy, params: &ParamVector) -> Result<Vec<ParamVector>> {
        let (od, ad) = (self.obs_dim, self.action_dim);
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.trajectories.len() {
            let mut acc = ParamVector::zeros(policy.num_params());
            for z in 0..self.horizon {
                let step = j * self.horizon + z;
                let g = policy.log_prob_grad(
                    params,
                    &self.step_states[step * od..(step + 1) * od],
                    &self.step_actions[step * ad..(step + 1) * ad],
                )?;
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        context: "score",
                        particle: Some(step),
                    });
                }
                acc.add_scaled(1.0, &g);
                out.push(acc.clone());
            }
        }
        Ok(out)
    }

    /// Maps per-particle coefficients `β` to per-step coefficients: step
    /// `(j, z)` enters the prefix of every particle `(j, t)` with `t > z`.
    pub fn step_coefficients(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; beta.len()];
        for (b, o) in beta
            .chunks_exact(self.horizon)
            .zip(out.chunks_exact_mut(self.horizon))
        {
            let mut acc = 0.0;
            for z in (0..self.horizon).rev() {
                acc += b[z];
                o[z] = acc;
            }
        }
        out
    }

    pub(crate) fn first_non_finite_particle(&self, step_values: &[f64]) -> Option<usize> {
        step_values.iter().position(|x| !x.is_finite())
    }
}
