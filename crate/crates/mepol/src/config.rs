//! Experiment configuration files.
//!
//! A config is one JSON object. Required keys: `env`, `horizon`, `n_traj`,
//! `delta`, `alpha`, `k`, `epochs`, `policy`. Everything else has a default;
//! unknown keys are rejected. See `presets/` for complete examples and the
//! README for the full key list.

use std::path::{Path, PathBuf};

use mepol_core::env::{Env, Environment, GridWorld, MountainCar, MountainCarParams, NdGrid};
use mepol_core::estimators::{EstimatorOptions, GradientForm};
use mepol_core::policy::{Activation, PolicySpec, PretrainOptions};
use mepol_core::{MepolConfig, UpdateRule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvConfig {
    /// Four-rooms continuous GridWorld.
    Gridworld,
    Mountaincar {
        #[serde(default)]
        params: MountainCarParams,
    },
    /// Open `[0, side]^dim` box.
    Ndgrid { dim: usize, side: f64 },
}

impl EnvConfig {
    pub fn build(&self) -> Env {
        match self {
            EnvConfig::Gridworld => Env::GridWorld(GridWorld::four_rooms()),
            EnvConfig::Mountaincar { params } => Env::MountainCar(MountainCar::new(*params)),
            EnvConfig::Ndgrid { dim, side } => Env::NdGrid(NdGrid::new(*dim, *side)),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Ndgrid { dim, side } => {
                if *dim == 0 {
                    return Err(HarnessError::config("env.dim", "must be >= 1"));
                }
                if !(*side > 0.0 && side.is_finite()) {
                    return Err(HarnessError::config("env.side", "must be positive and finite"));
                }
            }
            EnvConfig::Mountaincar { params } => {
                if !(params.min_position < params.max_position && params.max_speed > 0.0) {
                    return Err(HarnessError::config("env.params", "empty position or speed range"));
                }
            }
            EnvConfig::Gridworld => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub init_logstd: f64,
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Ascent,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Ascent
    }
}

impl OptimizerConfig {
    pub fn rule(&self) -> UpdateRule {
        match *self {
            OptimizerConfig::Ascent => UpdateRule::Ascent,
            OptimizerConfig::Adam { beta1, beta2, epsilon } => UpdateRule::Adam { beta1, beta2, epsilon },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub enabled: bool,
    pub learning_rate: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    /// States drawn uniformly from the observation box.
    pub states: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let d = PretrainOptions::default();
        PretrainConfig {
            enabled: true,
            learning_rate: d.learning_rate,
            tolerance: d.tolerance,
            max_iters: d.max_iters,
            states: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub radius_floor: f64,
    pub kl_ceiling: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let d = EstimatorOptions::default();
        EstimatorConfig {
            radius_floor: d.radius_floor,
            kl_ceiling: d.kl_ceiling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub horizon: usize,
    pub n_traj: usize,
    pub delta: f64,
    pub alpha: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub k: usize,
    #[serde(default = "default_inner_iters")]
    pub max_inner_iters: usize,
    pub epochs: usize,
    /// First seed; runs use `seed, seed + 1, ..., seed + seeds - 1`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub gradient_form: GradientForm,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    /// Checkpoint every this many epochs; 0 keeps only the initial and
    /// final checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub eval_horizons: Vec<usize>,
    /// Trajectories per evaluation batch; defaults to `n_traj`.
    #[serde(default)]
    pub eval_n_traj: Option<usize>,
    /// Cells per side of the heatmap grid.
    #[serde(default = "default_resolution")]
    pub heatmap_resolution: usize,
    /// Cell size of the discretized entropy along the two spatial axes;
    /// defaults to a 20 × 20 split of the env's spatial box.
    #[serde(default)]
    pub discrete_cell: Option<[f64; 2]>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_inner_iters() -> usize {
    30
}
fn default_seeds() -> usize {
    1
}
fn default_resolution() -> usize {
    20
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

const REQUIRED: [&str; 8] = ["env", "horizon", "n_traj", "delta", "alpha", "k", "epochs", "policy"];

/// Cells per side used when no discretization cell is configured.
pub const DEFAULT_DISCRETE_CELLS: usize = 20;

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| HarnessError::config("<root>", e.to_string()))?;
        let Some(object) = value.as_object() else {
            return Err(HarnessError::config("<root>", "expected a JSON object"));
        };
        if let Some(missing) = REQUIRED.iter().find(|key| !object.contains_key(**key)) {
            return Err(HarnessError::config(*missing, "missing required key"));
        }
        let config: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().to_string();
            HarnessError::config(error_key(&path, &message), message)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.seeds == 0 {
            return Err(HarnessError::config("seeds", "must be >= 1"));
        }
        if self.heatmap_resolution < 2 {
            return Err(HarnessError::config("heatmap_resolution", "must be >= 2"));
        }
        if let Some(cell) = self.discrete_cell {
            if !cell.iter().all(|c| *c > 0.0 && c.is_finite()) {
                return Err(HarnessError::config("discrete_cell", "cell sizes must be positive"));
            }
            if let Some(view) = self.env.build().spec().spatial {
                for a in 0..2 {
                    if ((view.high[a] - view.low[a]) / cell[a]).ceil() < 2.0 {
                        return Err(HarnessError::config("discrete_cell", "fewer than 2 cells along an axis"));
                    }
                }
            }
        }
        if self.eval_horizons.contains(&0) {
            return Err(HarnessError::config("eval_horizons", "horizons must be >= 1"));
        }
        if self.eval_n_traj == Some(0) {
            return Err(HarnessError::config("eval_n_traj", "must be >= 1"));
        }
        let p = &self.pretrain;
        if p.enabled && !(p.learning_rate > 0.0 && p.tolerance > 0.0) {
            return Err(HarnessError::config("pretrain", "learning_rate and tolerance must be positive"));
        }
        if !(self.estimator.radius_floor >= 0.0) {
            return Err(HarnessError::config("estimator.radius_floor", "must be >= 0"));
        }
        self.mepol(self.seed).validate().map_err(|e| match e {
            mepol_core::Error::InvalidParameter { name, reason } => HarnessError::config(name, reason),
            other => HarnessError::config("<root>", other.to_string()),
        })
    }

    pub fn policy_spec(&self) -> PolicySpec {
        let spec = self.env.build().spec().clone();
        PolicySpec::new(spec.obs_dim, spec.action_dim, self.policy.hidden_sizes.clone())
            .with_activation(self.policy.activation)
            .with_init_logstd(self.policy.init_logstd)
    }

    /// The training configuration for one seed.
    pub fn mepol(&self, seed: u64) -> MepolConfig {
        let mut c = MepolConfig::new(self.policy_spec());
        c.horizon = self.horizon;
        c.n_traj = self.n_traj;
        c.delta = self.delta;
        c.alpha = self.alpha;
        c.update = self.optimizer.rule();
        c.k = self.k;
        c.max_inner_iters = self.max_inner_iters;
        c.epochs = self.epochs;
        c.seed = seed;
        c.gradient_form = self.gradient_form;
        c.estimator = EstimatorOptions {
            radius_floor: self.estimator.radius_floor,
            kl_ceiling: self.estimator.kl_ceiling,
        };
        c.pretrain = self.pretrain.enabled.then_some(PretrainOptions {
            learning_rate: self.pretrain.learning_rate,
            tolerance: self.pretrain.tolerance,
            max_iters: self.pretrain.max_iters,
        });
        c.pretrain_states = self.pretrain.states;
        c
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }

    pub fn eval_n_traj(&self) -> usize {
        self.eval_n_traj.unwrap_or(self.n_traj)
    }

    /// Discretization cell along the env's two spatial axes.
    pub fn discrete_cell_for(&self, env: &Env) -> Option<[f64; 2]> {
        let view = env.spec().spatial?;
        Some(self.discrete_cell.unwrap_or([
            (view.high[0] - view.low[0]) / DEFAULT_DISCRETE_CELLS as f64,
            (view.high[1] - view.low[1]) / DEFAULT_DISCRETE_CELLS as f64,
        ]))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Dotted key for a deserialization error: the path, extended by the field
/// named in the message for missing or unknown fields.
fn error_key(path: &str, message: &str) -> String {
    let field = message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("missing field") || message.starts_with("unknown field"));
    match (path, field) {
        (".", Some(f)) => f.to_string(),
        (".", None) => "<root>".to_string(),
        (p, Some(f)) if message.starts_with("missing field") => format!("{p}.{f}"),
        (p, Some(f)) => {
            // serde_path_to_error already points at the unknown field for
            // some containers
            if p.ends_with(f) {
                p.to_string()
            } else {
                format!("{p}.{f}")
            }
        }
        (p, None) => p.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "env": {"name": "gridworld"},
        "horizon": 20, "n_traj": 3, "delta": 15.0, "alpha": 1e-4,
        "k": 4, "epochs": 2, "policy": {"hidden_sizes": [8]}
    }"#;

    fn with(key: &str, value: serde_json::Value) -> String {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        v[key] = value;
        v.to_string()
    }

    fn without(key: &str) -> String {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        v.as_object_mut().unwrap().remove(key);
        v.to_string()
    }

    fn key_of(text: &str) -> String {
        match ExperimentConfig::from_json_str(text) {
            Err(HarnessError::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(c.seeds, 1);
        assert_eq!(c.max_inner_iters, 30);
        assert_eq!(c.optimizer, OptimizerConfig::Ascent);
        assert!(c.pretrain.enabled);
        let m = c.mepol(7);
        assert_eq!(m.seed, 7);
        assert_eq!(m.policy.input_dim, 2);
        assert_eq!(m.policy.output_dim, 2);
    }

    #[test]
    fn missing_env_names_env() {
        assert_eq!(key_of(&without("env")), "env");
        assert_eq!(key_of(&without("k")), "k");
    }

    #[test]
    fn bad_values_name_their_key() {
        assert_eq!(key_of(&with("seeds", 0.into())), "seeds");
        assert_eq!(key_of(&with("heatmap_resolution", 1.into())), "heatmap_resolution");
        assert_eq!(key_of(&with("delta", (-1.0).into())), "delta");
        assert_eq!(key_of(&with("horizon", "long".into())), "horizon");
        assert_eq!(key_of(&with("bogus", 1.into())), "bogus");
        assert_eq!(key_of(&with("policy", serde_json::json!({"hidden_sizes": []}))), "hidden_sizes");
        assert_eq!(
            key_of(&with("policy", serde_json::json!({"hidden_sizes": [4], "width": 3}))),
            "policy.width"
        );
        assert_eq!(key_of(&with("env", serde_json::json!({"name": "ndgrid", "dim": 0, "side": 1.0}))), "env.dim");
        assert_eq!(key_of(&with("env", serde_json::json!({"name": "ndgrid", "side": 1.0}))), "env.dim");
    }

    #[test]
    fn adam_fields_default() {
        let c = ExperimentConfig::from_json_str(&with("optimizer", serde_json::json!({"kind": "adam"}))).unwrap();
        assert_eq!(c.optimizer.rule(), UpdateRule::adam());
    }

    #[test]
    fn mountaincar_params_can_be_pinned() {
        let env = serde_json::json!({"name": "mountaincar", "params": {"power": 0.002}});
        let mut text: serde_json::Value = serde_json::from_str(&with("env", env)).unwrap();
        text["policy"] = serde_json::json!({"hidden_sizes": [8]});
        let c = ExperimentConfig::from_json_str(&text.to_string()).unwrap();
        match c.env {
            EnvConfig::Mountaincar { params } => {
                assert_eq!(params.power, 0.002);
                assert_eq!(params.max_speed, MountainCarParams::default().max_speed);
            }
            _ => unreachable!(),
        }
        assert_eq!(c.policy_spec().output_dim, 1);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let b = ExperimentConfig::from_json_str(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = ExperimentConfig::from_json_str(&with("alpha", 2e-4.into())).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn seeds_are_consecutive() {
        let c = ExperimentConfig::from_json_str(&with("seeds", 3.into())).unwrap();
        assert_eq!(c.seed_list(), vec![0, 1, 2]);
    }
}
