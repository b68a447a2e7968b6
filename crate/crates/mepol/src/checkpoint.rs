//! Policy checkpoints.
//!
//! JSON document:
//!
//! ```text
//! format       "mepol-checkpoint"
//! version      1
//! spec         PolicySpec (input_dim, output_dim, hidden_sizes, activation, init_logstd)
//! layout       [{name, offset, len, shape}], covering params in order
//! params       flat f64 array in the canonical layout
//! seed         run seed
//! epoch        completed epochs
//! env_samples  environment steps consumed so far
//! adam         optional Adam moments {m, v, t}
//! ```
//!
//! Floats are written with shortest round-trip formatting, so loading gives
//! back the exact parameters.

use std::path::Path;

use mepol_core::optimizer::AdamState;
use mepol_core::policy::{GaussianPolicy, ParamVector, PolicySpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const FORMAT: &str = "mepol-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

/// Named blocks of the canonical parameter layout.
pub fn layout(spec: &PolicySpec) -> Vec<LayoutEntry> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (l, (fan_in, fan_out)) in spec.layer_shapes().into_iter().enumerate() {
        out.push(LayoutEntry {
            name: format!("layer{l}.weight"),
            offset,
            len: fan_in * fan_out,
            shape: vec![fan_in, fan_out],
        });
        offset += fan_in * fan_out;
        out.push(LayoutEntry {
            name: format!("layer{l}.bias"),
            offset,
            len: fan_out,
            shape: vec![fan_out],
        });
        offset += fan_out;
    }
    out.push(LayoutEntry {
        name: "logstd".into(),
        offset,
        len: spec.output_dim,
        shape: vec![spec.output_dim],
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: PolicySpec,
    pub layout: Vec<LayoutEntry>,
    pub params: ParamVector,
    pub seed: u64,
    pub epoch: usize,
    pub env_samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(spec: PolicySpec, params: ParamVector, seed: u64, epoch: usize, env_samples: u64) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            layout: layout(&spec),
            spec,
            params,
            seed,
            epoch,
            env_samples,
            adam: None,
        }
    }

    pub fn with_adam(mut self, adam: &AdamState) -> Self {
        if adam.t > 0 {
            self.adam = Some(adam.clone());
        }
        self
    }

    pub fn policy(&self) -> Result<GaussianPolicy> {
        Ok(GaussianPolicy::new(self.spec.clone())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoint serializes")
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| HarnessError::Checkpoint {
            path: origin.to_path_buf(),
            reason,
        };
        let c: Checkpoint = serde_json::from_slice(bytes).map_err(|e| bad(e.to_string()))?;
        if c.format != FORMAT {
            return Err(bad(format!("unknown format {:?}", c.format)));
        }
        if c.version != VERSION {
            return Err(bad(format!("unsupported version {}", c.version)));
        }
        c.spec.validate()?;
        if c.layout != layout(&c.spec) {
            return Err(bad("layout does not match the policy spec".into()));
        }
        if c.params.len() != c.spec.num_params() {
            return Err(bad(format!(
                "{} parameters, spec needs {}",
                c.params.len(),
                c.spec.num_params()
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mepol_core::rng::stream_rng;

    fn sample() -> Checkpoint {
        let spec = PolicySpec::new(2, 2, vec![5, 3]).with_init_logstd(-0.25);
        let policy = GaussianPolicy::new(spec.clone()).unwrap();
        let mut params = policy.init_params(&mut stream_rng(3, 0));
        params[0] = 0.1 + 0.2; // not exactly representable as a short decimal
        params[1] = f64::MIN_POSITIVE;
        params[2] = -1.0e300;
        Checkpoint::new(spec, params, 42, 7, 1234)
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample().with_adam(&AdamState {
            m: vec![1e-17; 4],
            v: vec![3.0; 4],
            t: 9,
        });
        let back = Checkpoint::from_bytes(&c.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.params.iter().zip(c.params.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn layout_covers_every_parameter() {
        let c = sample();
        let total: usize = c.layout.iter().map(|e| e.len).sum();
        assert_eq!(total, c.params.len());
        for w in c.layout.windows(2) {
            assert_eq!(w[0].offset + w[0].len, w[1].offset);
        }
        assert_eq!(c.layout.last().unwrap().offset, c.policy().unwrap().logstd_offset());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let c = sample();
        let mut v: serde_json::Value = serde_json::from_slice(&c.to_bytes()).unwrap();
        v["params"].as_array_mut().unwrap().pop();
        let bytes = serde_json::to_vec(&v).unwrap();
        assert!(Checkpoint::from_bytes(&bytes, Path::new("x")).is_err());

        let mut v: serde_json::Value = serde_json::from_slice(&c.to_bytes()).unwrap();
        v["version"] = 99.into();
        assert!(Checkpoint::from_bytes(&serde_json::to_vec(&v).unwrap(), Path::new("x")).is_err());
        assert!(Checkpoint::from_bytes(b"not json", Path::new("x")).is_err());
    }

    #[test]
    fn plain_ascent_stores_no_moments() {
        assert!(sample().with_adam(&AdamState::default()).adam.is_none());
    }
}
