//! Experiment harness around `mepol-core`: JSON configs and presets,
//! checkpoints, CSV artifacts with provenance sidecars, multi-seed training
//! and the evaluation metrics used to judge exploration policies.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod stats;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};

/// Preset configs shipped with the crate, by name.
pub mod presets {
    pub const GRIDWORLD: &str = include_str!("../presets/gridworld.json");
    pub const MOUNTAINCAR: &str = include_str!("../presets/mountaincar.json");
    pub const NDGRID: &str = include_str!("../presets/ndgrid.json");

    pub fn get(name: &str) -> Option<&'static str> {
        match name {
            "gridworld" => Some(GRIDWORLD),
            "mountaincar" => Some(MOUNTAINCAR),
            "ndgrid" => Some(NDGRID),
            _ => None,
        }
    }
}
