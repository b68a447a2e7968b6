//! Task-agnostic exploration by maximizing a k-nearest-neighbor estimate of
//! the entropy of the average state distribution over a finite horizon.
//!
//! The crate is `no_std` (with `alloc`). The default `std` feature only turns
//! on runtime CPU feature detection in the matrix kernels and `std` error
//! impls; results are identical either way.
//!
//! Layout:
//! - [`knn`]: exact kd-tree k-NN search and hypersphere volumes
//! - [`estimators`]: k-NN entropy, importance-weighted entropy, KL estimate
//!   and the analytic gradient of the weighted entropy
//! - [`policy`]: diagonal Gaussian MLP policy with batched reverse-mode scores
//! - [`env`]: four-room GridWorld, walled MountainCar, N-D box GridWorld
//! - [`sampler`]: rollouts into particle datasets and importance weights
//! - [`optimizer`]: the epoch loop with the trust-region inner optimizer
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod env;
pub mod error;
pub mod estimators;
pub mod knn;
mod math;
pub mod optimizer;
pub mod policy;
pub mod rng;
pub mod sampler;
pub mod special;

pub use error::{Error, Result};
pub use estimators::{EntropyReport, KlEstimate, KnnGeometry, WeightVector};
pub use knn::{NeighborIndex, NeighborResult, PointSet};
pub use optimizer::{train, Clock, EpochRecord, MepolConfig, TrainLog, Trainer, UpdateRule};
pub use policy::{Activation, GaussianPolicy, ParamVector, PolicySpec};
pub use sampler::{collect, ParticleDataset, Trajectory};
