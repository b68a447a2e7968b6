//! k-NN estimators over a fixed particle cloud.
//!
//! With `R_i` the distance from particle `i` to its k-th neighbor,
//! `V_i = R_i^p π^{p/2} / Γ(p/2 + 1)`, normalized importance weights `w_j`
//! and `W_i = Σ_{j ∈ N_i} w_j`:
//!
//! ```text
//! entropy     H   = −(1/N) Σ_i ln(k / (N V_i)) + ln k − ψ(k)
//! IW entropy  H_w = −Σ_i (W_i / k) ln(W_i / V_i) + ln k − ψ(k)
//! KL          D   = (1/N) Σ_i ln((k / N) / W_i)
//! ```
//!
//! `D` estimates KL(sampling ‖ target). The geometry (neighbor sets and
//! volumes) depends only on particle positions, so it is computed once and
//! reused while the weights change.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::knn::{ln_unit_ball, NeighborIndex, NeighborResult, PointSet};
use crate::math::{exp, ln};
use crate::policy::{GaussianPolicy, ParamVector};
use crate::sampler::ParticleDataset;
use crate::special::digamma;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    /// Radii below this are raised to it before taking logarithms.
    pub radius_floor: f64,
    /// Value reported by the KL estimate when a neighborhood carries no
    /// weight.
    pub kl_ceiling: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            radius_floor: 1e-12,
            kl_ceiling: 1e6,
        }
    }
}

/// Which inner derivative of `(W/k) ln(W/V)` the gradient uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GradientForm {
    /// `(ln(W_i/V_i) + 1) / k`, the exact derivative.
    #[default]
    Corrected,
    /// `(ln(W_i/V_i) + V_i) / k`; kept for comparison only, it does not
    /// match finite differences.
    AsPrinted,
}

/// Importance weights kept both as log-ratios and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    log_ratios: Vec<f64>,
    normalized: Vec<f64>,
}

impl WeightVector {
    /// All weights `1/N`.
    pub fn uniform(n: usize) -> Self {
        WeightVector {
            log_ratios: vec![0.0; n],
            normalized: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes unnormalized log-weights with a max shift.
    pub fn from_log_ratios(log_ratios: Vec<f64>) -> Result<Self> {
        if log_ratios.is_empty() {
            return Err(Error::param("weights", "empty"));
        }
        if let Some(i) = log_ratios.iter().position(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::NonFinite {
                context: "log importance ratio",
                particle: Some(i),
            });
        }
        let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::NonFinite {
                context: "log importance ratio",
                particle: Some(0),
            });
        }
        let mut normalized: Vec<f64> = log_ratios.iter().map(|&l| exp(l - max)).collect();
        let total: f64 = normalized.iter().sum();
        normalized.iter_mut().for_each(|w| *w /= total);
        Ok(WeightVector {
            log_ratios,
            normalized,
        })
    }

    /// Normalizes non-negative raw weights (e.g. density ratios).
    pub fn from_ratios(ratios: &[f64]) -> Result<Self> {
        if let Some(i) = ratios.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::NonFinite {
                context: "importance ratio",
                particle: Some(i),
            });
        }
        let logs = ratios.iter().map(|&r| if r > 0.0 { ln(r) } else { f64::NEG_INFINITY }).collect();
        WeightVector::from_log_ratios(logs)
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn log_ratios(&self) -> &[f64] {
        &self.log_ratios
    }

    /// Effective sample size 1 / Σ w².
    pub fn ess(&self) -> f64 {
        1.0 / self.normalized.iter().map(|w| w * w).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyReport {
    /// Estimate in nats.
    pub value: f64,
    pub k: usize,
    pub n: usize,
    pub ess: f64,
    pub mean_radius: f64,
    /// Radii that were raised to the floor.
    pub floored_radii: usize,
    /// Neighborhoods with `W_i = 0`, counted as zero contribution.
    pub empty_neighborhoods: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    /// True when some `W_i = 0` and the value was replaced by the ceiling.
    pub capped: bool,
}

/// Neighbor sets and log-volumes of a particle cloud.
#[derive(Debug, Clone)]
pub struct KnnGeometry {
    dim: usize,
    neighbors: NeighborResult,
    ln_volumes: Vec<f64>,
    floored: usize,
    mean_radius: f64,
    options: EstimatorOptions,
}

impl KnnGeometry {
    pub fn new(points: &PointSet, k: usize, options: EstimatorOptions) -> Result<Self> {
        if points.len() < k + 1 {
            return Err(Error::TooFewPoints {
                required: k + 1,
                actual: points.len(),
            });
        }
        let index = NeighborIndex::build(points.clone())?;
        Self::from_index(&index, k, options)
    }

    pub fn from_index(index: &NeighborIndex, k: usize, options: EstimatorOptions) -> Result<Self> {
        let neighbors = index.knn_all(k)?;
        Ok(Self::from_neighbors(neighbors, index.dim(), options))
    }

    pub fn from_neighbors(neighbors: NeighborResult, dim: usize, options: EstimatorOptions) -> Self {
        let p = dim as f64;
        let unit = ln_unit_ball(p);
        let mut floored = 0;
        let ln_volumes = neighbors
            .radii()
            .iter()
            .map(|&r| {
                let r = if r < options.radius_floor {
                    floored += 1;
                    options.radius_floor
                } else {
                    r
                };
                p * ln(r) + unit
            })
            .collect();
        let n = neighbors.len();
        let mean_radius = neighbors.radii().iter().sum::<f64>() / n as f64;
        KnnGeometry {
            dim,
            neighbors,
            ln_volumes,
            floored,
            mean_radius,
            options,
        }
    }

    pub fn k(&self) -> usize {
        self.neighbors.k()
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn neighbors(&self) -> &NeighborResult {
        &self.neighbors
    }

    pub fn ln_volumes(&self) -> &[f64] {
        &self.ln_volumes
    }

    pub fn options(&self) -> &EstimatorOptions {
        &self.options
    }

    fn bias_correction(&self) -> f64 {
        let k = self.k() as f64;
        ln(k) - digamma(k)
    }

    fn check_weights(&self, w: &WeightVector) -> Result<()> {
        if w.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: w.len(),
            });
        }
        Ok(())
    }

    /// Unweighted k-NN entropy estimate.
    pub fn entropy(&self) -> EntropyReport {
        let n = self.len() as f64;
        let ln_k_over_n = ln(self.k() as f64 / n);
        let sum: f64 = self.ln_volumes.iter().map(|lv| ln_k_over_n - lv).sum();
        EntropyReport {
            value: -sum / n + self.bias_correction(),
            k: self.k(),
            n: self.len(),
            ess: n,
            mean_radius: self.mean_radius,
            floored_radii: self.floored,
            empty_neighborhoods: 0,
        }
    }

    /// `W_i` for every particle.
    pub fn neighborhood_weights(&self, w: &WeightVector) -> Vec<f64> {
        let k = self.k();
        let wn = w.normalized();
        self.neighbors
            .indices()
            .chunks_exact(k)
            .map(|nb| nb.iter().map(|&j| wn[j]).sum())
            .collect()
    }

    /// Importance-weighted entropy estimate of the target distribution.
    pub fn iw_entropy(&self, w: &WeightVector) -> Result<EntropyReport> {
        self.check_weights(w)?;
        let k = self.k() as f64;
        let mut empty = 0;
        let mut sum = 0.0;
        for (big_w, lv) in self.neighborhood_weights(w).into_iter().zip(&self.ln_volumes) {
            if big_w > 0.0 {
                sum += (big_w / k) * (ln(big_w) - lv);
            } else {
                empty += 1;
            }
        }
        Ok(EntropyReport {
            value: -sum + self.bias_correction(),
            k: self.k(),
            n: self.len(),
            ess: w.ess(),
            mean_radius: self.mean_radius,
            floored_radii: self.floored,
            empty_neighborhoods: empty,
        })
    }

    /// KL(sampling ‖ target) estimate.
    pub fn kl(&self, w: &WeightVector) -> Result<KlEstimate> {
        self.check_weights(w)?;
        let n = self.len() as f64;
        let ln_k_over_n = ln(self.k() as f64 / n);
        let mut sum = 0.0;
        for big_w in self.neighborhood_weights(w) {
            if big_w <= 0.0 {
                return Ok(KlEstimate {
                    value: self.options.kl_ceiling,
                    capped: true,
                });
            }
            sum += ln_k_over_n - ln(big_w);
        }
        let value = sum / n;
        Ok(KlEstimate {
            value: value.min(self.options.kl_ceiling),
            capped: value > self.options.kl_ceiling,
        })
    }

    /// Coefficients `β_j` with `∇H_w = Σ_j β_j ∇ ln w̄_j`, where `w̄_j` is the
    /// unnormalized importance ratio of particle `j`.
    ///
    /// From `∇W_i = Σ_{j∈N_i} w_j (∇ln w̄_j − Σ_n w_n ∇ln w̄_n)`: with
    /// `u_i = −(ln(W_i/V_i) + 1)/k` and `c_j = Σ_{i : j∈N_i} u_i`,
    /// `β_j = w_j (c_j − Σ_n w_n c_n)`.
    pub fn iw_entropy_coefficients(&self, w: &WeightVector, form: GradientForm) -> Result<Vec<f64>> {
        self.check_weights(w)?;
        let k = self.k() as f64;
        let n = self.len();
        let mut c = vec![0.0; n];
        let big_ws = self.neighborhood_weights(w);
        for (i, (&big_w, &lv)) in big_ws.iter().zip(&self.ln_volumes).enumerate() {
            if big_w <= 0.0 {
                // every w_j in the neighborhood is zero, so ∇W_i = 0
                continue;
            }
            let inner = match form {
                GradientForm::Corrected => ln(big_w) - lv + 1.0,
                GradientForm::AsPrinted => ln(big_w) - lv + exp(lv),
            };
            let u = -inner / k;
            for &j in self.neighbors.neighbors(i) {
                c[j] += u;
            }
        }
        let wn = w.normalized();
        let c_bar: f64 = wn.iter().zip(&c).map(|(w, c)| w * c).sum();
        Ok(wn.iter().zip(&c).map(|(w, c)| w * (c - c_bar)).collect())
    }
}

/// Unweighted k-NN entropy of a point set.
pub fn entropy_knn(points: &PointSet, k: usize) -> Result<EntropyReport> {
    Ok(KnnGeometry::new(points, k, EstimatorOptions::default())?.entropy())
}

/// Importance-weighted k-NN entropy of a point set.
pub fn entropy_knn_iw(points: &PointSet, weights: &WeightVector, k: usize) -> Result<EntropyReport> {
    KnnGeometry::new(points, k, EstimatorOptions::default())?.iw_entropy(weights)
}

/// Importance-weighted k-NN KL estimate.
pub fn kl_knn_iw(points: &PointSet, weights: &WeightVector, k: usize) -> Result<KlEstimate> {
    KnnGeometry::new(points, k, EstimatorOptions::default())?.kl(weights)
}

/// Gradient of the IW entropy of `dataset` with respect to the target
/// parameters `theta_prime`, sampling parameters `theta0`, with positions,
/// neighborhoods and radii held fixed.
pub fn iw_entropy_gradient(
    dataset: &ParticleDataset,
    geometry: &KnnGeometry,
    policy: &GaussianPolicy,
    theta_prime: &ParamVector,
    theta0: &ParamVector,
    form: GradientForm,
) -> Result<ParamVector> {
    let base = dataset.step_log_probs(policy, theta0)?;
    let target = dataset.step_forward(policy, theta_prime)?;
    let weights = dataset.weights_from_step_log_probs(target.log_probs(), base.log_probs())?;
    let beta = geometry.iw_entropy_coefficients(&weights, form)?;
    let coeffs = dataset.step_coefficients(&beta);
    let grad = policy.weighted_score(theta_prime, &target, &coeffs)?;
    if !grad.is_finite() {
        let particle = dataset.first_non_finite_particle(target.log_probs());
        return Err(Error::NonFinite {
            context: "entropy gradient",
            particle,
        });
    }
    Ok(grad)
}
