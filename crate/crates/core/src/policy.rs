//! Diagonal Gaussian policy: a fully connected network produces the
//! state-dependent mean, a free vector holds the state-independent log-std.
//!
//! Parameter layout (canonical, used by checkpoints): for each layer in
//! order, the `in × out` weight matrix row-major followed by the `out` bias
//! entries; after the last layer, `action_dim` log-std entries.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::knn::PointSet;
use crate::math::{exp, sqrt, tanh, LN_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => tanh(x),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn init_gain(self) -> f64 {
        match self {
            Activation::Relu => core::f64::consts::SQRT_2,
            Activation::Tanh => 5.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicySpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub init_logstd: f64,
}

impl PolicySpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden_sizes: Vec<usize>) -> Self {
        PolicySpec {
            input_dim,
            output_dim,
            hidden_sizes,
            activation: Activation::Relu,
            init_logstd: 0.0,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_init_logstd(mut self, init_logstd: f64) -> Self {
        self.init_logstd = init_logstd;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::param("policy", "input and output dims must be >= 1"));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::param(
                "hidden_sizes",
                "must be non-empty with every width >= 1",
            ));
        }
        if !self.init_logstd.is_finite() {
            return Err(Error::param("init_logstd", "must be finite"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_sizes);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum::<usize>()
            + self.output_dim
    }
}

/// Flat vector of every trainable parameter, in the canonical layout.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.0.iter().map(|x| x * x).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

/// Cached activations of a batched forward pass, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct BatchForward {
    batch: usize,
    /// Input to each layer; `layer_inputs[0]` is the state batch.
    layer_inputs: Vec<Vec<f64>>,
    mean: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
}

impl BatchForward {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

/// Options for [`GaussianPolicy::zero_mean_pretrain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainOptions {
    pub learning_rate: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            learning_rate: 1e-3,
            tolerance: 1e-2,
            max_iters: 2_000,
        }
    }
}

/// Stateless evaluator for a [`PolicySpec`]; parameters are passed in.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    spec: PolicySpec,
    layers: Vec<LayerOffsets>,
    logstd_offset: usize,
    num_params: usize,
}

impl GaussianPolicy {
    pub fn new(spec: PolicySpec) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in spec.layer_shapes() {
            layers.push(LayerOffsets {
                fan_in,
                fan_out,
                weights: offset,
                bias: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        }
        let logstd_offset = offset;
        let num_params = offset + spec.output_dim;
        Ok(GaussianPolicy {
            spec,
            layers,
            logstd_offset,
            num_params,
        })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn state_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Offset of the log-std block inside a [`ParamVector`].
    pub fn logstd_offset(&self) -> usize {
        self.logstd_offset
    }

    pub fn logstd<'a>(&self, params: &'a ParamVector) -> &'a [f64] {
        &params[self.logstd_offset..]
    }

    /// Orthogonal initialization (scaled by the activation gain, 0.01 on the
    /// output layer), zero biases, log-std set to `init_logstd`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut params = ParamVector::zeros(self.num_params);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let gain = if l == last {
                0.01
            } else {
                self.spec.activation.init_gain()
            };
            let w = orthogonal(layer.fan_in, layer.fan_out, gain, rng);
            params[layer.weights..layer.bias].copy_from_slice(&w);
        }
        for v in &mut params[self.logstd_offset..] {
            *v = self.spec.init_logstd;
        }
        params
    }

    fn check_len(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.num_params {
            return Err(Error::DimensionMismatch {
                expected: self.num_params,
                actual: params.len(),
            });
        }
        Ok(())
    }

    /// Network mean for a batch of states (`B × input_dim`, row-major).
    pub fn mean_batch(&self, params: &ParamVector, states: &[f64]) -> Result<Vec<f64>> {
        self.check_len(params)?;
        let batch = self.batch_size(states)?;
        let mut inputs = Vec::new();
        Ok(self.run_network(params, states, batch, &mut inputs, false))
    }

    pub fn mean(&self, params: &ParamVector, state: &[f64]) -> Result<Vec<f64>> {
        self.mean_batch(params, state)
    }

    fn batch_size(&self, states: &[f64]) -> Result<usize> {
        let d = self.spec.input_dim;
        if states.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: states.len() % d,
            });
        }
        Ok(states.len() / d)
    }

    fn run_network(
        &self,
        params: &ParamVector,
        states: &[f64],
        batch: usize,
        cache: &mut Vec<Vec<f64>>,
        keep: bool,
    ) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut current: Vec<f64> = states.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; batch * layer.fan_out];
            let bias = &params[layer.bias..layer.bias + layer.fan_out];
            for row in out.chunks_exact_mut(layer.fan_out) {
                row.copy_from_slice(bias);
            }
            gemm(
                batch,
                layer.fan_in,
                layer.fan_out,
                current.as_ptr(),
                layer.fan_in as isize,
                1,
                params[layer.weights..].as_ptr(),
                layer.fan_out as isize,
                1,
                1.0,
                &mut out,
            );
            if l != last {
                let act = self.spec.activation;
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            let input = core::mem::replace(&mut current, out);
            if keep {
                cache.push(input);
            }
        }
        current
    }

    /// Batched forward pass computing log π(a_b | s_b) and caching what the
    /// backward pass needs.
    pub fn forward_batch(
        &self,
        params: &ParamVector,
        states: &[f64],
        actions: &[f64],
    ) -> Result<BatchForward> {
        self.check_len(params)?;
        let batch = self.batch_size(states)?;
        let adim = self.spec.output_dim;
        if actions.len() != batch * adim {
            return Err(Error::DimensionMismatch {
                expected: batch * adim,
                actual: actions.len(),
            });
        }
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mean = self.run_network(params, states, batch, &mut layer_inputs, true);
        let logstd = self.logstd(params);
        let norm: f64 = logstd.iter().sum::<f64>() + 0.5 * adim as f64 * LN_2PI;
        let inv_std: Vec<f64> = logstd.iter().map(|&s| exp(-s)).collect();
        let log_probs = mean
            .chunks_exact(adim)
            .zip(actions.chunks_exact(adim))
            .map(|(mu, a)| {
                let mut quad = 0.0;
                for d in 0..adim {
                    let z = (a[d] - mu[d]) * inv_std[d];
                    quad += z * z;
                }
                -0.5 * quad - norm
            })
            .collect();
        Ok(BatchForward {
            batch,
            layer_inputs,
            mean,
            actions: actions.to_vec(),
            log_probs,
        })
    }

    /// Σ_b coeffs[b] · ∇_θ log π(a_b | s_b), by reverse-mode through the
    /// cached forward pass.
    pub fn weighted_score(
        &self,
        params: &ParamVector,
        fwd: &BatchForward,
        coeffs: &[f64],
    ) -> Result<ParamVector> {
        self.check_len(params)?;
        if coeffs.len() != fwd.batch {
            return Err(Error::DimensionMismatch {
                expected: fwd.batch,
                actual: coeffs.len(),
            });
        }
        let adim = self.spec.output_dim;
        let logstd = self.logstd(params);
        let inv_var: Vec<f64> = logstd.iter().map(|&s| exp(-2.0 * s)).collect();
        let mut grad = ParamVector::zeros(self.num_params);
        let mut g_mean = vec![0.0; fwd.batch * adim];
        for b in 0..fwd.batch {
            let c = coeffs[b];
            for d in 0..adim {
                let diff = fwd.actions[b * adim + d] - fwd.mean[b * adim + d];
                g_mean[b * adim + d] = c * diff * inv_var[d];
                // d/dlogσ of −½z² − logσ is z² − 1
                grad[self.logstd_offset + d] += c * (diff * diff * inv_var[d] - 1.0);
            }
        }
        self.backprop(params, fwd, g_mean, &mut grad);
        Ok(grad)
    }

    /// Backpropagates dL/dμ through the network into `grad`.
    fn backprop(
        &self,
        params: &ParamVector,
        fwd: &BatchForward,
        mut upstream: Vec<f64>,
        grad: &mut ParamVector,
    ) {
        let batch = fwd.batch;
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let input = &fwd.layer_inputs[l];
            // dW = inputᵀ · upstream
            gemm(
                layer.fan_in,
                batch,
                layer.fan_out,
                input.as_ptr(),
                1,
                layer.fan_in as isize,
                upstream.as_ptr(),
                layer.fan_out as isize,
                1,
                0.0,
                &mut grad[layer.weights..layer.bias],
            );
            let db = &mut grad[layer.bias..layer.bias + layer.fan_out];
            for row in upstream.chunks_exact(layer.fan_out) {
                for (acc, g) in db.iter_mut().zip(row) {
                    *acc += g;
                }
            }
            if l == 0 {
                break;
            }
            // upstream · Wᵀ, then through the activation of the previous layer
            let mut down = vec![0.0; batch * layer.fan_in];
            gemm(
                batch,
                layer.fan_out,
                layer.fan_in,
                upstream.as_ptr(),
                layer.fan_out as isize,
                1,
                params[layer.weights..].as_ptr(),
                1,
                layer.fan_out as isize,
                0.0,
                &mut down,
            );
            let act = self.spec.activation;
            for (g, &y) in down.iter_mut().zip(input.iter()) {
                *g *= act.derivative_from_output(y);
            }
            upstream = down;
        }
    }

    /// Samples `a = μ(s) + σ ⊙ z` with `z` standard normal. Unclipped.
    pub fn act<R: Rng + ?Sized>(
        &self,
        params: &ParamVector,
        state: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if state.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                actual: state.len(),
            });
        }
        let mut mean = self.mean(params, state)?;
        self.perturb(params, &mut mean, rng)?;
        Ok(mean)
    }

    /// Adds Gaussian noise in place to a precomputed mean.
    pub(crate) fn perturb<R: Rng + ?Sized>(
        &self,
        params: &ParamVector,
        mean: &mut [f64],
        rng: &mut R,
    ) -> Result<()> {
        for (m, &s) in mean.iter_mut().zip(self.logstd(params)) {
            if !m.is_finite() {
                return Err(Error::NonFinite {
                    context: "policy mean",
                    particle: None,
                });
            }
            let z: f64 = rng.sample(StandardNormal);
            *m += exp(s) * z;
        }
        Ok(())
    }

    pub fn log_prob(&self, params: &ParamVector, state: &[f64], action: &[f64]) -> Result<f64> {
        let fwd = self.forward_batch(params, state, action)?;
        let lp = fwd.log_probs[0];
        if !lp.is_finite() {
            return Err(Error::NonFinite {
                context: "log_prob",
                particle: None,
            });
        }
        Ok(lp)
    }

    pub fn log_prob_grad(
        &self,
        params: &ParamVector,
        state: &[f64],
        action: &[f64],
    ) -> Result<ParamVector> {
        let fwd = self.forward_batch(params, state, action)?;
        self.weighted_score(params, &fwd, &[1.0])
    }

    /// Regresses μ(s) towards zero on the given states with Adam steps on
    /// ½·mean‖μ‖². Stops once mean‖μ(s)‖ ≤ tolerance; log-std entries are
    /// left untouched.
    pub fn zero_mean_pretrain(
        &self,
        params: &ParamVector,
        states: &PointSet,
        opts: PretrainOptions,
    ) -> Result<ParamVector> {
        self.check_len(params)?;
        if states.is_empty() {
            return Err(Error::param("states", "empty state sample"));
        }
        if states.dim() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                actual: states.dim(),
            });
        }
        let adim = self.spec.output_dim;
        let batch = states.len();
        let mut params = params.clone();
        let zeros = vec![0.0; batch * adim];
        let (b1, b2) = (0.9f64, 0.999f64);
        let (mut c1, mut c2) = (1.0, 1.0);
        let mut m = vec![0.0; self.num_params];
        let mut v = vec![0.0; self.num_params];
        for iter in 0..=opts.max_iters {
            let fwd = self.forward_batch(&params, states.coords(), &zeros)?;
            let residual = fwd
                .mean
                .chunks_exact(adim)
                .map(|m| sqrt(m.iter().map(|x| x * x).sum()))
                .sum::<f64>()
                / batch as f64;
            if !residual.is_finite() {
                return Err(Error::PretrainDiverged {
                    iterations: iter,
                    residual,
                });
            }
            if residual <= opts.tolerance {
                return Ok(params);
            }
            if iter == opts.max_iters {
                return Err(Error::PretrainDiverged {
                    iterations: iter,
                    residual,
                });
            }
            let scale = 1.0 / batch as f64;
            let upstream: Vec<f64> = fwd.mean.iter().map(|m| m * scale).collect();
            let mut grad = ParamVector::zeros(self.num_params);
            self.backprop(&params, &fwd, upstream, &mut grad);
            c1 *= b1;
            c2 *= b2;
            for i in 0..self.logstd_offset {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                params[i] -= opts.learning_rate * (m[i] / (1.0 - c1)) / (sqrt(v[i] / (1.0 - c2)) + 1e-8);
            }
        }
        unreachable!("loop returns on its last iteration")
    }
}

/// C = beta·C + A·B for row/column-strided A (m×k) and B (k×n); C is
/// contiguous row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: *const f64,
    rsa: isize,
    csa: isize,
    b: *const f64,
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass pointers into slices that hold at least the
    // strided m×k and k×n extents, and `c` holds m×n contiguous elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a,
            rsa,
            csa,
            b,
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `fan_in × fan_out` matrix with orthonormal rows or columns (whichever
/// set is smaller), scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (count, len) = if fan_in <= fan_out {
        (fan_in, fan_out)
    } else {
        (fan_out, fan_in)
    };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(count);
    while vecs.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        // modified Gram-Schmidt, two passes for stability
        for _ in 0..2 {
            for u in &vecs {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = sqrt(v.iter().map(|x| x * x).sum());
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        vecs.push(v);
    }
    let mut out = vec![0.0; fan_in * fan_out];
    for (r, v) in vecs.iter().enumerate() {
        for (c, &x) in v.iter().enumerate() {
            let (i, j) = if fan_in <= fan_out { (r, c) } else { (c, r) };
            out[i * fan_out + j] = gain * x;
        }
    }
    out
}

/// Diagonal-Gaussian log-density, for reference checks.
pub fn gaussian_log_density(mean: &[f64], logstd: &[f64], x: &[f64]) -> f64 {
    let mut acc = -0.5 * mean.len() as f64 * LN_2PI;
    for ((m, s), v) in mean.iter().zip(logstd).zip(x) {
        let z = (v - m) / exp(*s);
        acc += -0.5 * z * z - s;
    }
    acc
}
