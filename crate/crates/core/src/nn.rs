//! Dense-network substrate: affine layers with tanh/sigmoid/identity
//! activations, inverted dropout, mean-squared error, Adam, and a
//! finite-difference gradient checker.
//!
//! Everything runs in `f64`. Gradient containers reuse the parameter types
//! (a `Dense` holding dW/db), so optimizers and checkers only need the
//! [`ParamSet`] view of flat tensors.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative written in terms of the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Flat view over the trainable tensors of a model (or of its gradient).
///
/// Implementors must yield tensors in the same order from both methods and
/// the order must be stable across calls.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameter vector", self.param_count(), flat.len())?;
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub(crate) fn slice_of(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

pub(crate) fn slice_of_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

/// Fully connected layer: `activation(W·x + b)` with `W` shaped `[out × in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Activations saved by [`DenseLayer::forward_batch`] for the backward pass.
#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Array2<f64>,
    output: Array2<f64>,
}

impl DenseCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl DenseLayer {
    /// Symmetric uniform init in ±√(6/(fan_in+fan_out)), zero bias.
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite init bound");
        let weights = Array2::from_shape_simple_fn((output, input), || dist.sample(rng));
        Self {
            weights,
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim(), self.activation)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Single-vector forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("dense layer input", self.input_dim(), input.len())?;
        let x = ndarray::ArrayView1::from(input);
        let z = self.weights.dot(&x) + &self.bias;
        Ok(z.iter().map(|&v| self.activation.apply(v)).collect())
    }

    /// Row-batched forward pass; `input` is `[batch × in]`.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<(Array2<f64>, DenseCache)> {
        check_dim("dense layer input", self.input_dim(), input.ncols())?;
        let mut out = input.dot(&self.weights.t());
        out += &self.bias;
        let act = self.activation;
        out.mapv_inplace(|z| act.apply(z));
        let cache = DenseCache {
            input: input.clone(),
            output: out.clone(),
        };
        Ok((out, cache))
    }

    /// Given dL/d(output), returns dL/d(input) and accumulates dW, db into `grad`.
    pub fn backward(&self, cache: &DenseCache, d_out: &Array2<f64>, grad: &mut DenseLayer) -> Array2<f64> {
        let act = self.activation;
        let mut dz = d_out.clone();
        dz.zip_mut_with(&cache.output, |d, &y| *d *= act.derivative_from_output(y));
        grad.weights += &dz.t().dot(&cache.input);
        grad.bias += &dz.sum_axis(Axis(0));
        dz.dot(&self.weights)
    }
}

impl ParamSet for DenseLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            slice_of(&self.weights),
            self.bias.as_slice().expect("contiguous bias"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice_of_mut(&mut self.weights),
            self.bias.as_slice_mut().expect("contiguous bias"),
        ]
    }
}

/// Whether a forward pass is part of training (dropout active) or inference.
pub enum Pass<'a> {
    Inference,
    Training(&'a mut Rng),
}

impl Pass<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Pass::Training(_))
    }
}

/// Inverted dropout. Inference is a plain identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate })
    }

    /// Draws a mask of 0 / (1/(1-rate)) entries and applies it in place.
    /// Returns `None` when nothing was dropped (rate 0 or inference).
    pub fn apply(&self, values: &mut Array2<f64>, pass: &mut Pass<'_>) -> Option<Array2<f64>> {
        let rng = match pass {
            Pass::Training(rng) if self.rate > 0.0 => rng,
            _ => return None,
        };
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask = Array2::from_shape_simple_fn(values.raw_dim(), || {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        });
        *values *= &mask;
        Some(mask)
    }
}

/// A chain of dense layers with dropout after every hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseStack {
    pub layers: Vec<DenseLayer>,
    pub dropout: DropoutSpec,
    /// Also apply dropout to the final layer's output.
    pub dropout_on_output: bool,
}

#[derive(Clone, Debug)]
pub struct StackCache {
    layers: Vec<(DenseCache, Option<Array2<f64>>)>,
}

impl DenseStack {
    /// Builds `sizes[0] → sizes[1] → … → sizes[n]`, `hidden` activation on all
    /// but the last layer which uses `output`.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        dropout: DropoutSpec,
        dropout_on_output: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "a stack needs at least one layer");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self {
            layers,
            dropout,
            dropout_on_output,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(DenseLayer::zeros_like).collect(),
            dropout: self.dropout,
            dropout_on_output: self.dropout_on_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty stack").output_dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(DenseLayer::output_dim));
        s
    }

    pub fn forward(&self, input: &Array2<f64>, pass: &mut Pass<'_>) -> Result<(Array2<f64>, StackCache)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (mut y, cache) = layer.forward_batch(&x)?;
            let mask = if i < last || self.dropout_on_output {
                self.dropout.apply(&mut y, pass)
            } else {
                None
            };
            caches.push((cache, mask));
            x = y;
        }
        Ok((x, StackCache { layers: caches }))
    }

    /// Forward pass that also returns every layer's (post-dropout) activation.
    pub fn activations(&self, input: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        let (_, cache) = self.forward(input, &mut Pass::Inference)?;
        Ok(cache.layers.into_iter().map(|(c, _)| c.output).collect())
    }

    pub fn backward(&self, cache: &StackCache, d_out: &Array2<f64>, grad: &mut DenseStack) -> Array2<f64> {
        let mut d = d_out.clone();
        for ((layer, (layer_cache, mask)), g) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grad.layers.iter_mut())
            .rev()
        {
            if let Some(mask) = mask {
                d *= mask;
            }
            d = layer.backward(layer_cache, &d, g);
        }
        d
    }
}

impl ParamSet for DenseStack {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// Mean of squared residuals over every element of the batch.
pub fn mse_loss(x: &Array2<f64>, x_hat: &Array2<f64>) -> Result<f64> {
    check_dim("mse rows", x.nrows(), x_hat.nrows())?;
    check_dim("mse cols", x.ncols(), x_hat.ncols())?;
    let n = x.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / n as f64)
}

/// dL/dx̂ of [`mse_loss`]; dL/dx is its negation.
pub fn mse_grad(x: &Array2<f64>, x_hat: &Array2<f64>) -> Array2<f64> {
    let n = x.len().max(1) as f64;
    (x_hat - x) * (2.0 / n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `params` using `grads`.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let grads = grads.tensors();
        if let Some((ti, _)) = grads
            .iter()
            .enumerate()
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numeric(format!(
                "non-finite gradient in tensor {ti} at optimizer step {}",
                self.t + 1
            )));
        }
        let mut params = params.tensors_mut();
        check_dim("adam tensor count", params.len(), grads.len())?;
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        check_dim("adam moment count", self.first.len(), grads.len())?;
        for (p, g) in params.iter().zip(&grads) {
            check_dim("adam tensor size", p.len(), g.len())?;
        }

        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (flat index, analytic, numeric) for every probed coordinate.
    pub probes: Vec<(usize, f64, f64)>,
}

/// Relative error with an absolute floor so near-zero gradients are not
/// dominated by finite-difference round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `loss` on
/// `probe_count` randomly chosen coordinates of `params`.
pub fn grad_check<P, F>(
    params: &P,
    analytic: &P,
    mut loss: F,
    probe_count: usize,
    h: f64,
    rng: &mut Rng,
) -> GradCheckReport
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let base = params.to_flat();
    let grad = analytic.to_flat();
    let n = base.len();
    let picks = sample(rng, n, probe_count.min(n));
    let mut probe = params.clone();
    let mut probes = Vec::with_capacity(picks.len());
    let mut max_rel_error = 0.0_f64;
    for idx in picks.iter() {
        let mut shifted = base.clone();
        shifted[idx] = base[idx] + h;
        probe.assign_flat(&shifted).expect("same layout");
        let plus = loss(&probe);
        shifted[idx] = base[idx] - h;
        probe.assign_flat(&shifted).expect("same layout");
        let minus = loss(&probe);
        let numeric = (plus - minus) / (2.0 * h);
        max_rel_error = max_rel_error.max(relative_error(grad[idx], numeric));
        probes.push((idx, grad[idx], numeric));
    }
    GradCheckReport {
        max_rel_error,
        probes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer {
            weights: array![[1.0, 0.0], [0.0, 1.0]],
            bias: array![0.0, 0.0],
            activation: Activation::Identity,
        };
        assert_eq!(layer.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_sigmoid_layer_is_half() {
        let layer = DenseLayer::zeros(3, 4, Activation::Sigmoid);
        assert_eq!(layer.forward(&[5.0, -2.0, 9.0]).unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn tanh_of_half() {
        let layer = DenseLayer {
            weights: array![[1.0]],
            bias: array![0.0],
            activation: Activation::Tanh,
        };
        // tanh(0.5) = (e - 1) / (e + 1) with e = exp(1)
        let e = 1.0_f64.exp();
        let expected = (e - 1.0) / (e + 1.0);
        let out = layer.forward(&[0.5]).unwrap()[0];
        assert_abs_diff_eq!(out, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(out, 0.46211716, epsilon = 1e-8);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let layer = DenseLayer::zeros(3, 1, Activation::Identity);
        assert!(matches!(layer.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn batch_forward_agrees_with_vector_forward() {
        let mut rng = stream(3, Stream::Init);
        let layer = DenseLayer::new(4, 3, Activation::Tanh, &mut rng);
        let x = array![[0.1, -0.2, 0.3, 0.9], [1.0, 2.0, -1.0, 0.0]];
        let (batch, _) = layer.forward_batch(&x).unwrap();
        for r in 0..2 {
            let single = layer.forward(x.row(r).as_slice().unwrap()).unwrap();
            for c in 0..3 {
                assert_abs_diff_eq!(batch[[r, c]], single[c], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn mse_examples() {
        let x = array![[0.0, 0.0]];
        assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(mse_loss(&x, &array![[1.0, 1.0]]).unwrap(), 1.0);
        let x = array![[1.0, 2.0, 3.0]];
        assert_abs_diff_eq!(
            mse_loss(&x, &array![[1.0, 2.0, 4.0]]).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(mse_loss(&x, &array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = DenseLayer {
            weights: array![[0.3, -0.7]],
            bias: array![0.1],
            activation: Activation::Identity,
        };
        let before = p.clone();
        let g = p.zeros_like();
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &g, 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = DenseLayer::zeros(1, 1, Activation::Identity);
        let mut g = p.zeros_like();
        g.weights[[0, 0]] = 1.0;
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &g, 0.001).unwrap();
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + eps)
        let expected = -0.001 * 1.0 / (1.0 + 1e-8);
        assert_abs_diff_eq!(p.weights[[0, 0]], expected, epsilon = 1e-15);
    }

    #[test]
    fn adam_descends_monotonically_under_constant_gradient() {
        let mut p = DenseLayer::zeros(1, 1, Activation::Identity);
        let mut g = p.zeros_like();
        g.weights[[0, 0]] = -2.5;
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &g, 0.01).unwrap();
        let first = p.weights[[0, 0]];
        adam.step(&mut p, &g, 0.01).unwrap();
        assert!(first > 0.0 && p.weights[[0, 0]] > first);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = DenseLayer::zeros(2, 1, Activation::Identity);
        let mut g = p.zeros_like();
        g.weights[[0, 1]] = f64::NAN;
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut p, &g, 0.01), Err(Error::Numeric(_))));
        assert_eq!(adam.steps(), 0);
        assert_eq!(p, DenseLayer::zeros(2, 1, Activation::Identity));
    }

    #[test]
    fn grad_check_on_quadratic() {
        let p = DenseLayer {
            weights: array![[3.0]],
            bias: array![0.0],
            activation: Activation::Identity,
        };
        let mut analytic = p.zeros_like();
        analytic.weights[[0, 0]] = 3.0;
        let mut rng = stream(0, Stream::Init);
        let report = grad_check(&p, &analytic, |q| 0.5 * q.weights[[0, 0]].powi(2), 2, 1e-5, &mut rng);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn stack_gradient_matches_finite_differences() {
        let mut rng = stream(11, Stream::Init);
        let stack = DenseStack::new(
            &[5, 4, 3],
            Activation::Tanh,
            Activation::Sigmoid,
            DropoutSpec::new(0.0).unwrap(),
            false,
            &mut rng,
        );
        let x = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
        let target = Array2::from_shape_fn((6, 3), |(i, j)| ((i + 2 * j) as f64 * 0.21).cos().abs());
        let loss = |s: &DenseStack| {
            let (y, _) = s.forward(&x, &mut Pass::Inference).unwrap();
            mse_loss(&target, &y).unwrap()
        };
        let (y, cache) = stack.forward(&x, &mut Pass::Inference).unwrap();
        let mut grad = stack.zeros_like();
        stack.backward(&cache, &mse_grad(&target, &y), &mut grad);
        let report = grad_check(&stack, &grad, loss, 30, 1e-5, &mut rng);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn dropout_identity_at_inference_and_rate_zero() {
        let mut v = Array2::from_elem((3, 3), 0.7);
        let spec = DropoutSpec::new(0.5).unwrap();
        assert!(spec.apply(&mut v, &mut Pass::Inference).is_none());
        let mut rng = stream(1, Stream::Dropout);
        assert!(DropoutSpec::new(0.0)
            .unwrap()
            .apply(&mut v, &mut Pass::Training(&mut rng))
            .is_none());
        assert!(v.iter().all(|&x| x == 0.7));
        assert!(DropoutSpec::new(1.0).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = stream(2, Stream::Dropout);
        let spec = DropoutSpec::new(0.2).unwrap();
        let draws = 20_000;
        let raw = 0.8;
        let mut v = Array2::from_elem((draws, 1), raw);
        spec.apply(&mut v, &mut Pass::Training(&mut rng)).unwrap();
        let mean = v.mean().unwrap();
        // Var of a rescaled Bernoulli(0.8) draw = raw² · rate/(1-rate).
        let se = (raw * raw * 0.2 / 0.8 / draws as f64).sqrt();
        assert!((mean - raw).abs() < 3.0 * se, "mean {mean} vs {raw} (se {se})");
    }

    #[test]
    fn bounded_activations_stay_open() {
        let mut rng = stream(4, Stream::Init);
        let layer = DenseLayer::new(8, 8, Activation::Sigmoid, &mut rng);
        let tanh = DenseLayer {
            activation: Activation::Tanh,
            ..layer.clone()
        };
        for i in 0..200 {
            let x: Vec<f64> = (0..8).map(|j| ((i * 8 + j) as f64).sin() * 4.0).collect();
            assert!(layer.forward(&x).unwrap().iter().all(|&y| y > 0.0 && y < 1.0));
            assert!(tanh.forward(&x).unwrap().iter().all(|&y| y > -1.0 && y < 1.0));
        }
    }
}
