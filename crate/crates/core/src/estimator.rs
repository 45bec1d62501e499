//! Density-estimation network over latent vectors.
//!
//! A two-layer MLP `p → ⌊p/2⌋ → 1` (tanh, then sigmoid) approximates the
//! posterior that a latent vector came from nominal data rather than from the
//! negative-sample distribution. It is trained with the contrastive loss
//!
//! ```text
//! L = mean_i [ −γ·ln f(x_e^i) − ln(1 − (1/K)·Σ_k f(z_e^{i,k} + n_k)) ]
//! ```
//!
//! where `n_k ~ N(0, I)` is optional secondary noise on each negative latent.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{Activation, DenseStack, DropoutSpec, ParamSet, Pass};
use crate::rng::Rng;

/// Floor applied to both log arguments of the loss.
pub const LOG_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub dropout: f64,
    /// Hidden width; `None` means `max(1, ⌊p/2⌋)`.
    pub hidden: Option<usize>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            dropout: 0.1,
            hidden: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub mlp: DenseStack,
}

impl Estimator {
    pub fn new(latent_dim: usize, config: &EstimatorConfig, rng: &mut Rng) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::config("latent dimension must be positive"));
        }
        let hidden = config.hidden.unwrap_or((latent_dim / 2).max(1));
        let mlp = DenseStack::new(
            &[latent_dim, hidden, 1],
            Activation::Tanh,
            Activation::Sigmoid,
            DropoutSpec::new(config.dropout)?,
            false,
            rng,
        );
        Ok(Self { mlp })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mlp: self.mlp.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// f(x_e) for one latent vector, inference mode.
    pub fn likelihood(&self, latent: &[f64]) -> Result<f64> {
        check_dim("estimator input", self.input_dim(), latent.len())?;
        let x = Array2::from_shape_vec((1, latent.len()), latent.to_vec()).expect("row vector");
        Ok(self.likelihood_batch(&x)?[0])
    }

    pub fn likelihood_batch(&self, latents: &Array2<f64>) -> Result<Vec<f64>> {
        check_dim("estimator input", self.input_dim(), latents.ncols())?;
        let (out, _) = self.mlp.forward(latents, &mut Pass::Inference)?;
        Ok(out.column(0).to_vec())
    }

    /// Hidden-layer activations, used for latent-space visualisation.
    pub fn penultimate(&self, latents: &Array2<f64>) -> Result<Array2<f64>> {
        check_dim("estimator input", self.input_dim(), latents.ncols())?;
        let mut acts = self.mlp.activations(latents)?;
        acts.pop();
        Ok(acts.pop().unwrap_or_else(|| latents.clone()))
    }

    /// Loss and gradients for one batch.
    ///
    /// `neg_latents` holds `K` rows per positive, grouped record-major (rows
    /// `i·K .. (i+1)·K` belong to positive `i`). Returns the gradient w.r.t.
    /// the estimator's parameters (accumulated into `grad`) and w.r.t. both
    /// latent inputs.
    pub fn loss_and_grad(
        &self,
        pos_latents: &Array2<f64>,
        neg_latents: &Array2<f64>,
        gamma: f64,
        pass: &mut Pass<'_>,
        grad: &mut Estimator,
    ) -> Result<EstimatorStep> {
        let b = pos_latents.nrows();
        if b == 0 || neg_latents.nrows() % b != 0 || neg_latents.nrows() == 0 {
            return Err(Error::Dimension {
                context: "negatives per positive",
                expected: b,
                actual: neg_latents.nrows(),
            });
        }
        let k = neg_latents.nrows() / b;
        let (f_pos, pos_cache) = self.mlp.forward(pos_latents, pass)?;
        let (f_neg, neg_cache) = self.mlp.forward(neg_latents, pass)?;
        let f_pos_v: Vec<f64> = f_pos.column(0).to_vec();
        let f_neg_m = Array2::from_shape_vec((b, k), f_neg.column(0).to_vec()).expect("b·k outputs");
        let loss = estimator_loss(&f_pos_v, &f_neg_m, gamma)?;

        let d_pos = Array2::from_shape_vec((b, 1), loss.d_pos.to_vec()).expect("column");
        let d_neg = Array2::from_shape_vec((b * k, 1), loss.d_neg.iter().copied().collect()).expect("column");
        let d_pos_latent = self.mlp.backward(&pos_cache, &d_pos, &mut grad.mlp);
        let d_neg_latent = self.mlp.backward(&neg_cache, &d_neg, &mut grad.mlp);
        Ok(EstimatorStep {
            loss: loss.value,
            mean_f_pos: f_pos_v.iter().sum::<f64>() / b as f64,
            mean_f_neg: f_neg_m.mean().unwrap_or(0.0),
            d_pos_latent,
            d_neg_latent,
        })
    }

    /// Loss only, for evaluation and finite-difference checks.
    pub fn loss(&self, pos_latents: &Array2<f64>, neg_latents: &Array2<f64>, gamma: f64) -> Result<f64> {
        let b = pos_latents.nrows();
        let k = neg_latents.nrows() / b.max(1);
        let f_pos = self.likelihood_batch(pos_latents)?;
        let f_neg = Array2::from_shape_vec((b, k), self.likelihood_batch(neg_latents)?)
            .map_err(|_| Error::Dimension {
                context: "negatives per positive",
                expected: b,
                actual: neg_latents.nrows(),
            })?;
        Ok(estimator_loss(&f_pos, &f_neg, gamma)?.value)
    }
}

impl ParamSet for Estimator {
    fn tensors(&self) -> Vec<&[f64]> {
        self.mlp.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.mlp.tensors_mut()
    }
}

#[derive(Clone, Debug)]
pub struct EstimatorStep {
    pub loss: f64,
    pub mean_f_pos: f64,
    pub mean_f_neg: f64,
    pub d_pos_latent: Array2<f64>,
    pub d_neg_latent: Array2<f64>,
}

/// Loss value plus its partials w.r.t. every `f` output.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorLoss {
    pub value: f64,
    pub d_pos: Array1<f64>,
    pub d_neg: Array2<f64>,
}

/// Contrastive loss from posterior values: `f_pos` has one entry per
/// record, `f_neg` is `[records × K]`. Batch loss is the mean over records.
pub fn estimator_loss(f_pos: &[f64], f_neg: &Array2<f64>, gamma: f64) -> Result<EstimatorLoss> {
    let b = f_pos.len();
    check_dim("negative groups", b, f_neg.nrows())?;
    if b == 0 || f_neg.ncols() == 0 {
        return Err(Error::config("estimator loss needs at least one record and one negative"));
    }
    let k = f_neg.ncols() as f64;
    let bf = b as f64;
    let mut value = 0.0;
    let mut d_pos = Array1::zeros(b);
    let mut d_neg = Array2::zeros(f_neg.raw_dim());
    for i in 0..b {
        let fp = f_pos[i];
        let mean_neg = f_neg.row(i).sum() / k;
        let pos_arg = fp.max(LOG_CLAMP);
        let neg_arg = (1.0 - mean_neg).max(LOG_CLAMP);
        value += -gamma * pos_arg.ln() - neg_arg.ln();
        if fp > LOG_CLAMP {
            d_pos[i] = -gamma / (bf * fp);
        }
        if 1.0 - mean_neg > LOG_CLAMP {
            let g = 1.0 / (bf * k * (1.0 - mean_neg));
            d_neg.row_mut(i).fill(g);
        }
    }
    Ok(EstimatorLoss {
        value: value / bf,
        d_pos,
        d_neg,
    })
}

/// Isotropic standard-normal noise for negative latents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondaryNoiseSpec {
    pub enabled: bool,
}

impl SecondaryNoiseSpec {
    /// Returns `latents + n` with a fresh `n ~ N(0, I)` per row, or a copy
    /// when disabled.
    pub fn inject(&self, latents: &Array2<f64>, rng: &mut Rng) -> Array2<f64> {
        let mut out = latents.clone();
        if self.enabled {
            out.mapv_inplace(|v| {
                let n: f64 = StandardNormal.sample(rng);
                v + n
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn zero_weights_give_half() {
        let mut est = Estimator::new(6, &EstimatorConfig::default(), &mut stream(0, Stream::Init)).unwrap();
        est.fill_zero();
        assert_eq!(est.likelihood(&[3.0, -1.0, 0.0, 9.0, 2.0, 1.0]).unwrap(), 0.5);
        assert!(est.likelihood(&[1.0]).is_err());
    }

    #[test]
    fn architecture_halves_latent() {
        let est = Estimator::new(16, &EstimatorConfig::default(), &mut stream(0, Stream::Init)).unwrap();
        assert_eq!(est.mlp.sizes(), vec![16, 8, 1]);
        let tiny = Estimator::new(1, &EstimatorConfig::default(), &mut stream(0, Stream::Init)).unwrap();
        assert_eq!(tiny.mlp.sizes(), vec![1, 1, 1]);
    }

    #[test]
    fn outputs_in_open_unit_interval() {
        let mut rng = stream(1, Stream::Init);
        let est = Estimator::new(8, &EstimatorConfig::default(), &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((10_000, 8), || {
            let v: f64 = StandardNormal.sample(&mut rng);
            3.0 * v
        });
        assert!(est.likelihood_batch(&x).unwrap().iter().all(|&f| f > 0.0 && f < 1.0));
    }

    #[test]
    fn loss_examples() {
        let neg = array![[0.1]];
        let one = estimator_loss(&[0.9], &neg, 1.0).unwrap().value;
        assert_abs_diff_eq!(one, -2.0 * 0.9_f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(one, 0.21072, epsilon = 1e-5);
        let two = estimator_loss(&[0.9], &neg, 2.0).unwrap().value;
        assert_abs_diff_eq!(two, -3.0 * 0.9_f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(two, 0.31608, epsilon = 1e-5);
        let near_opt = estimator_loss(&[1.0 - 1e-12], &array![[1e-12]], 1.0).unwrap().value;
        assert!(near_opt >= 0.0 && near_opt < 1e-10);
    }

    #[test]
    fn inner_mean_precedes_log() {
        // mean f(neg) = 0.5 → −ln 0.5, not mean of −ln(1 − f)
        let l = estimator_loss(&[1.0], &array![[0.2, 0.8]], 1.0).unwrap().value;
        assert_abs_diff_eq!(l, -(0.5_f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn loss_clamps_at_boundary() {
        let l = estimator_loss(&[0.0], &array![[1.0]], 1.0).unwrap();
        assert_abs_diff_eq!(l.value, -2.0 * LOG_CLAMP.ln(), epsilon = 1e-9);
        assert!(l.d_pos.iter().chain(l.d_neg.iter()).all(|&g| g == 0.0));
    }

    #[test]
    fn loss_partials_match_finite_differences() {
        let f_pos = [0.7, 0.4];
        let f_neg = array![[0.2, 0.5, 0.1], [0.6, 0.3, 0.45]];
        let l = estimator_loss(&f_pos, &f_neg, 1.5).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut p = f_pos;
            p[i] += h;
            let plus = estimator_loss(&p, &f_neg, 1.5).unwrap().value;
            p[i] -= 2.0 * h;
            let minus = estimator_loss(&p, &f_neg, 1.5).unwrap().value;
            assert_abs_diff_eq!(l.d_pos[i], (plus - minus) / (2.0 * h), epsilon = 1e-8);
            for j in 0..3 {
                let mut n = f_neg.clone();
                n[[i, j]] += h;
                let plus = estimator_loss(&f_pos, &n, 1.5).unwrap().value;
                n[[i, j]] -= 2.0 * h;
                let minus = estimator_loss(&f_pos, &n, 1.5).unwrap().value;
                assert_abs_diff_eq!(l.d_neg[[i, j]], (plus - minus) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut rng = stream(7, Stream::Init);
        let est = Estimator::new(6, &EstimatorConfig { dropout: 0.0, hidden: None }, &mut rng).unwrap();
        let pos = Array2::from_shape_fn((4, 6), |(i, j)| ((i * 6 + j) as f64 * 0.7).sin());
        let neg = Array2::from_shape_fn((12, 6), |(i, j)| ((i * 6 + j) as f64 * 1.3).cos() * 1.5);
        let mut grad = est.zeros_like();
        let step = est.loss_and_grad(&pos, &neg, 1.7, &mut Pass::Inference, &mut grad).unwrap();
        assert_abs_diff_eq!(step.loss, est.loss(&pos, &neg, 1.7).unwrap(), epsilon = 1e-14);
        let report = grad_check(&est, &grad, |e| e.loss(&pos, &neg, 1.7).unwrap(), 30, 1e-5, &mut rng);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn disabled_noise_is_identity() {
        let z = array![[0.1, 0.2], [0.3, 0.4]];
        let out = SecondaryNoiseSpec { enabled: false }.inject(&z, &mut stream(0, Stream::Noise));
        assert_eq!(out, z);
    }

    #[test]
    fn noise_moments() {
        let n = 100_000;
        let z = Array2::zeros((n, 3));
        let out = SecondaryNoiseSpec { enabled: true }.inject(&z, &mut stream(3, Stream::Noise));
        for c in 0..3 {
            let col = out.column(c);
            let mean = col.mean().unwrap();
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
            let var = col.var(1.0);
            // Var of the sample variance of N(0,1) is 2/(n-1)
            assert!((var - 1.0).abs() < 3.0 * (2.0 / (n as f64 - 1.0)).sqrt(), "var {var}");
        }
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_monotone(
            fp in 0.01f64..0.99,
            fneg in proptest::collection::vec(0.01f64..0.99, 1..6),
            bump in 0.001f64..0.009,
            gamma in 0.5f64..3.0,
            which in 0usize..6,
        ) {
            let k = fneg.len();
            let neg = Array2::from_shape_vec((1, k), fneg.clone()).unwrap();
            let base = estimator_loss(&[fp], &neg, gamma).unwrap().value;
            prop_assert!(base > 0.0);
            let up_pos = estimator_loss(&[fp + bump], &neg, gamma).unwrap().value;
            prop_assert!(up_pos < base);
            let mut bumped = neg.clone();
            bumped[[0, which % k]] += bump;
            let up_neg = estimator_loss(&[fp], &bumped, gamma).unwrap().value;
            prop_assert!(up_neg > base);
        }
    }
}
