//! Field-aware asymmetric autoencoder.
//!
//! Each categorical field goes through its own linear embedding, the
//! continuous block through either the identity or one shared linear map, and
//! the concatenation `x_t` feeds a tanh encoder pyramid ending in the latent
//! vector. The decoder is a plain dense stack with a sigmoid output that
//! reconstructs the raw record (one-hot categoricals ⊕ continuous values) or,
//! optionally, `x_t` itself.

use ndarray::{s, Array2};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{check_dim, Error, Result};
use crate::nn::{
    mse_grad, mse_loss, slice_of, slice_of_mut, Activation, DenseLayer, DenseStack, DropoutSpec, ParamSet, Pass,
    StackCache,
};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ContinuousTransform {
    Identity,
    Linear { dim: usize },
}

/// Per-field input transforms making up `x_t`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldTransformSpec {
    pub arities: Vec<usize>,
    pub embedding_dims: Vec<usize>,
    pub continuous_fields: usize,
    pub continuous: ContinuousTransform,
}

/// min(⌈√a⌉ + 1, 32)
pub fn default_embedding_dim(arity: usize) -> usize {
    ((arity as f64).sqrt().ceil() as usize + 1).min(32)
}

impl FieldTransformSpec {
    pub fn new(
        arities: &[usize],
        embedding_dims: Option<&[usize]>,
        continuous_fields: usize,
        linear_threshold: usize,
        linear_dim: usize,
    ) -> Result<Self> {
        let embedding_dims = match embedding_dims {
            Some(d) => {
                check_dim("embedding dims", arities.len(), d.len())?;
                d.to_vec()
            }
            None => arities.iter().map(|&a| default_embedding_dim(a)).collect(),
        };
        if embedding_dims.contains(&0) {
            return Err(Error::config("embedding dimensions must be at least 1"));
        }
        if arities.contains(&0) {
            return Err(Error::Schema("categorical field with empty vocabulary".into()));
        }
        let continuous = if continuous_fields > linear_threshold {
            if linear_dim == 0 {
                return Err(Error::config("continuous transform dimension must be at least 1"));
            }
            ContinuousTransform::Linear { dim: linear_dim }
        } else {
            ContinuousTransform::Identity
        };
        Ok(Self {
            arities: arities.to_vec(),
            embedding_dims,
            continuous_fields,
            continuous,
        })
    }

    pub fn continuous_dim(&self) -> usize {
        match self.continuous {
            ContinuousTransform::Identity => self.continuous_fields,
            ContinuousTransform::Linear { dim } => dim,
        }
    }

    /// Σ a_w + r: width of the one-hot ⊕ continuous record.
    pub fn input_dim(&self) -> usize {
        self.arities.iter().sum::<usize>() + self.continuous_fields
    }

    /// dim(x_t) = Σ e_w + continuous block width.
    pub fn transformed_dim(&self) -> usize {
        self.embedding_dims.iter().sum::<usize>() + self.continuous_dim()
    }
}

/// What the decoder reconstructs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconTarget {
    /// One-hot categoricals ⊕ normalized continuous values.
    #[default]
    Input,
    /// The transformed concatenation `x_t`; gradients reach the embeddings
    /// through both the prediction and the target.
    Transformed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    /// Encoder pyramid; the last entry is the latent dimension p.
    pub encoder_layers: Vec<usize>,
    pub embedding_dims: Option<Vec<usize>>,
    pub continuous_threshold: usize,
    pub continuous_dim: usize,
    pub dropout: f64,
    pub reconstruction_target: ReconTarget,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            encoder_layers: vec![64, 32, 16],
            embedding_dims: None,
            continuous_threshold: 32,
            continuous_dim: 32,
            dropout: 0.2,
            reconstruction_target: ReconTarget::Input,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub spec: FieldTransformSpec,
    /// One `[arity × e_w]` table per categorical field.
    pub embeddings: Vec<Array2<f64>>,
    pub continuous: Option<DenseLayer>,
    pub encoder: DenseStack,
    pub decoder: DenseStack,
    pub target: ReconTarget,
}

/// Intermediate values of one autoencoder pass.
#[derive(Clone, Debug)]
pub struct AeForward {
    pub xt: Array2<f64>,
    pub latent: Array2<f64>,
    pub recon: Option<Array2<f64>>,
    /// Reconstruction target (set when decoding).
    pub target: Option<Array2<f64>>,
    cont_input: Option<Array2<f64>>,
    enc_cache: StackCache,
    dec_cache: Option<StackCache>,
}

impl AeForward {
    /// Mean squared error between the target and its reconstruction.
    pub fn reconstruction_loss(&self) -> f64 {
        let recon = self.recon.as_ref().expect("pass was run with decoding");
        let target = self.target.as_ref().expect("pass was run with decoding");
        mse_loss(target, recon).expect("shapes agree by construction")
    }
}

impl Autoencoder {
    pub fn new(spec: FieldTransformSpec, config: &AutoencoderConfig, rng: &mut Rng) -> Result<Self> {
        if config.encoder_layers.is_empty() || config.encoder_layers.contains(&0) {
            return Err(Error::config("encoder_layers must be non-empty and positive"));
        }
        let dropout = DropoutSpec::new(config.dropout)?;
        let embeddings = spec
            .arities
            .iter()
            .zip(&spec.embedding_dims)
            .map(|(&a, &e)| {
                let limit = (6.0 / (a + e) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
                Array2::from_shape_simple_fn((a, e), || dist.sample(rng))
            })
            .collect();
        let continuous = match spec.continuous {
            ContinuousTransform::Identity => None,
            ContinuousTransform::Linear { dim } => {
                Some(DenseLayer::new(spec.continuous_fields, dim, Activation::Identity, rng))
            }
        };
        let xt_dim = spec.transformed_dim();
        let mut enc_sizes = vec![xt_dim];
        enc_sizes.extend(&config.encoder_layers);
        let encoder = DenseStack::new(&enc_sizes, Activation::Tanh, Activation::Tanh, dropout, false, rng);
        let mut dec_sizes: Vec<usize> = enc_sizes.iter().rev().copied().collect();
        if config.reconstruction_target == ReconTarget::Input {
            *dec_sizes.last_mut().expect("non-empty") = spec.input_dim();
        }
        let decoder = DenseStack::new(&dec_sizes, Activation::Tanh, Activation::Sigmoid, dropout, false, rng);
        Ok(Self {
            spec,
            embeddings,
            continuous,
            encoder,
            decoder,
            target: config.reconstruction_target,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            embeddings: self.embeddings.iter().map(|e| Array2::zeros(e.raw_dim())).collect(),
            continuous: self.continuous.as_ref().map(DenseLayer::zeros_like),
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
            target: self.target,
        }
    }

    /// p
    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn transformed_dim(&self) -> usize {
        self.spec.transformed_dim()
    }

    fn continuous_block(&self, records: &[&Record]) -> Array2<f64> {
        let r = self.spec.continuous_fields;
        Array2::from_shape_fn((records.len(), r), |(i, j)| records[i].cont[j])
    }

    /// Builds `x_t` for a batch: embedding rows ⊕ transformed continuous block.
    pub fn transform(&self, records: &[&Record]) -> Result<Array2<f64>> {
        Ok(self.transform_inner(records)?.0)
    }

    fn transform_inner(&self, records: &[&Record]) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        let spec = &self.spec;
        for rec in records {
            check_dim("record categorical fields", spec.arities.len(), rec.cats.len())?;
            check_dim("record continuous fields", spec.continuous_fields, rec.cont.len())?;
            for (w, (&c, &a)) in rec.cats.iter().zip(&spec.arities).enumerate() {
                if c >= a {
                    return Err(Error::Schema(format!(
                        "record {}: categorical index {c} out of range for field {w} (arity {a})",
                        rec.id
                    )));
                }
            }
        }
        let mut xt = Array2::zeros((records.len(), spec.transformed_dim()));
        let mut offset = 0;
        for (w, table) in self.embeddings.iter().enumerate() {
            let e = table.ncols();
            for (i, rec) in records.iter().enumerate() {
                xt.slice_mut(s![i, offset..offset + e]).assign(&table.row(rec.cats[w]));
            }
            offset += e;
        }
        let cont = self.continuous_block(records);
        let cont_input = match &self.continuous {
            None => {
                xt.slice_mut(s![.., offset..]).assign(&cont);
                None
            }
            Some(layer) => {
                let (out, _) = layer.forward_batch(&cont)?;
                xt.slice_mut(s![.., offset..]).assign(&out);
                Some(cont)
            }
        };
        Ok((xt, cont_input))
    }

    /// Runs transform → encoder (→ decoder when `decode`).
    pub fn forward(&self, records: &[&Record], decode: bool, pass: &mut Pass<'_>) -> Result<AeForward> {
        let (xt, cont_input) = self.transform_inner(records)?;
        let (latent, enc_cache) = self.encoder.forward(&xt, pass)?;
        let (recon, dec_cache, target) = if decode {
            let (r, c) = self.decoder.forward(&latent, pass)?;
            let target = match self.target {
                ReconTarget::Input => self.raw_input(records),
                ReconTarget::Transformed => xt.clone(),
            };
            (Some(r), Some(c), Some(target))
        } else {
            (None, None, None)
        };
        Ok(AeForward {
            xt,
            latent,
            recon,
            target,
            cont_input,
            enc_cache,
            dec_cache,
        })
    }

    /// One-hot categoricals ⊕ continuous values.
    pub fn raw_input(&self, records: &[&Record]) -> Array2<f64> {
        let spec = &self.spec;
        let mut x = Array2::zeros((records.len(), spec.input_dim()));
        for (i, rec) in records.iter().enumerate() {
            let mut offset = 0;
            for (&c, &a) in rec.cats.iter().zip(&spec.arities) {
                x[[i, offset + c]] = 1.0;
                offset += a;
            }
            for (j, &v) in rec.cont.iter().enumerate() {
                x[[i, offset + j]] = v;
            }
        }
        x
    }

    /// Latent vectors in inference mode.
    pub fn encode(&self, records: &[&Record]) -> Result<Array2<f64>> {
        Ok(self.forward(records, false, &mut Pass::Inference)?.latent)
    }

    pub fn encode_xt(&self, xt: &Array2<f64>) -> Result<Array2<f64>> {
        check_dim("encoder input", self.transformed_dim(), xt.ncols())?;
        Ok(self.encoder.forward(xt, &mut Pass::Inference)?.0)
    }

    pub fn decode(&self, latent: &Array2<f64>) -> Result<Array2<f64>> {
        check_dim("decoder input", self.latent_dim(), latent.ncols())?;
        Ok(self.decoder.forward(latent, &mut Pass::Inference)?.0)
    }

    /// L_R on a batch in inference mode.
    pub fn reconstruction_loss(&self, records: &[&Record]) -> Result<f64> {
        Ok(self.forward(records, true, &mut Pass::Inference)?.reconstruction_loss())
    }

    /// Accumulates into `grad` the gradient of a loss whose partials are
    /// `d_latent` w.r.t. the latent vectors plus, when `recon_weight` is
    /// `Some(λ)`, λ·L_R for the reconstruction of `x_t` (both the prediction
    /// and the target path).
    pub fn backward(
        &self,
        records: &[&Record],
        fwd: &AeForward,
        recon_weight: Option<f64>,
        d_latent: Option<&Array2<f64>>,
        grad: &mut Autoencoder,
    ) {
        let mut d_lat = match d_latent {
            Some(d) => d.clone(),
            None => Array2::zeros(fwd.latent.raw_dim()),
        };
        let mut d_xt = Array2::zeros(fwd.xt.raw_dim());
        if let Some(weight) = recon_weight {
            let recon = fwd.recon.as_ref().expect("reconstruction requested without decoding");
            let target = fwd.target.as_ref().expect("reconstruction target");
            let d_recon = mse_grad(target, recon) * weight;
            let dec_cache = fwd.dec_cache.as_ref().expect("decoder cache");
            d_lat += &self.decoder.backward(dec_cache, &d_recon, &mut grad.decoder);
            if self.target == ReconTarget::Transformed {
                d_xt -= &d_recon;
            }
        }
        d_xt += &self.encoder.backward(&fwd.enc_cache, &d_lat, &mut grad.encoder);
        self.transform_backward(records, fwd, &d_xt, grad);
    }

    fn transform_backward(&self, records: &[&Record], fwd: &AeForward, d_xt: &Array2<f64>, grad: &mut Autoencoder) {
        let mut offset = 0;
        for (w, table) in grad.embeddings.iter_mut().enumerate() {
            let e = table.ncols();
            for (i, rec) in records.iter().enumerate() {
                let mut row = table.row_mut(rec.cats[w]);
                row += &d_xt.slice(s![i, offset..offset + e]);
            }
            offset += e;
        }
        if let (Some(_), Some(g), Some(input)) = (&self.continuous, grad.continuous.as_mut(), &fwd.cont_input) {
            let d_out = d_xt.slice(s![.., offset..]);
            g.weights += &d_out.t().dot(input);
            g.bias += &d_out.sum_axis(ndarray::Axis(0));
        }
    }
}

impl ParamSet for Autoencoder {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = self.embeddings.iter().map(slice_of).collect();
        if let Some(c) = &self.continuous {
            t.extend(c.tensors());
        }
        t.extend(self.encoder.tensors());
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = self.embeddings.iter_mut().map(slice_of_mut).collect();
        if let Some(c) = &mut self.continuous {
            t.extend(c.tensors_mut());
        }
        t.extend(self.encoder.tensors_mut());
        t.extend(self.decoder.tensors_mut());
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn rec(id: usize, cats: Vec<usize>, cont: Vec<f64>) -> Record {
        Record {
            id,
            cats,
            cont,
            label: None,
        }
    }

    fn small_model(seed: u64, dropout: f64) -> Autoencoder {
        let spec = FieldTransformSpec::new(&[3, 5], Some(&[2, 3]), 4, 32, 8).unwrap();
        let cfg = AutoencoderConfig {
            encoder_layers: vec![6, 3],
            dropout,
            ..Default::default()
        };
        Autoencoder::new(spec, &cfg, &mut stream(seed, Stream::Init)).unwrap()
    }

    fn batch() -> Vec<Record> {
        vec![
            rec(0, vec![0, 4], vec![0.1, 0.9, 0.5, 0.3]),
            rec(1, vec![2, 1], vec![0.7, 0.2, 0.0, 1.0]),
            rec(2, vec![1, 1], vec![0.4, 0.4, 0.6, 0.8]),
        ]
    }

    #[test]
    fn transformed_dim_examples() {
        let spec = FieldTransformSpec::new(&[10, 10], Some(&[2, 3]), 4, 32, 16).unwrap();
        assert_eq!(spec.transformed_dim(), 9);
        let wide = FieldTransformSpec::new(&[10], Some(&[2]), 40, 32, 16).unwrap();
        assert_eq!(wide.continuous, ContinuousTransform::Linear { dim: 16 });
        assert_eq!(wide.transformed_dim(), 18);
        let at = FieldTransformSpec::new(&[10], Some(&[2]), 32, 32, 16).unwrap();
        assert_eq!(at.continuous, ContinuousTransform::Identity);
        assert_eq!(default_embedding_dim(3), 3);
        assert_eq!(default_embedding_dim(50), 9);
        assert_eq!(default_embedding_dim(10_000), 32);
    }

    #[test]
    fn identity_embedding_gives_one_hot_block() {
        let spec = FieldTransformSpec::new(&[3], Some(&[3]), 0, 32, 8).unwrap();
        let mut ae = Autoencoder::new(spec, &AutoencoderConfig::default(), &mut stream(0, Stream::Init)).unwrap();
        ae.embeddings[0] = Array2::eye(3);
        let xt = ae.transform(&[&rec(0, vec![1], vec![])]).unwrap();
        assert_eq!(xt.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn raw_input_is_one_hot_then_continuous() {
        let ae = small_model(0, 0.0);
        let x = ae.raw_input(&[&rec(0, vec![2, 0], vec![0.1, 0.2, 0.3, 0.4])]);
        assert_eq!(
            x.row(0).to_vec(),
            vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4]
        );
        assert_eq!(ae.decoder.output_dim(), 12);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let ae = small_model(1, 0.0);
        let bad = rec(9, vec![3, 0], vec![0.0; 4]);
        assert!(matches!(ae.transform(&[&bad]), Err(Error::Schema(_))));
    }

    #[test]
    fn zero_weights_decode_to_half() {
        let mut ae = small_model(2, 0.0);
        ae.fill_zero();
        let recs = batch();
        let refs: Vec<&Record> = recs.iter().collect();
        let f = ae.forward(&refs, true, &mut Pass::Inference).unwrap();
        assert!(f.recon.unwrap().iter().all(|&v| v == 0.5));
        assert_eq!(f.latent.ncols(), 3);
    }

    #[test]
    fn untrained_loss_is_bounded() {
        let ae = small_model(3, 0.2);
        let recs = batch();
        let refs: Vec<&Record> = recs.iter().collect();
        let l = ae.reconstruction_loss(&refs).unwrap();
        // xt entries are embeddings in (-1, 1) or normalized values, recon in (0, 1)
        assert!(l.is_finite() && l > 0.0 && l <= 1.0, "{l}");
    }

    #[test]
    fn encoding_is_deterministic_in_inference() {
        let ae = small_model(4, 0.2);
        let recs = batch();
        let refs: Vec<&Record> = recs.iter().collect();
        assert_eq!(ae.encode(&refs).unwrap(), ae.encode(&refs).unwrap());
    }

    #[test]
    fn reconstruction_loss_examples() {
        let xt = ndarray::array![[0.2]];
        assert!((mse_loss(&xt, &ndarray::array![[0.7]]).unwrap() - 0.25).abs() < 1e-15);
        // 2 records × 3 features: residuals (0.1, -0.2, 0.3 | 0, 0.5, -0.4)
        let x = ndarray::array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]];
        let xh = ndarray::array![[0.2, 0.0, 0.6], [0.4, 1.0, 0.2]];
        let expected = (0.01 + 0.04 + 0.09 + 0.0 + 0.25 + 0.16) / 6.0;
        assert!((mse_loss(&x, &xh).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_gradient_matches_finite_differences() {
        for (linear, target) in [
            (false, ReconTarget::Input),
            (true, ReconTarget::Input),
            (false, ReconTarget::Transformed),
            (true, ReconTarget::Transformed),
        ] {
            let spec = if linear {
                FieldTransformSpec::new(&[3, 5], Some(&[2, 3]), 4, 2, 3).unwrap()
            } else {
                FieldTransformSpec::new(&[3, 5], Some(&[2, 3]), 4, 32, 3).unwrap()
            };
            let cfg = AutoencoderConfig {
                encoder_layers: vec![6, 3],
                dropout: 0.0,
                reconstruction_target: target,
                ..Default::default()
            };
            let mut rng = stream(5, Stream::Init);
            let ae = Autoencoder::new(spec, &cfg, &mut rng).unwrap();
            let recs = batch();
            let refs: Vec<&Record> = recs.iter().collect();
            let fwd = ae.forward(&refs, true, &mut Pass::Inference).unwrap();
            let mut grad = ae.zeros_like();
            ae.backward(&refs, &fwd, Some(1.0), None, &mut grad);
            let report = grad_check(&ae, &grad, |m| m.reconstruction_loss(&refs).unwrap(), 40, 1e-5, &mut rng);
            assert!(report.max_rel_error < 1e-4, "linear={linear} {target:?}: {report:?}");
        }
    }

    #[test]
    fn embedding_gradient_only_touches_batch_rows() {
        let ae = small_model(6, 0.0);
        let recs = batch();
        let refs: Vec<&Record> = recs.iter().collect();
        let fwd = ae.forward(&refs, true, &mut Pass::Inference).unwrap();
        let mut grad = ae.zeros_like();
        ae.backward(&refs, &fwd, Some(1.0), None, &mut grad);
        for (w, table) in grad.embeddings.iter().enumerate() {
            for row in 0..table.nrows() {
                let used = recs.iter().any(|r| r.cats[w] == row);
                let nonzero = table.row(row).iter().any(|&g| g != 0.0);
                assert_eq!(used, nonzero, "field {w} row {row}");
            }
        }
    }

    proptest! {
        #[test]
        fn xt_width_matches_spec(
            arities in proptest::collection::vec(1usize..60, 0..6),
            r in 0usize..70,
            threshold in 1usize..40,
            gdim in 1usize..20,
        ) {
            prop_assume!(!arities.is_empty() || r > 0);
            let spec = FieldTransformSpec::new(&arities, None, r, threshold, gdim).unwrap();
            let expected = spec.embedding_dims.iter().sum::<usize>() + if r > threshold { gdim } else { r };
            prop_assert_eq!(spec.transformed_dim(), expected);
            let cfg = AutoencoderConfig { encoder_layers: vec![4, 2], ..Default::default() };
            let ae = Autoencoder::new(spec, &cfg, &mut stream(0, Stream::Init)).unwrap();
            let rec = Record { id: 0, cats: arities.iter().map(|a| a - 1).collect(), cont: vec![0.5; r], label: None };
            let xt = ae.transform(&[&rec]).unwrap();
            prop_assert_eq!(xt.ncols(), expected);
            prop_assert_eq!(ae.decoder.output_dim(), arities.iter().sum::<usize>() + r);
        }
    }
}
