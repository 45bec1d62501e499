//! The complete detector (autoencoder + estimator + preprocessing state) and
//! its on-disk format.
//!
//! File layout (all integers little-endian):
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `b"CHADKIT\0"`                      |
//! | 8      | 4    | `u32` format version (currently 1)        |
//! | 12     | 8    | `u64` header length `H` in bytes          |
//! | 20     | H    | UTF-8 JSON header ([`ModelHeader`])       |
//! | 20 + H | 8·P  | `P = header.param_count` `f64` parameters |
//!
//! Parameters are written tensor by tensor in the order listed in
//! `header.tensors`, each tensor row-major.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{Autoencoder, AutoencoderConfig, FieldTransformSpec, ReconTarget};
use crate::data::{Dataset, NormalizationStats, Record, RecordSchema, Vocabulary};
use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorConfig};
use crate::nn::ParamSet;
use crate::rng::{stream, Rng, Stream};

pub const MAGIC: &[u8; 8] = b"CHADKIT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ChadModel {
    pub schema: RecordSchema,
    pub vocabs: Vec<Vocabulary>,
    pub normalization: NormalizationStats,
    pub autoencoder: Autoencoder,
    pub estimator: Estimator,
}

impl ChadModel {
    /// Fresh model sized for `train` (already filtered and normalized).
    pub fn new(
        train: &Dataset,
        normalization: NormalizationStats,
        ae_config: &AutoencoderConfig,
        est_config: &EstimatorConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let spec = FieldTransformSpec::new(
            &train.arities(),
            ae_config.embedding_dims.as_deref(),
            train.schema.n_continuous(),
            ae_config.continuous_threshold,
            ae_config.continuous_dim,
        )?;
        let autoencoder = Autoencoder::new(spec, ae_config, rng)?;
        let estimator = Estimator::new(autoencoder.latent_dim(), est_config, rng)?;
        Ok(Self {
            schema: train.schema.clone(),
            vocabs: train.vocabs.clone(),
            normalization,
            autoencoder,
            estimator,
        })
    }

    /// Anomaly scores f(f_enc(x)) in inference mode; lower is more anomalous.
    pub fn score(&self, records: &[&Record]) -> Result<Vec<f64>> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let latents = self.autoencoder.encode(records)?;
        self.estimator.likelihood_batch(&latents)
    }

    pub fn latents(&self, records: &[&Record]) -> Result<Array2<f64>> {
        self.autoencoder.encode(records)
    }

    /// Checks that `dataset` was encoded against this model's schema and vocabularies.
    pub fn check_compatible(&self, dataset: &Dataset) -> Result<()> {
        if dataset.schema.hash() != self.schema.hash() {
            return Err(Error::ModelMismatch(format!(
                "schema hash {} does not match model schema hash {}",
                dataset.schema.hash(),
                self.schema.hash()
            )));
        }
        if dataset.vocabs != self.vocabs {
            return Err(Error::ModelMismatch("dataset vocabularies differ from the model's".into()));
        }
        Ok(())
    }

    fn architecture(&self) -> Architecture {
        Architecture {
            transform: self.autoencoder.spec.clone(),
            encoder_sizes: self.autoencoder.encoder.sizes(),
            autoencoder_dropout: self.autoencoder.encoder.dropout.rate,
            reconstruction_target: self.autoencoder.target,
            estimator_sizes: self.estimator.mlp.sizes(),
            estimator_dropout: self.estimator.mlp.dropout.rate,
        }
    }

    fn tensor_manifest(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        for (w, e) in self.autoencoder.embeddings.iter().enumerate() {
            out.push(TensorInfo::new(format!("embedding.{w}"), e.shape()));
        }
        if let Some(c) = &self.autoencoder.continuous {
            out.push(TensorInfo::new("continuous.weight".into(), c.weights.shape()));
            out.push(TensorInfo::new("continuous.bias".into(), c.bias.shape()));
        }
        for (prefix, stack) in [
            ("encoder", &self.autoencoder.encoder),
            ("decoder", &self.autoencoder.decoder),
            ("estimator", &self.estimator.mlp),
        ] {
            for (i, l) in stack.layers.iter().enumerate() {
                out.push(TensorInfo::new(format!("{prefix}.{i}.weight"), l.weights.shape()));
                out.push(TensorInfo::new(format!("{prefix}.{i}.bias"), l.bias.shape()));
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut params = self.autoencoder.to_flat();
        params.extend(self.estimator.to_flat());
        let header = ModelHeader {
            format_version: FORMAT_VERSION,
            schema_hash: self.schema.hash(),
            schema: self.schema.clone(),
            latent_dim: self.autoencoder.latent_dim(),
            architecture: self.architecture(),
            vocabularies: self.vocabs.clone(),
            normalization: self.normalization.clone(),
            tensors: self.tensor_manifest(),
            param_count: params.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(20 + json.len() + 8 * params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for p in params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        out.write_all(&buf).map_err(|e| Error::io("<model output>", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io("<model input>", e))?;
        Self::from_bytes(&bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: ModelHeader = serde_json::from_slice(body)?;
        if header.schema.hash() != header.schema_hash {
            return Err(bad("schema hash in header does not match embedded schema"));
        }
        let payload = &bytes[20 + hlen..];
        if payload.len() != 8 * header.param_count {
            return Err(Error::ModelFormat(format!(
                "payload holds {} bytes, header promises {} parameters",
                payload.len(),
                header.param_count
            )));
        }
        let params: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let arch = &header.architecture;
        let ae_config = AutoencoderConfig {
            encoder_layers: arch.encoder_sizes[1..].to_vec(),
            embedding_dims: Some(arch.transform.embedding_dims.clone()),
            dropout: arch.autoencoder_dropout,
            reconstruction_target: arch.reconstruction_target,
            ..Default::default()
        };
        let est_config = EstimatorConfig {
            dropout: arch.estimator_dropout,
            hidden: arch.estimator_sizes.get(1).copied(),
        };
        // Shapes only; values are overwritten below.
        let mut rng = stream(0, Stream::Init);
        let mut autoencoder = Autoencoder::new(arch.transform.clone(), &ae_config, &mut rng)?;
        let mut estimator = Estimator::new(header.latent_dim, &est_config, &mut rng)?;
        let split = autoencoder.param_count();
        if split + estimator.param_count() != params.len() {
            return Err(bad("parameter count does not match architecture"));
        }
        autoencoder.assign_flat(&params[..split])?;
        estimator.assign_flat(&params[split..])?;
        let model = Self {
            schema: header.schema,
            vocabs: header.vocabularies,
            normalization: header.normalization,
            autoencoder,
            estimator,
        };
        if model.tensor_manifest() != header.tensors {
            return Err(bad("tensor manifest does not match architecture"));
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    fn new(name: String, shape: &[usize]) -> Self {
        Self {
            name,
            shape: shape.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub transform: FieldTransformSpec,
    /// `[dim(x_t), h1, …, p]`; the decoder mirrors it.
    pub encoder_sizes: Vec<usize>,
    pub autoencoder_dropout: f64,
    pub reconstruction_target: ReconTarget,
    /// `[p, hidden, 1]`
    pub estimator_sizes: Vec<usize>,
    pub estimator_dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub schema_hash: String,
    pub schema: RecordSchema,
    pub latent_dim: usize,
    pub architecture: Architecture,
    pub vocabularies: Vec<Vocabulary>,
    pub normalization: NormalizationStats,
    pub tensors: Vec<TensorInfo>,
    pub param_count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_csv, LoadOptions};

    fn tiny() -> ChadModel {
        let schema = RecordSchema::from_json_str(r#"{"a": "categorical", "x": "continuous", "y": "continuous"}"#).unwrap();
        let csv = "a,x,y\np,0.1,0.2\nq,0.5,0.9\nr,1.0,0.0\n";
        let (ds, _) = read_csv(csv.as_bytes(), &schema, &LoadOptions::default()).unwrap();
        let stats = NormalizationStats::fit(&ds).unwrap();
        let cfg = AutoencoderConfig {
            encoder_layers: vec![5, 3],
            ..Default::default()
        };
        ChadModel::new(&ds, stats, &cfg, &EstimatorConfig::default(), &mut stream(1, Stream::Init)).unwrap()
    }

    #[test]
    fn file_round_trip_is_exact() {
        let m = tiny();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = ChadModel::from_bytes(&buf).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn layout_matches_documentation() {
        let m = tiny();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        let h = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
        let header: ModelHeader = serde_json::from_slice(&buf[20..20 + h]).unwrap();
        assert_eq!(buf.len(), 20 + h + 8 * header.param_count);
        let first = f64::from_le_bytes(buf[20 + h..28 + h].try_into().unwrap());
        assert_eq!(first, m.autoencoder.embeddings[0][[0, 0]]);
        let listed: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        assert_eq!(listed, header.param_count);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = tiny();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert!(matches!(ChadModel::from_bytes(&buf[..buf.len() - 8]), Err(Error::ModelFormat(_))));
        let mut wrong_magic = buf.clone();
        wrong_magic[0] = b'X';
        assert!(ChadModel::from_bytes(&wrong_magic).is_err());
    }
}
