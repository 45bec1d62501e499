//! Run configuration: one JSON file, every key checked.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderConfig;
use crate::conceptbench::ConceptConfig;
use crate::data::UnseenPolicy;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::negsampler::NegSamplerConfig;
use crate::nn::DropoutSpec;
use crate::pipeline::PipelineConfig;
use crate::synthetic::SyntheticConfig;
use crate::trainer::TrainSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Synthetic anomalies appended to an unlabeled test set, as a fraction
    /// of its size.
    pub anomaly_fraction: f64,
    pub percentages: Vec<f64>,
    pub repeats: usize,
    /// Seeds for the with/without secondary-noise comparison; empty skips it.
    pub noise_ablation_seeds: Vec<u64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            anomaly_fraction: 0.1,
            percentages: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            repeats: 5,
            noise_ablation_seeds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Minimum count for a categorical value to survive rare-entity filtering.
    /// There is no default: it depends on the data.
    pub min_count: Option<usize>,
    pub unseen_policy: UnseenPolicy,
    pub clamp: bool,
    pub autoencoder: AutoencoderConfig,
    pub estimator: EstimatorConfig,
    pub negatives: NegSamplerConfig,
    pub schedule: TrainSchedule,
    pub eval: EvalSettings,
    pub concept: ConceptConfig,
    pub synthetic: SyntheticConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: None,
            train_data: None,
            test_data: None,
            min_count: None,
            unseen_policy: UnseenPolicy::Reject,
            clamp: false,
            autoencoder: AutoencoderConfig::default(),
            estimator: EstimatorConfig::default(),
            negatives: NegSamplerConfig::default(),
            schedule: TrainSchedule::default(),
            eval: EvalSettings::default(),
            concept: ConceptConfig::default(),
            synthetic: SyntheticConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// What a command needs from the configuration.
#[derive(Clone, Copy, Debug, Default)]
pub struct Needs {
    pub schema: bool,
    pub train_data: bool,
    pub test_data: bool,
    pub min_count: bool,
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(vec![format!("config: {e}")]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msgs) => Error::Config(msgs.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            min_count: self.min_count.unwrap_or(1),
            clamp: self.clamp,
            autoencoder: self.autoencoder.clone(),
            estimator: self.estimator.clone(),
            negatives: self.negatives.clone(),
            schedule: self.schedule.clone(),
        }
    }

    /// Every problem at once, rather than the first.
    pub fn validate(&self, needs: Needs) -> Result<()> {
        let mut errs = Vec::new();
        let mut path = |name: &str, p: &Option<PathBuf>, required: bool| match p {
            Some(p) if !p.exists() => errs.push(format!("{name}: file not found: {}", p.display())),
            None if required => errs.push(format!("{name}: required for this command")),
            _ => {}
        };
        path("schema", &self.schema, needs.schema);
        path("train_data", &self.train_data, needs.train_data);
        path("test_data", &self.test_data, needs.test_data);
        match self.min_count {
            None if needs.min_count => errs.push("min_count: required for training (no default)".into()),
            Some(0) => errs.push("min_count must be >= 1".into()),
            _ => {}
        }
        errs.extend(self.schedule.validate().into_iter().map(|m| format!("schedule: {m}")));
        let ae = &self.autoencoder;
        if ae.encoder_layers.is_empty() || ae.encoder_layers.contains(&0) {
            errs.push("autoencoder.encoder_layers must be non-empty with positive widths".into());
        }
        if ae.continuous_dim == 0 {
            errs.push("autoencoder.continuous_dim must be >= 1".into());
        }
        if let Some(dims) = &ae.embedding_dims {
            if dims.contains(&0) {
                errs.push("autoencoder.embedding_dims must be positive".into());
            }
        }
        for (name, rate) in [("autoencoder.dropout", ae.dropout), ("estimator.dropout", self.estimator.dropout)] {
            if DropoutSpec::new(rate).is_err() {
                errs.push(format!("{name} must lie in [0, 1), got {rate}"));
            }
        }
        if self.estimator.hidden == Some(0) {
            errs.push("estimator.hidden must be >= 1".into());
        }
        let n = &self.negatives;
        if n.m == 0 {
            errs.push("negatives.m must be >= 1".into());
        }
        if !(n.delta > 0.0) {
            errs.push("negatives.delta must be > 0".into());
        }
        if !(n.dampening > 0.0) {
            errs.push("negatives.dampening must be > 0".into());
        }
        let e = &self.eval;
        if !(e.anomaly_fraction > 0.0 && e.anomaly_fraction.is_finite()) {
            errs.push("eval.anomaly_fraction must be > 0".into());
        }
        if e.percentages.iter().any(|p| !(*p > 0.0 && *p < 100.0)) {
            errs.push("eval.percentages must lie in (0, 100)".into());
        }
        if e.repeats == 0 {
            errs.push("eval.repeats must be >= 1".into());
        }
        errs.extend(self.concept.validate());
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.schedule.batch_size, 256);
        assert_eq!(c.schedule.learning_rate, 5e-4);
        assert_eq!(c.autoencoder.encoder_layers, vec![64, 32, 16]);
        assert_eq!(c.autoencoder.dropout, 0.2);
        assert_eq!(c.estimator.dropout, 0.1);
        assert_eq!(c.negatives.m, 10);
        assert_eq!(c.negatives.delta, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json_str(r#"{"schedule": {"learnign_rate": 0.1}}"#).unwrap_err();
        assert!(format!("{err}").contains("learnign_rate"));
        assert!(RunConfig::from_json_str(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn all_errors_reported_together() {
        let mut c = RunConfig::from_json_str(r#"{"schema": "/nonexistent/s.json", "negatives": {"m": 0}}"#).unwrap();
        c.eval.repeats = 0;
        let needs = Needs {
            schema: true,
            train_data: true,
            min_count: true,
            ..Default::default()
        };
        match c.validate(needs) {
            Err(Error::Config(errs)) => {
                assert_eq!(errs.len(), 5, "{errs:?}");
                assert!(errs[0].contains("/nonexistent/s.json"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig {
            min_count: Some(3),
            seed: 9,
            ..Default::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json_str(&s).unwrap(), c);
    }
}
