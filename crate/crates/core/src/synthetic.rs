//! Structured mixed-type data for desk-scale experiments.
//!
//! Each row belongs to a hidden class. The class fixes a few admissible values
//! per categorical field and a line segment in continuous space; a per-row
//! position along the segment plus small noise gives the continuous values.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Record, RecordSchema, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub rows: usize,
    pub categorical_arities: Vec<usize>,
    pub continuous_fields: usize,
    pub classes: usize,
    /// Admissible values per categorical field within one class.
    pub class_values: usize,
    /// Probability that a categorical value ignores the class preference.
    pub categorical_noise: f64,
    pub continuous_noise: f64,
    /// Values are `exp(skew · v)` of the class-line value `v`, giving the
    /// right-skewed marginals typical of amounts and counts; 0 keeps `v`.
    pub skew: f64,
    /// Raw continuous values are multiplied by this before output.
    pub value_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            rows: 5000,
            categorical_arities: vec![10, 20, 35, 50],
            continuous_fields: 6,
            classes: 8,
            class_values: 1,
            categorical_noise: 0.01,
            continuous_noise: 0.02,
            skew: 4.0,
            value_scale: 100.0,
        }
    }
}

/// Class parameters, kept so that further rows can be drawn from the same
/// nominal distribution (e.g. a held-out test split).
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGenerator {
    config: SyntheticConfig,
    preferred: Vec<Vec<Vec<usize>>>,
    start: Vec<Vec<f64>>,
    direction: Vec<Vec<f64>>,
    schema: RecordSchema,
    vocabs: Vec<Vocabulary>,
}

impl StructuredGenerator {
    pub fn new(config: SyntheticConfig, rng: &mut Rng) -> Result<Self> {
        let mut errs = Vec::new();
        if config.classes == 0 {
            errs.push("synthetic.classes must be >= 1".to_string());
        }
        if config.categorical_arities.iter().any(|&a| a < 2) {
            errs.push("synthetic.categorical_arities must all be >= 2".to_string());
        }
        if config.class_values == 0 || config.categorical_arities.iter().any(|&a| a < config.class_values) {
            errs.push("synthetic.class_values must be >= 1 and at most every arity".to_string());
        }
        if config.categorical_arities.is_empty() && config.continuous_fields == 0 {
            errs.push("synthetic data needs at least one field".to_string());
        }
        if !(0.0..=1.0).contains(&config.categorical_noise) {
            errs.push("synthetic.categorical_noise must lie in [0, 1]".to_string());
        }
        if !(config.continuous_noise >= 0.0 && config.value_scale > 0.0 && config.skew >= 0.0) {
            errs.push("synthetic.continuous_noise and skew must be >= 0, value_scale > 0".to_string());
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let k = config.categorical_arities.len();
        let r = config.continuous_fields;
        let preferred = (0..config.classes)
            .map(|_| {
                config
                    .categorical_arities
                    .iter()
                    .map(|&a| rand::seq::index::sample(rng, a, config.class_values).into_vec())
                    .collect()
            })
            .collect();
        let start: Vec<Vec<f64>> = (0..config.classes)
            .map(|_| (0..r).map(|_| rng.random_range(0.1..0.6)).collect())
            .collect();
        let direction = (0..config.classes)
            .map(|_| (0..r).map(|_| rng.random_range(-0.3..0.3)).collect())
            .collect();
        let schema = RecordSchema::new(
            (0..k).map(|w| format!("cat{w}")).collect(),
            (0..r).map(|j| format!("num{j}")).collect(),
            Some("label".into()),
        )?;
        let vocabs = config
            .categorical_arities
            .iter()
            .enumerate()
            .map(|(w, &a)| Vocabulary::from((0..a).map(|v| format!("f{w}v{v}")).collect::<Vec<_>>()))
            .collect();
        Ok(Self {
            config,
            preferred,
            start,
            direction,
            schema,
            vocabs,
        })
    }

    pub fn schema(&self) -> &RecordSchema {
        &self.schema
    }

    /// `rows` nominal records with ids starting at `first_id`.
    pub fn sample(&self, rows: usize, first_id: usize, rng: &mut Rng) -> Dataset {
        let cfg = &self.config;
        let noise = Normal::new(0.0, cfg.continuous_noise).expect("validated noise scale");
        let records = (0..rows)
            .map(|i| {
                let c = rng.random_range(0..cfg.classes);
                let cats = cfg
                    .categorical_arities
                    .iter()
                    .enumerate()
                    .map(|(w, &a)| {
                        if rng.random::<f64>() < cfg.categorical_noise {
                            rng.random_range(0..a)
                        } else {
                            let vals = &self.preferred[c][w];
                            vals[rng.random_range(0..vals.len())]
                        }
                    })
                    .collect();
                let t: f64 = rng.random();
                let cont = (0..cfg.continuous_fields)
                    .map(|j| {
                        let v = self.start[c][j] + t * self.direction[c][j] + noise.sample(rng);
                        let v = if cfg.skew > 0.0 { (cfg.skew * v).exp() } else { v };
                        v * cfg.value_scale
                    })
                    .collect();
                Record {
                    id: first_id + i,
                    cats,
                    cont,
                    label: Some(Label::Nominal),
                }
            })
            .collect();
        Dataset {
            schema: self.schema.clone(),
            vocabs: self.vocabs.clone(),
            records,
        }
    }
}

/// Generator plus `config.rows` nominal training rows.
pub fn generate_structured(config: &SyntheticConfig, rng: &mut Rng) -> Result<(StructuredGenerator, Dataset)> {
    let generator = StructuredGenerator::new(config.clone(), rng)?;
    let data = generator.sample(config.rows, 0, rng);
    Ok((generator, data))
}
