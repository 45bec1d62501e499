//! Random-subspace negative sampling for heterogeneous records.
//!
//! Each negative starts from a training record. Between one and
//! `max(1, ⌊k/2⌋)` categorical fields are swapped for a different entity of
//! the same field, with fields chosen in proportion to dampened arity. Then
//! `⌊r/4⌋` continuous fields are pushed up by `U(0,1)+δ` and another disjoint
//! `⌊r/4⌋` by `U(0,1)−δ`, without clamping.

use rand::distr::Open01;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegSamplerConfig {
    /// Negatives per training record.
    pub m: usize,
    /// Noise deviation δ.
    pub delta: f64,
    pub dampening: f64,
}

impl Default for NegSamplerConfig {
    fn default() -> Self {
        Self {
            m: 10,
            delta: 0.5,
            dampening: 0.75,
        }
    }
}

/// Field-selection probabilities `q_w / Σ q`, `q_w = (a_w / Σ a)^dampening`.
pub fn category_probs(arities: &[usize], dampening: f64) -> Result<Vec<f64>> {
    if arities.is_empty() {
        return Err(Error::config("no categorical fields to select from"));
    }
    if arities.contains(&0) {
        return Err(Error::config("arity must be at least 1"));
    }
    let total: usize = arities.iter().sum();
    let q: Vec<f64> = arities
        .iter()
        .map(|&a| (a as f64 / total as f64).powf(dampening))
        .collect();
    let z: f64 = q.iter().sum();
    Ok(q.into_iter().map(|v| v / z).collect())
}

/// One shifted continuous field: `(field, increment)`.
pub type Shift = (usize, f64);

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousPerturbation {
    pub up: Vec<Shift>,
    pub down: Vec<Shift>,
}

/// A negative sample plus a record of what was changed.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSample {
    pub record: Record,
    /// Perturbed categorical fields in draw order.
    pub cat_fields: Vec<usize>,
    pub continuous: ContinuousPerturbation,
}

#[derive(Clone, Debug)]
pub struct NegativeSampler {
    config: NegSamplerConfig,
    arities: Vec<usize>,
    probs: Vec<f64>,
    continuous_fields: usize,
}

impl NegativeSampler {
    pub fn new(config: NegSamplerConfig, arities: &[usize], continuous_fields: usize) -> Result<Self> {
        let mut problems = Vec::new();
        if config.m == 0 {
            problems.push("negatives per record (m) must be at least 1".to_string());
        }
        if !(config.delta > 0.0) {
            problems.push(format!("noise deviation delta must be positive, got {}", config.delta));
        }
        let swappable = arities.iter().filter(|&&a| a >= 2).count();
        if swappable == 0 && continuous_fields < 4 {
            problems.push(format!(
                "negative sampler cannot act: {swappable} categorical fields with arity >= 2 and {continuous_fields} continuous fields (< 4)"
            ));
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let probs = if arities.is_empty() {
            Vec::new()
        } else {
            category_probs(arities, config.dampening)?
        };
        Ok(Self {
            config,
            arities: arities.to_vec(),
            probs,
            continuous_fields,
        })
    }

    pub fn config(&self) -> &NegSamplerConfig {
        &self.config
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Upper end of the per-sample categorical count: `max(1, ⌊k/2⌋)`.
    pub fn max_categorical(&self) -> usize {
        (self.arities.len() / 2).max(1)
    }

    /// Swaps `count` distinct fields, drawn without replacement in proportion
    /// to the selection probabilities. Arity-1 fields are never drawn.
    pub fn perturb_categoricals(&self, record: &mut Record, count: usize, rng: &mut Rng) -> Vec<usize> {
        let mut weights: Vec<f64> = self
            .probs
            .iter()
            .zip(&self.arities)
            .map(|(&p, &a)| if a >= 2 { p } else { 0.0 })
            .collect();
        let mut chosen = Vec::with_capacity(count);
        for _ in 0..count {
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                break;
            }
            let mut u = rng.random::<f64>() * total;
            let mut field = weights.iter().rposition(|&w| w > 0.0).expect("positive total");
            for (w, &wt) in weights.iter().enumerate() {
                if wt > 0.0 && u < wt {
                    field = w;
                    break;
                }
                u -= wt;
            }
            weights[field] = 0.0;
            // uniform over the other a_w - 1 entities
            let old = record.cats[field];
            let mut new = rng.random_range(0..self.arities[field] - 1);
            if new >= old {
                new += 1;
            }
            record.cats[field] = new;
            chosen.push(field);
        }
        chosen
    }

    /// Shifts `⌊r/4⌋` fields up and a disjoint `⌊r/4⌋` fields down.
    pub fn perturb_continuous(&self, values: &mut [f64], rng: &mut Rng) -> ContinuousPerturbation {
        let r = values.len();
        let q = r / 4;
        let delta = self.config.delta;
        let picks = sample(rng, r, 2 * q).into_vec();
        let mut up = Vec::with_capacity(q);
        let mut down = Vec::with_capacity(q);
        for (n, &j) in picks.iter().enumerate() {
            let u: f64 = rng.sample(Open01);
            if n < q {
                let inc = u + delta;
                values[j] += inc;
                up.push((j, inc));
            } else {
                let inc = u - delta;
                values[j] += inc;
                down.push((j, inc));
            }
        }
        ContinuousPerturbation { up, down }
    }

    /// One negative derived from `source`.
    pub fn sample_one(&self, source: &Record, rng: &mut Rng) -> NegativeSample {
        let mut record = source.clone();
        record.label = None;
        let cat_fields = if self.arities.is_empty() {
            Vec::new()
        } else {
            let count = rng.random_range(1..=self.max_categorical());
            self.perturb_categoricals(&mut record, count, rng)
        };
        debug_assert_eq!(record.cont.len(), self.continuous_fields);
        let continuous = self.perturb_continuous(&mut record.cont, rng);
        NegativeSample {
            record,
            cat_fields,
            continuous,
        }
    }

    /// `m` negatives for `source`.
    pub fn generate(&self, source: &Record, rng: &mut Rng) -> Vec<Record> {
        (0..self.config.m).map(|_| self.sample_one(source, rng).record).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;

    fn rec(cats: Vec<usize>, cont: Vec<f64>) -> Record {
        Record {
            id: 0,
            cats,
            cont,
            label: None,
        }
    }

    #[test]
    fn probability_examples() {
        assert_eq!(category_probs(&[7], 0.75).unwrap(), vec![1.0]);
        assert_eq!(category_probs(&[5, 5], 0.75).unwrap(), vec![0.5, 0.5]);
        // (100/110)^0.75 and (10/110)^0.75, normalized
        let q0 = (100.0_f64 / 110.0).powf(0.75);
        let q1 = (10.0_f64 / 110.0).powf(0.75);
        let p = category_probs(&[100, 10], 0.75).unwrap();
        assert_abs_diff_eq!(p[0], q0 / (q0 + q1), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.849, epsilon = 5e-4);
        assert_abs_diff_eq!(p[1], 0.151, epsilon = 5e-4);
        assert!(category_probs(&[], 0.75).is_err());
    }

    #[test]
    fn single_field_is_always_swapped() {
        let s = NegativeSampler::new(NegSamplerConfig::default(), &[4], 0).unwrap();
        let mut rng = stream(1, Stream::NegSampler);
        for _ in 0..200 {
            let neg = s.sample_one(&rec(vec![2], vec![]), &mut rng);
            assert_eq!(neg.cat_fields, vec![0]);
            assert_ne!(neg.record.cats[0], 2);
        }
    }

    #[test]
    fn arity_two_swap_is_forced() {
        let s = NegativeSampler::new(NegSamplerConfig::default(), &[2], 0).unwrap();
        let mut rng = stream(2, Stream::NegSampler);
        for start in [0, 1] {
            let neg = s.sample_one(&rec(vec![start], vec![]), &mut rng);
            assert_eq!(neg.record.cats[0], 1 - start);
        }
    }

    #[test]
    fn arity_one_fields_are_skipped() {
        let s = NegativeSampler::new(NegSamplerConfig::default(), &[1, 1, 3, 1], 0).unwrap();
        let mut rng = stream(3, Stream::NegSampler);
        for _ in 0..200 {
            let neg = s.sample_one(&rec(vec![0, 0, 1, 0], vec![]), &mut rng);
            assert_eq!(neg.cat_fields, vec![2]);
        }
    }

    #[test]
    fn continuous_counts_follow_floor() {
        let s = NegativeSampler::new(NegSamplerConfig::default(), &[3], 8).unwrap();
        let mut rng = stream(4, Stream::NegSampler);
        let mut v = vec![0.5; 8];
        let p = s.perturb_continuous(&mut v, &mut rng);
        assert_eq!((p.up.len(), p.down.len()), (2, 2));
        for &(_, inc) in &p.up {
            assert!(inc > 0.5 && inc < 1.5);
        }
        let mut three = vec![0.5; 3];
        let p = s.perturb_continuous(&mut three, &mut rng);
        assert!(p.up.is_empty() && p.down.is_empty());
        assert_eq!(three, vec![0.5; 3]);
    }

    #[test]
    fn categorical_count_range_for_six_fields() {
        let s = NegativeSampler::new(NegSamplerConfig::default(), &[5; 6], 0).unwrap();
        assert_eq!(s.max_categorical(), 3);
        let mut rng = stream(5, Stream::NegSampler);
        let mut seen = [false; 4];
        for _ in 0..500 {
            let n = s.sample_one(&rec(vec![0; 6], vec![]), &mut rng).cat_fields.len();
            assert!((1..=3).contains(&n));
            seen[n] = true;
        }
        assert!(seen[1] && seen[2] && seen[3]);
    }

    #[test]
    fn generate_is_seeded_and_always_differs() {
        let cfg = NegSamplerConfig::default();
        let s = NegativeSampler::new(cfg, &[3, 4], 5).unwrap();
        let src = rec(vec![1, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let a = s.generate(&src, &mut stream(9, Stream::NegSampler));
        let b = s.generate(&src, &mut stream(9, Stream::NegSampler));
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
        assert!(a.iter().all(|n| n != &src));
    }

    #[test]
    fn degenerate_schema_is_a_config_error() {
        assert!(matches!(
            NegativeSampler::new(NegSamplerConfig::default(), &[], 3),
            Err(Error::Config(_))
        ));
        assert!(NegativeSampler::new(NegSamplerConfig::default(), &[1, 1], 3).is_err());
        assert!(NegativeSampler::new(NegSamplerConfig::default(), &[], 4).is_ok());
        let bad = NegSamplerConfig {
            m: 0,
            delta: -1.0,
            ..Default::default()
        };
        match NegativeSampler::new(bad, &[3], 0) {
            Err(Error::Config(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
