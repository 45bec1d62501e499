//! Three-phase training with the indicator-gated joint loss
//! `λ·𝟙(t_r)·L_R + 𝟙(t_e)·L_est`.
//!
//! 1. Burn-in: reconstruction only, estimator untouched.
//! 2. Joint: reconstruction on every batch, estimator loss on even-indexed
//!    batches; λ = exp(−t) for phase-2 epoch t.
//! 3. Fine-tune: estimator only, autoencoder frozen, γ ramped linearly from 1
//!    to γ_max.

use log::debug;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{BatchIter, Dataset, Record};
use crate::error::{Error, Result};
use crate::estimator::SecondaryNoiseSpec;
use crate::model::ChadModel;
use crate::negsampler::{NegSamplerConfig, NegativeSampler};
use crate::nn::{AdamConfig, AdamState, Pass};
use crate::rng::{self, Rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    /// Epochs for burn-in, joint and fine-tune phases.
    pub phase_epochs: [usize; 3],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma_max: f64,
    pub secondary_noise: bool,
    pub adam: AdamConfig,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            phase_epochs: [50, 10, 25],
            learning_rate: 5e-4,
            batch_size: 256,
            gamma_max: 2.0,
            secondary_noise: true,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            p.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            p.push("batch_size must be at least 1".into());
        }
        if !(self.gamma_max >= 1.0) {
            p.push(format!("gamma_max must be >= 1, got {}", self.gamma_max));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            p.push("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    BurnIn = 1,
    Joint = 2,
    FineTune = 3,
}

/// Loss indicators for one mini-batch: (𝟙(t_r), 𝟙(t_e)).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateState {
    pub recon: bool,
    pub est: bool,
}

impl GateState {
    pub fn for_batch(phase: Phase, batch_index: usize) -> Self {
        match phase {
            Phase::BurnIn => Self { recon: true, est: false },
            Phase::Joint => Self {
                recon: true,
                est: batch_index % 2 == 0,
            },
            Phase::FineTune => Self { recon: false, est: true },
        }
    }

    pub fn as_bits(self) -> [u8; 2] {
        [self.recon as u8, self.est as u8]
    }
}

/// λ for a given epoch of a phase; `None` in phase 3 where L_R is gated off.
pub fn lambda_for(phase: Phase, epoch: usize) -> Option<f64> {
    match phase {
        Phase::BurnIn => Some(1.0),
        Phase::Joint => Some((-(epoch as f64)).exp()),
        Phase::FineTune => None,
    }
}

/// γ for a given epoch: 1 before phase 3, then a linear ramp reaching
/// `gamma_max` at the last phase-3 epoch (a single-epoch phase 3 uses
/// `gamma_max` directly).
pub fn gamma_for(phase: Phase, epoch: usize, phase3_epochs: usize, gamma_max: f64) -> f64 {
    match phase {
        Phase::FineTune if phase3_epochs > 1 => {
            1.0 + (gamma_max - 1.0) * epoch as f64 / (phase3_epochs - 1) as f64
        }
        Phase::FineTune => gamma_max,
        _ => 1.0,
    }
}

/// `λ·𝟙(t_r)·L_R + 𝟙(t_e)·L_est`; gated-off terms may be absent.
pub fn joint_loss(l_r: Option<f64>, l_est: Option<f64>, gates: GateState, lambda: f64) -> f64 {
    let mut total = 0.0;
    if gates.recon {
        total += lambda * l_r.expect("reconstruction gate on without L_R");
    }
    if gates.est {
        total += l_est.expect("estimator gate on without L_est");
    }
    total
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub phase: u8,
    pub epoch: usize,
    pub batch: usize,
    pub gates: [u8; 2],
    pub lambda: Option<f64>,
    pub gamma: f64,
    #[serde(rename = "L_R")]
    pub l_r: Option<f64>,
    #[serde(rename = "L_est")]
    pub l_est: Option<f64>,
    pub loss: f64,
}

pub struct Trainer<'a> {
    model: ChadModel,
    data: &'a Dataset,
    schedule: TrainSchedule,
    sampler: NegativeSampler,
    noise: SecondaryNoiseSpec,
    batches: BatchIter,
    neg_rng: Rng,
    noise_rng: Rng,
    dropout_rng: Rng,
    ae_opt: AdamState,
    est_opt: AdamState,
    log: Vec<TrainLogEntry>,
}

impl<'a> Trainer<'a> {
    /// `data` must already be filtered and normalized with the model's stats.
    pub fn new(
        model: ChadModel,
        data: &'a Dataset,
        schedule: TrainSchedule,
        neg_config: NegSamplerConfig,
        seed: u64,
    ) -> Result<Self> {
        let problems = schedule.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        if data.is_empty() {
            return Err(Error::config("training data is empty"));
        }
        model.check_compatible(data)?;
        let sampler = NegativeSampler::new(neg_config, &data.arities(), data.schema.n_continuous())?;
        Ok(Self {
            noise: SecondaryNoiseSpec {
                enabled: schedule.secondary_noise,
            },
            batches: BatchIter::new(data.len(), schedule.batch_size, rng::stream(seed, Stream::Shuffle))?,
            neg_rng: rng::stream(seed, Stream::NegSampler),
            noise_rng: rng::stream(seed, Stream::Noise),
            dropout_rng: rng::stream(seed, Stream::Dropout),
            ae_opt: AdamState::new(schedule.adam),
            est_opt: AdamState::new(schedule.adam),
            model,
            data,
            schedule,
            sampler,
            log: Vec::new(),
        })
    }

    pub fn model(&self) -> &ChadModel {
        &self.model
    }

    pub fn into_model(self) -> ChadModel {
        self.model
    }

    pub fn log(&self) -> &[TrainLogEntry] {
        &self.log
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    pub fn run_phase1(&mut self) -> Result<()> {
        self.run_phase(Phase::BurnIn)
    }

    pub fn run_phase2(&mut self) -> Result<()> {
        self.run_phase(Phase::Joint)
    }

    pub fn run_phase3(&mut self) -> Result<()> {
        self.run_phase(Phase::FineTune)
    }

    /// All three phases in order.
    pub fn run(&mut self) -> Result<()> {
        self.run_phase1()?;
        self.run_phase2()?;
        self.run_phase3()
    }

    fn run_phase(&mut self, phase: Phase) -> Result<()> {
        let epochs = self.schedule.phase_epochs[phase as usize - 1];
        for epoch in 0..epochs {
            let lambda = lambda_for(phase, epoch);
            let gamma = gamma_for(phase, epoch, self.schedule.phase_epochs[2], self.schedule.gamma_max);
            for (batch, idx) in self.batches.next_epoch().into_iter().enumerate() {
                let gates = GateState::for_batch(phase, batch);
                let records: Vec<&Record> = idx.iter().map(|&i| &self.data.records[i]).collect();
                let (l_r, l_est) = match phase {
                    Phase::FineTune => (None, Some(self.estimator_only_step(&records, gamma)?)),
                    _ => self.autoencoder_step(&records, gates, lambda.unwrap_or(1.0), gamma)?,
                };
                let loss = joint_loss(l_r, l_est, gates, lambda.unwrap_or(0.0));
                let entry = TrainLogEntry {
                    phase: phase as u8,
                    epoch,
                    batch,
                    gates: gates.as_bits(),
                    lambda,
                    gamma,
                    l_r,
                    l_est,
                    loss,
                };
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at phase {}, epoch {epoch}, batch {batch}: {entry:?}",
                        phase as u8
                    )));
                }
                self.log.push(entry);
            }
            if let Some(last) = self.log.last() {
                debug!("phase {} epoch {epoch}: loss {:.6}", phase as u8, last.loss);
            }
        }
        Ok(())
    }

    fn negatives_for(&mut self, records: &[&Record]) -> Vec<Record> {
        let mut out = Vec::with_capacity(records.len() * self.sampler.config().m);
        for r in records {
            out.extend(self.sampler.generate(r, &mut self.neg_rng));
        }
        out
    }

    /// Phases 1 and 2: autoencoder always updated; estimator when gated on.
    fn autoencoder_step(
        &mut self,
        records: &[&Record],
        gates: GateState,
        lambda: f64,
        gamma: f64,
    ) -> Result<(Option<f64>, Option<f64>)> {
        let ae = &self.model.autoencoder;
        let mut ae_grad = ae.zeros_like();
        let mut pass = Pass::Training(&mut self.dropout_rng);
        let pos = ae.forward(records, true, &mut pass)?;
        let l_r = pos.reconstruction_loss();

        if !gates.est {
            ae.backward(records, &pos, Some(lambda), None, &mut ae_grad);
            drop(pass);
            self.ae_opt
                .step(&mut self.model.autoencoder, &ae_grad, self.schedule.learning_rate)?;
            return Ok((Some(l_r), None));
        }

        drop(pass);
        let negatives = self.negatives_for(records);
        let neg_refs: Vec<&Record> = negatives.iter().collect();
        let ae = &self.model.autoencoder;
        let mut pass = Pass::Training(&mut self.dropout_rng);
        let neg = ae.forward(&neg_refs, false, &mut pass)?;
        drop(pass);
        let noisy = self.noise.inject(&neg.latent, &mut self.noise_rng);
        let mut est_grad = self.model.estimator.zeros_like();
        let mut pass = Pass::Training(&mut self.dropout_rng);
        let step = self
            .model
            .estimator
            .loss_and_grad(&pos.latent, &noisy, gamma, &mut pass, &mut est_grad)?;
        ae.backward(records, &pos, Some(lambda), Some(&step.d_pos_latent), &mut ae_grad);
        ae.backward(&neg_refs, &neg, None, Some(&step.d_neg_latent), &mut ae_grad);
        drop(pass);
        let lr = self.schedule.learning_rate;
        self.ae_opt.step(&mut self.model.autoencoder, &ae_grad, lr)?;
        self.est_opt.step(&mut self.model.estimator, &est_grad, lr)?;
        Ok((Some(l_r), Some(step.loss)))
    }

    /// Phase 3: latents from the frozen encoder (inference mode), estimator updated.
    fn estimator_only_step(&mut self, records: &[&Record], gamma: f64) -> Result<f64> {
        let negatives = self.negatives_for(records);
        let neg_refs: Vec<&Record> = negatives.iter().collect();
        let ae = &self.model.autoencoder;
        let pos_latent = ae.encode(records)?;
        let neg_latent: Array2<f64> = ae.encode(&neg_refs)?;
        let noisy = self.noise.inject(&neg_latent, &mut self.noise_rng);
        let mut est_grad = self.model.estimator.zeros_like();
        let mut pass = Pass::Training(&mut self.dropout_rng);
        let step = self
            .model
            .estimator
            .loss_and_grad(&pos_latent, &noisy, gamma, &mut pass, &mut est_grad)?;
        drop(pass);
        self.est_opt
            .step(&mut self.model.estimator, &est_grad, self.schedule.learning_rate)?;
        Ok(step.loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gate_table() {
        assert_eq!(GateState::for_batch(Phase::BurnIn, 3).as_bits(), [1, 0]);
        assert_eq!(GateState::for_batch(Phase::Joint, 0).as_bits(), [1, 1]);
        assert_eq!(GateState::for_batch(Phase::Joint, 1).as_bits(), [1, 0]);
        assert_eq!(GateState::for_batch(Phase::Joint, 2).as_bits(), [1, 1]);
        assert_eq!(GateState::for_batch(Phase::FineTune, 1).as_bits(), [0, 1]);
    }

    #[test]
    fn joint_loss_examples() {
        let g = |r, e| GateState { recon: r, est: e };
        assert_eq!(joint_loss(Some(0.4), None, g(true, false), 1.0), 0.4);
        assert_eq!(joint_loss(None, Some(0.2), g(false, true), 1.0), 0.2);
        let lam = (-1.0_f64).exp();
        let v = joint_loss(Some(0.4), Some(0.2), g(true, true), lam);
        assert_abs_diff_eq!(v, 0.4 * lam + 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.34715, epsilon = 1e-5);
        // λ scales only L_R
        assert_eq!(joint_loss(Some(0.0), Some(0.3), g(true, true), 123.0), 0.3);
    }

    #[test]
    fn lambda_and_gamma_schedules() {
        assert_eq!(lambda_for(Phase::BurnIn, 7), Some(1.0));
        let l: Vec<f64> = (0..3).map(|t| lambda_for(Phase::Joint, t).unwrap()).collect();
        assert_abs_diff_eq!(l[0], 1.0);
        assert_abs_diff_eq!(l[1], 0.36788, epsilon = 1e-5);
        assert_abs_diff_eq!(l[2], 0.13534, epsilon = 1e-5);
        assert_eq!(lambda_for(Phase::FineTune, 0), None);
        assert_eq!(gamma_for(Phase::Joint, 4, 25, 2.0), 1.0);
        assert_eq!(gamma_for(Phase::FineTune, 0, 25, 2.0), 1.0);
        assert_eq!(gamma_for(Phase::FineTune, 24, 25, 2.0), 2.0);
        let ramp: Vec<f64> = (0..5).map(|e| gamma_for(Phase::FineTune, e, 5, 3.0)).collect();
        assert!(ramp.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn schedule_validation_lists_all_problems() {
        let s = TrainSchedule {
            learning_rate: 0.0,
            batch_size: 0,
            gamma_max: 0.5,
            ..Default::default()
        };
        assert_eq!(s.validate().len(), 3);
        assert!(TrainSchedule::default().validate().is_empty());
    }
}
