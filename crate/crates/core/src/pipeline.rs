//! End-to-end fitting: rare-entity filtering, normalization, model
//! initialisation and the three training phases.

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderConfig;
use crate::data::{filter_rare_entities, Dataset, NormalizationStats, UnseenPolicy};
use crate::error::Result;
use crate::estimator::EstimatorConfig;
use crate::model::ChadModel;
use crate::negsampler::NegSamplerConfig;
use crate::rng::{self, Stream};
use crate::trainer::{Phase, TrainLogEntry, TrainSchedule, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub min_count: usize,
    #[serde(default)]
    pub clamp: bool,
    #[serde(default)]
    pub autoencoder: AutoencoderConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub negatives: NegSamplerConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
}

impl PipelineConfig {
    pub fn new(min_count: usize) -> Self {
        Self {
            min_count,
            clamp: false,
            autoencoder: AutoencoderConfig::default(),
            estimator: EstimatorConfig::default(),
            negatives: NegSamplerConfig::default(),
            schedule: TrainSchedule::default(),
        }
    }
}

pub struct Trained {
    pub model: ChadModel,
    /// Filtered and normalized training data.
    pub train: Dataset,
    pub log: Vec<TrainLogEntry>,
}

/// Fits a model on raw (unnormalized) nominal data. `on_phase` runs after
/// each phase, e.g. to write checkpoints.
pub fn fit(
    raw_train: &Dataset,
    config: &PipelineConfig,
    seed: u64,
    mut on_phase: impl FnMut(Phase, &ChadModel) -> Result<()>,
) -> Result<Trained> {
    let filtered = filter_rare_entities(raw_train, config.min_count)?;
    let stats = NormalizationStats::fit(&filtered)?;
    let train = stats.apply(&filtered, config.clamp)?;
    let model = ChadModel::new(
        &train,
        stats,
        &config.autoencoder,
        &config.estimator,
        &mut rng::stream(seed, Stream::Init),
    )?;
    let mut trainer = Trainer::new(model, &train, config.schedule.clone(), config.negatives.clone(), seed)?;
    trainer.run_phase1()?;
    on_phase(Phase::BurnIn, trainer.model())?;
    trainer.run_phase2()?;
    on_phase(Phase::Joint, trainer.model())?;
    trainer.run_phase3()?;
    on_phase(Phase::FineTune, trainer.model())?;
    let log = trainer.log().to_vec();
    let model = trainer.into_model();
    Ok(Trained { model, train, log })
}

/// Encodes raw records against the model's vocabularies and normalization.
pub fn prepare(model: &ChadModel, raw: &Dataset, policy: UnseenPolicy, clamp: bool) -> Result<(Dataset, crate::data::LoadReport)> {
    let (encoded, report) = raw.reencode(&model.vocabs, policy)?;
    Ok((model.normalization.apply(&encoded, clamp)?, report))
}
