//! Command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::conceptbench::{gen_concept_data, run_concept_bench, DetectorRegistry};
use crate::config::{Needs, RunConfig};
use crate::data::{load_csv, Dataset, Label, LoadOptions, LoadReport, Record, RecordSchema, UnseenPolicy};
use crate::error::{Error, Result};
use crate::eval::{
    average_precision_of, latent_projection, noise_ablation, score_dataset, synth_anomalies, synth_anomaly_pool,
    vary_anomaly_harness, write_projection_csv, write_vary_csv,
};
use crate::model::ChadModel;
use crate::negsampler::NegativeSampler;
use crate::pipeline::{fit, prepare};
use crate::rng::{self, Stream};
use crate::synthetic::generate_structured;
use crate::trainer::Phase;

#[derive(Debug, Parser)]
#[command(name = "chadkit", version, about = "Tabular anomaly detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write per-phase checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training CSV; overrides `train_data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a CSV with a trained model.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Average precision, varying-anomaly table and optional noise ablation.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Test CSV; overrides `test_data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Two-dimensional GMM / K-means / uniform-noise benchmark.
    BenchConcept {
        #[command(flatten)]
        common: Common,
    },
    /// 2-D SVD projections of latent vectors and estimator activations.
    VizLatent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the negative samples generated for each input record.
    NegsampleDump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Encode with a trained model's vocabularies and normalization.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write a structured synthetic dataset (train/test CSV and schema).
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Rows for the test split.
        #[arg(long, default_value_t = 1000)]
        test_rows: usize,
    },
}

/// Every JSON report carries the resolved configuration and seed.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'static str,
    seed: u64,
    config: &'a RunConfig,
    result: T,
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    Ok(cfg.out_dir.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_report<T: Serialize>(cfg: &RunConfig, command: &'static str, name: &str, result: T) -> Result<PathBuf> {
    let path = out_dir(cfg)?.join(name);
    write_json(
        &path,
        &Report {
            command,
            seed: cfg.seed,
            config: cfg,
            result,
        },
    )?;
    Ok(path)
}

fn schema_of(cfg: &RunConfig) -> Result<RecordSchema> {
    let path = cfg.schema.as_ref().ok_or_else(|| Error::config("schema: required for this command"))?;
    RecordSchema::load(path)
}

/// Loads `path` and encodes it against the model, turning column mismatches
/// into model mismatches.
fn load_for_model(model: &ChadModel, cfg: &RunConfig, path: &Path) -> Result<(Dataset, LoadReport)> {
    if let Some(schema_path) = &cfg.schema {
        let schema = RecordSchema::load(schema_path)?;
        if schema.hash() != model.schema.hash() {
            return Err(Error::ModelMismatch(format!(
                "schema {} (hash {}) differs from the model's (hash {})",
                schema_path.display(),
                schema.hash(),
                model.schema.hash()
            )));
        }
    }
    let (raw, load_report) = load_csv(path, &model.schema, &LoadOptions::default()).map_err(|e| match e {
        Error::Schema(m) => Error::ModelMismatch(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let (ds, mut report) = prepare(model, &raw, cfg.unseen_policy, cfg.clamp)?;
    report.rows_read = load_report.rows_read;
    report.dropped_missing = load_report.dropped_missing;
    Ok((ds, report))
}

pub fn cmd_train(common: &Common, data: Option<&Path>) -> Result<()> {
    let mut cfg = resolve(common)?;
    if let Some(d) = data {
        cfg.train_data = Some(d.to_path_buf());
    }
    cfg.validate(Needs {
        schema: true,
        train_data: true,
        min_count: true,
        ..Default::default()
    })?;
    let schema = schema_of(&cfg)?;
    let opts = LoadOptions {
        reserve_unknown: cfg.unseen_policy == UnseenPolicy::Reserved,
        ..Default::default()
    };
    let (raw, load_report) = load_csv(cfg.train_data.as_ref().expect("validated"), &schema, &opts)?;
    let dir = out_dir(&cfg)?;
    write_json(&dir.join("resolved_config.json"), &cfg)?;
    let trained = fit(&raw, &cfg.pipeline(), cfg.seed, |phase, model| {
        let path = dir.join(format!("checkpoint_phase{}.chad", phase as u8));
        info!("phase {} done; writing {}", phase as u8, path.display());
        model.save(&path)
    })?;
    trained.model.save(&dir.join("model.chad"))?;
    let log_path = dir.join("training_log.jsonl");
    let mut log = create(&log_path)?;
    for e in &trained.log {
        serde_json::to_writer(&mut log, e)?;
        writeln!(log).map_err(|e| Error::io(&log_path, e))?;
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    write_report(&cfg, "train", "load_report.json", &load_report)?;
    let last = |phase: Phase| trained.log.iter().rev().find(|e| e.phase == phase as u8).cloned();
    write_report(
        &cfg,
        "train",
        "train_report.json",
        serde_json::json!({
            "rows_after_filter": trained.train.len(),
            "arities": trained.train.arities(),
            "last_batch": [last(Phase::BurnIn), last(Phase::Joint), last(Phase::FineTune)],
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ScoreSummary {
    scores_csv: PathBuf,
    scored: usize,
    load_report: LoadReport,
}

pub fn cmd_score(common: &Common, model_path: &Path, data: &Path) -> Result<()> {
    let cfg = resolve(common)?;
    cfg.validate(Needs::default())?;
    let model = ChadModel::load(model_path)?;
    let (ds, report) = load_for_model(&model, &cfg, data)?;
    let mut scored = score_dataset(&model, &ds)?;
    scored.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.id.cmp(&b.id)));
    let csv_path = out_dir(&cfg)?.join("scores.csv");
    let mut w = csv::Writer::from_writer(create(&csv_path)?);
    w.write_record(["record_id", "score"])?;
    for s in &scored {
        w.write_record([s.id.to_string(), s.score.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    if !report.rejected.is_empty() {
        info!("{} rows rejected; see score_report.json", report.rejected.len());
    }
    write_report(
        &cfg,
        "score",
        "score_report.json",
        ScoreSummary {
            scores_csv: csv_path,
            scored: scored.len(),
            load_report: report,
        },
    )?;
    Ok(())
}

pub fn cmd_eval(common: &Common, model_path: &Path, data: Option<&Path>) -> Result<()> {
    let mut cfg = resolve(common)?;
    if let Some(d) = data {
        cfg.test_data = Some(d.to_path_buf());
    }
    let ablation = !cfg.eval.noise_ablation_seeds.is_empty();
    cfg.validate(Needs {
        test_data: true,
        train_data: ablation,
        min_count: ablation,
        ..Default::default()
    })?;
    let model = ChadModel::load(model_path)?;
    let test_path = cfg.test_data.clone().expect("validated");
    let (test, load_report) = load_for_model(&model, &cfg, &test_path)?;
    let labeled = test.records.iter().all(|r| r.label.is_some())
        && test.records.iter().any(|r| r.label == Some(Label::Anomaly))
        && test.records.iter().any(|r| r.label == Some(Label::Nominal));
    let mut synth_rng = rng::stream(cfg.seed, Stream::Synth);
    let eval_set = if labeled {
        test.clone()
    } else {
        synth_anomalies(&test, cfg.eval.anomaly_fraction, &mut synth_rng)?
    };
    let scored = score_dataset(&model, &eval_set)?;
    let ap = average_precision_of(&scored)?;
    info!("average precision {ap:.4} on {} records", scored.len());

    // varying-ratio table over the nominal part of the test set
    let nominal = test.with_records(
        test.records
            .iter()
            .filter(|r| r.label != Some(Label::Anomaly))
            .cloned()
            .collect(),
    );
    let max_pct = cfg.eval.percentages.iter().copied().fold(0.0, f64::max);
    let needed = (max_pct / (100.0 - max_pct) * nominal.len() as f64).round() as usize;
    let next_id = test.records.iter().map(|r| r.id + 1).max().unwrap_or(0);
    let pool: Vec<Record> = if labeled {
        test.records.iter().filter(|r| r.label == Some(Label::Anomaly)).cloned().collect()
    } else {
        synth_anomaly_pool(&nominal, needed.max(1) * 2, next_id, &mut synth_rng)?
    };
    let vary = if cfg.eval.percentages.is_empty() {
        Vec::new()
    } else {
        vary_anomaly_harness(&model, &nominal, &pool, &cfg.eval.percentages, cfg.eval.repeats, cfg.seed)?
    };
    let dir = out_dir(&cfg)?;
    write_vary_csv(&vary, create(&dir.join("vary_anomaly.csv"))?)?;

    let ablation_report = if ablation {
        let schema = model.schema.clone();
        let (raw_train, _) = load_csv(cfg.train_data.as_ref().expect("validated"), &schema, &LoadOptions::default())?;
        let (raw_test, _) = load_csv(&test_path, &schema, &LoadOptions::default())?;
        let raw_eval = if labeled {
            raw_test
        } else {
            // anomalies on raw values: perturb in normalized space, then invert
            let (prepared, _) = prepare(&model, &raw_test, cfg.unseen_policy, cfg.clamp)?;
            let with_anoms = synth_anomalies(&prepared, cfg.eval.anomaly_fraction, &mut rng::stream(cfg.seed, Stream::Synth))?;
            denormalize(&model, &with_anoms)
        };
        Some(noise_ablation(&raw_train, &raw_eval, &cfg.pipeline(), &cfg.eval.noise_ablation_seeds)?)
    } else {
        None
    };
    write_report(
        &cfg,
        "eval",
        "eval_report.json",
        serde_json::json!({
            "average_precision": ap,
            "records": scored.len(),
            "anomalies": scored.iter().filter(|s| s.label == Some(Label::Anomaly)).count(),
            "synthetic_anomalies": !labeled,
            "load_report": load_report,
            "vary_anomaly": vary,
            "noise_ablation": ablation_report,
        }),
    )?;
    Ok(())
}

/// Maps normalized continuous values back to the model's raw units.
fn denormalize(model: &ChadModel, ds: &Dataset) -> Dataset {
    let stats = &model.normalization;
    ds.with_records(
        ds.records
            .iter()
            .map(|r| {
                let cont = r
                    .cont
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let span = stats.max[j] - stats.min[j];
                        if span > 0.0 {
                            stats.min[j] + v * span
                        } else {
                            stats.min[j]
                        }
                    })
                    .collect();
                Record { cont, ..r.clone() }
            })
            .collect(),
    )
}

pub fn cmd_bench_concept(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    cfg.validate(Needs::default())?;
    let registry = DetectorRegistry::default();
    let report = run_concept_bench(&cfg.concept, &registry, cfg.seed)?;
    let dir = out_dir(&cfg)?;
    report.write_runs_csv(create(&dir.join("concept_runs.csv"))?)?;
    report.write_summary_csv(create(&dir.join("concept_ap.csv"))?)?;
    let data = gen_concept_data(&cfg.concept, &mut rng::substream(cfg.seed, Stream::Bench, 0))?;
    data.write_csv(create(&dir.join("concept_data.csv"))?)?;
    for s in &report.summary {
        info!("{:<10} AP {:.4} ± {:.4}", s.method, s.mean_ap, s.sd_ap);
    }
    write_report(&cfg, "bench-concept", "concept_report.json", &report)?;
    Ok(())
}

pub fn cmd_viz_latent(common: &Common, model_path: &Path, data: &Path) -> Result<()> {
    let cfg = resolve(common)?;
    cfg.validate(Needs::default())?;
    let model = ChadModel::load(model_path)?;
    let (ds, _) = load_for_model(&model, &cfg, data)?;
    let refs: Vec<&Record> = ds.records.iter().collect();
    let labels: Vec<String> = ds
        .records
        .iter()
        .map(|r| r.label.map(|l| l.as_str().to_string()).unwrap_or_else(|| "unlabeled".into()))
        .collect();
    let latents = model.latents(&refs)?;
    let penultimate = model.estimator.penultimate(&latents)?;
    let dir = out_dir(&cfg)?;
    let mut warnings = Vec::new();
    for (name, m) in [("latent_projection.csv", &latents), ("penultimate_projection.csv", &penultimate)] {
        let proj = latent_projection(m, labels.clone())?;
        warnings.extend(proj.warning.clone());
        write_projection_csv(&proj, create(&dir.join(name))?)?;
    }
    write_report(
        &cfg,
        "viz-latent",
        "viz_report.json",
        serde_json::json!({ "records": ds.len(), "warnings": warnings }),
    )?;
    Ok(())
}

pub fn cmd_negsample_dump(common: &Common, data: &Path, model_path: Option<&Path>) -> Result<()> {
    let cfg = resolve(common)?;
    let ds = match model_path {
        Some(p) => {
            cfg.validate(Needs::default())?;
            let model = ChadModel::load(p)?;
            load_for_model(&model, &cfg, data)?.0
        }
        None => {
            cfg.validate(Needs {
                schema: true,
                ..Default::default()
            })?;
            let (raw, _) = load_csv(data, &schema_of(&cfg)?, &LoadOptions::default())?;
            crate::data::NormalizationStats::fit(&raw)?.apply(&raw, cfg.clamp)?
        }
    };
    let sampler = NegativeSampler::new(cfg.negatives.clone(), &ds.arities(), ds.schema.n_continuous())?;
    let mut rng = rng::stream(cfg.seed, Stream::NegSampler);
    let path = out_dir(&cfg)?.join("negatives.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["source_id".to_string(), "sample".to_string()];
    header.extend(ds.schema.categorical().iter().cloned());
    header.extend(ds.schema.continuous().iter().cloned());
    header.extend(["swapped_fields".to_string(), "up_fields".to_string(), "down_fields".to_string()]);
    w.write_record(&header)?;
    let names = |fields: &mut dyn Iterator<Item = usize>, from: &[String]| {
        fields.map(|i| from[i].clone()).collect::<Vec<_>>().join(";")
    };
    let mut rows = 0usize;
    for r in &ds.records {
        for k in 0..cfg.negatives.m {
            let s = sampler.sample_one(r, &mut rng);
            let mut row = vec![r.id.to_string(), k.to_string()];
            row.extend(s.record.cats.iter().enumerate().map(|(w, &c)| ds.vocabs[w].decode(c).unwrap_or("").to_string()));
            row.extend(s.record.cont.iter().map(|v| v.to_string()));
            row.push(names(&mut s.cat_fields.iter().copied(), &ds.schema.categorical()));
            row.push(names(&mut s.continuous.up.iter().map(|x| x.0), &ds.schema.continuous()));
            row.push(names(&mut s.continuous.down.iter().map(|x| x.0), &ds.schema.continuous()));
            w.write_record(&row)?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_report(
        &cfg,
        "negsample-dump",
        "negsample_report.json",
        serde_json::json!({ "source_records": ds.len(), "negatives": rows }),
    )?;
    Ok(())
}

pub fn cmd_synth_data(common: &Common, test_rows: usize) -> Result<()> {
    let cfg = resolve(common)?;
    let mut rng = rng::stream(cfg.seed, Stream::Data);
    let (generator, train) = generate_structured(&cfg.synthetic, &mut rng)?;
    let test = generator.sample(test_rows, train.len(), &mut rng);
    let dir = out_dir(&cfg)?;
    train.write_csv(create(&dir.join("train.csv"))?)?;
    test.write_csv(create(&dir.join("test.csv"))?)?;
    write_json(&dir.join("schema.json"), generator.schema())?;
    Ok(())
}

fn init_threads() {
    if let Some(n) = std::env::var("CHADKIT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_err() {
            log::warn!("thread pool already initialised; CHADKIT_THREADS ignored");
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads();
    match cli.command {
        Command::Train { common, data } => cmd_train(&common, data.as_deref()),
        Command::Score { common, model, data } => cmd_score(&common, &model, &data),
        Command::Eval { common, model, data } => cmd_eval(&common, &model, data.as_deref()),
        Command::BenchConcept { common } => cmd_bench_concept(&common),
        Command::VizLatent { common, model, data } => cmd_viz_latent(&common, &model, &data),
        Command::NegsampleDump { common, data, model } => cmd_negsample_dump(&common, &data, model.as_deref()),
        Command::SynthData { common, test_rows } => cmd_synth_data(&common, test_rows),
    }
}
