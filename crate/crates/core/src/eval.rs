//! Scoring, average precision, synthetic anomalies, the varying-ratio and
//! secondary-noise harnesses, and 2-D SVD projections of latent spaces.

use std::io::Write;

use log::{info, warn};
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::distr::Open01;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Record};
use crate::error::{Error, Result};
use crate::estimator::SecondaryNoiseSpec;
use crate::model::ChadModel;
use crate::negsampler::NegativeSampler;
use crate::rng::{self, Rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub id: usize,
    pub score: f64,
    pub label: Option<Label>,
}

/// Inference-mode scores for every record; lower means more anomalous.
pub fn score_dataset(model: &ChadModel, dataset: &Dataset) -> Result<Vec<ScoredRecord>> {
    model.check_compatible(dataset)?;
    let refs: Vec<&Record> = dataset.records.iter().collect();
    let mut out = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(4096) {
        let scores = model.score(chunk)?;
        out.extend(chunk.iter().zip(scores).map(|(r, score)| ScoredRecord {
            id: r.id,
            score,
            label: r.label,
        }));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

fn ranking(scores: &[f64], anomaly_is_low_score: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep input (record id) order
    if anomaly_is_low_score {
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    } else {
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    }
    order
}

fn check_labels(labels: &[bool], n: usize) -> Result<usize> {
    if labels.len() != n {
        return Err(Error::Dimension {
            context: "labels",
            expected: n,
            actual: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::Metric(format!(
            "average precision needs both classes, got {positives} anomalies out of {n}"
        )));
    }
    Ok(positives)
}

/// Precision/recall at every cut of the ranking (most anomalous first).
/// `labels[i]` is true for anomalies.
pub fn precision_recall_curve(scores: &[f64], labels: &[bool], anomaly_is_low_score: bool) -> Result<Vec<PrPoint>> {
    let positives = check_labels(labels, scores.len())? as f64;
    let mut tp = 0.0;
    Ok(ranking(scores, anomaly_is_low_score)
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            if labels[i] {
                tp += 1.0;
            }
            PrPoint {
                threshold: scores[i],
                precision: tp / (rank + 1) as f64,
                recall: tp / positives,
            }
        })
        .collect())
}

/// Step-interpolated area under the precision-recall curve,
/// `Σ_n (R_n − R_{n−1})·P_n`, with anomalies as the positive class.
pub fn average_precision(scores: &[f64], labels: &[bool], anomaly_is_low_score: bool) -> Result<f64> {
    let curve = precision_recall_curve(scores, labels, anomaly_is_low_score)?;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for p in curve {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    Ok(ap)
}

/// AP of scored records; every record must carry a label.
pub fn average_precision_of(scored: &[ScoredRecord]) -> Result<f64> {
    let labels = scored
        .iter()
        .map(|s| {
            s.label
                .map(Label::is_anomaly)
                .ok_or_else(|| Error::Metric(format!("record {} has no label", s.id)))
        })
        .collect::<Result<Vec<bool>>>()?;
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    average_precision(&scores, &labels, true)
}

/// Copy of `source` with one categorical field swapped for a different
/// value and one continuous field `v` moved by `U(0.25, 0.75)` when
/// `v < 0.5`, else by `−U(0.25, 0.75)`. Values are not clamped.
pub fn perturb_record(source: &Record, arities: &[usize], rng: &mut Rng) -> Record {
    let mut rec = source.clone();
    rec.label = Some(Label::Anomaly);
    let swappable: Vec<usize> = (0..arities.len()).filter(|&w| arities[w] >= 2).collect();
    if !swappable.is_empty() {
        let w = swappable[rng.random_range(0..swappable.len())];
        let mut v = rng.random_range(0..arities[w] - 1);
        if v >= rec.cats[w] {
            v += 1;
        }
        rec.cats[w] = v;
    }
    if !rec.cont.is_empty() {
        let j = rng.random_range(0..rec.cont.len());
        let u: f64 = rng.sample(Open01);
        let p = 0.25 + 0.5 * u;
        if rec.cont[j] < 0.5 {
            rec.cont[j] += p;
        } else {
            rec.cont[j] -= p;
        }
    }
    rec
}

fn check_synth_schema(dataset: &Dataset) -> Result<()> {
    if dataset.arities().iter().all(|&a| a < 2) || dataset.schema.n_continuous() == 0 {
        return Err(Error::config(
            "synthetic anomalies need a categorical field with arity >= 2 and a continuous field",
        ));
    }
    Ok(())
}

/// `count` anomalies derived from randomly chosen (normalized) records of
/// `source`; ids continue after `first_id`.
pub fn synth_anomaly_pool(source: &Dataset, count: usize, first_id: usize, rng: &mut Rng) -> Result<Vec<Record>> {
    check_synth_schema(source)?;
    if source.is_empty() {
        return Err(Error::config("cannot derive anomalies from an empty dataset"));
    }
    let arities = source.arities();
    let n = source.len();
    let picks: Vec<usize> = if count <= n {
        sample(rng, n, count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..n)).collect()
    };
    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(i, src)| {
            let mut r = perturb_record(&source.records[src], &arities, rng);
            r.id = first_id + i;
            r
        })
        .collect())
}

/// Labels `test` nominal and appends `round(fraction · |test|)` anomalies.
pub fn synth_anomalies(test: &Dataset, fraction: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(fraction >= 0.0 && fraction.is_finite()) {
        return Err(Error::config(format!("anomaly fraction must be >= 0, got {fraction}")));
    }
    let count = (fraction * test.len() as f64).round() as usize;
    let next_id = test.records.iter().map(|r| r.id + 1).max().unwrap_or(0);
    let anomalies = synth_anomaly_pool(test, count, next_id, rng)?;
    let mut records: Vec<Record> = test
        .records
        .iter()
        .map(|r| Record {
            label: Some(Label::Nominal),
            ..r.clone()
        })
        .collect();
    records.extend(anomalies);
    Ok(test.with_records(records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaryRow {
    pub percentage: f64,
    pub anomalies: usize,
    pub mean_ap: f64,
    pub sd_ap: f64,
    pub aps: Vec<f64>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// AP at each anomaly percentage of the combined test set, each repeated
/// `repeats` times with fresh anomaly subsamples from `anomaly_pool`.
pub fn vary_anomaly_harness(
    model: &ChadModel,
    nominal_test: &Dataset,
    anomaly_pool: &[Record],
    percentages: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Vec<VaryRow>> {
    if repeats == 0 {
        return Err(Error::config("repeats must be at least 1"));
    }
    let nominal: Vec<ScoredRecord> = score_dataset(model, nominal_test)?;
    let pool_refs: Vec<&Record> = anomaly_pool.iter().collect();
    let pool_scores = model.score(&pool_refs)?;
    let n_nom = nominal.len() as f64;
    let mut rows = Vec::with_capacity(percentages.len());
    for (pi, &pct) in percentages.iter().enumerate() {
        if !(0.0..100.0).contains(&pct) {
            return Err(Error::config(format!("percentage {pct} outside [0, 100)")));
        }
        let count = (pct / (100.0 - pct) * n_nom).round() as usize;
        if count > anomaly_pool.len() {
            return Err(Error::config(format!(
                "anomaly pool exhausted: {pct}% needs {count} anomalies, pool has {}",
                anomaly_pool.len()
            )));
        }
        let mut aps = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let mut rng = rng::substream(seed, Stream::Synth, (pi * 1000 + rep) as u64);
            let mut scores: Vec<f64> = nominal.iter().map(|s| s.score).collect();
            let mut labels = vec![false; nominal.len()];
            for i in sample(&mut rng, anomaly_pool.len(), count).into_iter() {
                scores.push(pool_scores[i]);
                labels.push(true);
            }
            aps.push(average_precision(&scores, &labels, true)?);
        }
        let (mean_ap, sd_ap) = mean_sd(&aps);
        rows.push(VaryRow {
            percentage: pct,
            anomalies: count,
            mean_ap,
            sd_ap,
            aps,
        });
    }
    let increasing = rows.windows(2).all(|w| w[1].mean_ap >= w[0].mean_ap);
    info!("varying-anomaly trend monotone non-decreasing: {increasing}");
    Ok(rows)
}

pub fn write_vary_csv<W: Write>(rows: &[VaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["percentage", "anomalies", "mean_ap", "sd_ap"])?;
    for r in rows {
        w.write_record([
            r.percentage.to_string(),
            r.anomalies.to_string(),
            r.mean_ap.to_string(),
            r.sd_ap.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `[n × 2]` coordinates on the top-2 principal axes.
    pub points: Array2<f64>,
    pub labels: Vec<String>,
    /// Unit right singular vectors, most significant first.
    pub axes: [Vec<f64>; 2],
    pub singular_values: Vec<f64>,
    pub warning: Option<String>,
}

/// Centers `latents` and projects them onto the two leading right singular
/// vectors. Rank-deficient input gets a zero second coordinate.
pub fn latent_projection(latents: &Array2<f64>, labels: Vec<String>) -> Result<Projection> {
    let (n, d) = latents.dim();
    if n < 2 {
        return Err(Error::config("projection needs at least two latent vectors"));
    }
    if labels.len() != n {
        return Err(Error::Dimension {
            context: "projection labels",
            expected: n,
            actual: labels.len(),
        });
    }
    let mean = latents.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = latents - &mean;
    let m = DMatrix::from_fn(n, d, |i, j| centered[[i, j]]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let top = singular_values.first().copied().unwrap_or(0.0);
    let tol = top * (n.max(d) as f64) * f64::EPSILON;
    let rank = singular_values.iter().filter(|&&s| s > tol).count();

    let axis = |slot: usize| -> Vec<f64> {
        let Some(&row) = order.get(slot) else {
            return vec![0.0; d];
        };
        if slot >= rank {
            return vec![0.0; d];
        }
        let mut v: Vec<f64> = (0..d).map(|j| v_t[(row, j)]).collect();
        // deterministic sign: largest-magnitude component positive
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let axes = [axis(0), axis(1)];
    let warning = (rank < 2).then(|| {
        let msg = format!("latent matrix has rank {rank} < 2; second coordinate set to zero");
        warn!("{msg}");
        msg
    });
    let mut points = Array2::zeros((n, 2));
    for i in 0..n {
        for (c, ax) in axes.iter().enumerate() {
            points[[i, c]] = (0..d).map(|j| centered[[i, j]] * ax[j]).sum();
        }
    }
    Ok(Projection {
        points,
        labels,
        axes,
        singular_values,
        warning,
    })
}

pub fn write_projection_csv<W: Write>(projection: &Projection, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "label"])?;
    for (row, label) in projection.points.rows().into_iter().zip(&projection.labels) {
        w.write_record([row[0].to_string(), row[1].to_string(), label.clone()])?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))
}

/// Per-dimension variance of negative latents with and without secondary noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    pub draws: usize,
    pub var_clean: Vec<f64>,
    pub var_noisy: Vec<f64>,
    /// Standard error of `var_noisy − var_clean` per dimension.
    pub increase_se: Vec<f64>,
}

/// Encodes fixed `negatives` once with the (frozen) encoder, then adds
/// `draws_per_negative` independent noise draws to each latent.
pub fn latent_spread(
    model: &ChadModel,
    negatives: &[Record],
    draws_per_negative: usize,
    rng: &mut Rng,
) -> Result<SpreadStats> {
    let refs: Vec<&Record> = negatives.iter().collect();
    let clean = model.latents(&refs)?;
    let (n, p) = clean.dim();
    let noise = SecondaryNoiseSpec { enabled: true };
    let mut noisy_blocks = Vec::with_capacity(draws_per_negative);
    for _ in 0..draws_per_negative {
        noisy_blocks.push(noise.inject(&clean, rng));
    }
    let total = (n * draws_per_negative) as f64;
    let mut var_clean = vec![0.0; p];
    let mut var_noisy = vec![0.0; p];
    let mut increase_se = vec![0.0; p];
    for j in 0..p {
        let col = clean.column(j);
        let mean_c = col.mean().unwrap_or(0.0);
        let mean_n = noisy_blocks.iter().map(|b| b.column(j).sum()).sum::<f64>() / total;
        let mut sum_t = 0.0;
        let mut sum_t2 = 0.0;
        let mut sq_noisy = 0.0;
        for b in &noisy_blocks {
            for i in 0..n {
                let dn = (b[[i, j]] - mean_n).powi(2);
                let dc = (col[i] - mean_c).powi(2);
                sq_noisy += dn;
                let t = dn - dc;
                sum_t += t;
                sum_t2 += t * t;
            }
        }
        var_clean[j] = col.iter().map(|v| (v - mean_c).powi(2)).sum::<f64>() / n as f64;
        var_noisy[j] = sq_noisy / total;
        let mean_t = sum_t / total;
        increase_se[j] = ((sum_t2 / total - mean_t * mean_t) / total).sqrt();
    }
    Ok(SpreadStats {
        draws: n * draws_per_negative,
        var_clean,
        var_noisy,
        increase_se,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub ap_with_noise: f64,
    pub ap_without_noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    /// Negative-latent spread under the noise-trained model of each seed.
    pub spread: Vec<SpreadStats>,
    /// Reference AP pair reported for KDDCup99 (with, without noise).
    pub reference_kddcup99: (f64, f64),
}

/// Trains with and without secondary noise for each seed and compares AP on
/// `labeled_test_raw` (raw values, labels attached).
pub fn noise_ablation(
    raw_train: &Dataset,
    labeled_test_raw: &Dataset,
    config: &crate::pipeline::PipelineConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    let mut runs = Vec::with_capacity(seeds.len());
    let mut spread = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut aps = [0.0; 2];
        for (slot, noise_on) in [(0, true), (1, false)] {
            let mut cfg = config.clone();
            cfg.schedule.secondary_noise = noise_on;
            let trained = crate::pipeline::fit(raw_train, &cfg, seed, |_, _| Ok(()))?;
            let (test, _) = crate::pipeline::prepare(
                &trained.model,
                labeled_test_raw,
                crate::data::UnseenPolicy::Reject,
                cfg.clamp,
            )?;
            aps[slot] = average_precision_of(&score_dataset(&trained.model, &test)?)?;
            if noise_on {
                let sampler = NegativeSampler::new(
                    cfg.negatives.clone(),
                    &trained.train.arities(),
                    trained.train.schema.n_continuous(),
                )?;
                let mut neg_rng = rng::substream(seed, Stream::NegSampler, 1);
                let sources = trained.train.records.iter().take(1000);
                let negatives: Vec<Record> = sources.map(|r| sampler.sample_one(r, &mut neg_rng).record).collect();
                let mut noise_rng = rng::substream(seed, Stream::Noise, 1);
                spread.push(latent_spread(&trained.model, &negatives, 100, &mut noise_rng)?);
            }
        }
        runs.push(AblationRun {
            seed,
            ap_with_noise: aps[0],
            ap_without_noise: aps[1],
        });
    }
    Ok(AblationReport {
        runs,
        spread,
        reference_kddcup99: (0.9723, 0.9325),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RecordSchema;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn ap_examples() {
        let s = [0.1, 0.2, 0.3, 0.4];
        let ap = average_precision(&s, &[true, false, true, false], true).unwrap();
        assert_abs_diff_eq!(ap, 0.5 * (1.0 + 2.0 / 3.0), epsilon = 1e-15);
        assert_eq!(average_precision(&s, &[true, true, false, false], true).unwrap(), 1.0);
        // orientation flag flips the ranking
        assert_eq!(average_precision(&s, &[false, false, true, true], false).unwrap(), 1.0);
    }

    #[test]
    fn ap_single_class_is_undefined() {
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[false, false], true),
            Err(Error::Metric(_))
        ));
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[true, true], true),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn ties_follow_input_order() {
        // all tied: ranking is input order, positive at rank 2
        let ap = average_precision(&[0.5, 0.5, 0.5], &[false, true, false], true).unwrap();
        assert_abs_diff_eq!(ap, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn pr_curve_recall_is_monotone() {
        let c = precision_recall_curve(&[0.3, 0.1, 0.9, 0.2], &[true, false, false, true], true).unwrap();
        assert!(c.windows(2).all(|w| w[1].recall >= w[0].recall));
        assert!(c.iter().all(|p| (0.0..=1.0).contains(&p.precision)));
        assert_eq!(c.last().unwrap().recall, 1.0);
    }

    fn small_dataset() -> Dataset {
        let schema = RecordSchema::new(vec!["a".into(), "b".into()], vec!["x".into(), "y".into()], None).unwrap();
        let mut vocabs = vec![crate::data::Vocabulary::default(); 2];
        for v in ["p", "q", "r"] {
            vocabs[0].intern(v);
        }
        for v in ["s", "t"] {
            vocabs[1].intern(v);
        }
        let records = (0..1000)
            .map(|i| Record {
                id: i,
                cats: vec![i % 3, i % 2],
                cont: vec![(i % 10) as f64 / 9.0, ((i * 7) % 10) as f64 / 9.0],
                label: None,
            })
            .collect();
        Dataset {
            schema,
            vocabs,
            records,
        }
    }

    #[test]
    fn synthetic_anomaly_recipe() {
        let ds = small_dataset();
        let mut rng = stream(1, Stream::Synth);
        let out = synth_anomalies(&ds, 0.1, &mut rng).unwrap();
        assert_eq!(out.len(), 1100);
        let anomalies: Vec<&Record> = out.records.iter().filter(|r| r.label == Some(Label::Anomaly)).collect();
        assert_eq!(anomalies.len(), 100);
        assert!(out.records[..1000].iter().all(|r| r.label == Some(Label::Nominal)));
        let ids: std::collections::HashSet<usize> = out.records.iter().map(|r| r.id).collect();
        assert_eq!(ids.len(), 1100);
        out.validate().unwrap();
    }

    #[test]
    fn continuous_perturbation_intervals() {
        let arities = [3, 2];
        let mut rng = stream(2, Stream::Synth);
        for _ in 0..2000 {
            for v in [0.3, 0.8] {
                let src = Record {
                    id: 0,
                    cats: vec![1, 0],
                    cont: vec![v],
                    label: None,
                };
                let out = perturb_record(&src, &arities, &mut rng);
                let changed = out.cats.iter().zip(&src.cats).filter(|(a, b)| a != b).count();
                assert_eq!(changed, 1);
                let nv = out.cont[0];
                if v < 0.5 {
                    assert!(nv > 0.55 && nv < 1.05, "{nv}");
                } else {
                    assert!(nv > 0.05 && nv < 0.55, "{nv}");
                }
            }
        }
    }

    #[test]
    fn synth_needs_mixed_schema() {
        let schema = RecordSchema::new(vec![], vec!["x".into()], None).unwrap();
        let ds = Dataset {
            schema,
            vocabs: vec![],
            records: vec![Record {
                id: 0,
                cats: vec![],
                cont: vec![0.1],
                label: None,
            }],
        };
        assert!(synth_anomalies(&ds, 0.5, &mut stream(0, Stream::Synth)).is_err());
    }

    #[test]
    fn projection_of_centered_2d_is_rotation() {
        let pts = array![[1.0, 2.0], [-1.0, 0.5], [0.5, -1.5], [-0.5, -1.0]];
        let mean = pts.mean_axis(ndarray::Axis(0)).unwrap();
        let centered = &pts - &mean;
        let proj = latent_projection(&centered, vec!["n".into(); 4]).unwrap();
        assert!(proj.warning.is_none());
        for i in 0..4 {
            for j in 0..4 {
                let d0 = (&centered.row(i) - &centered.row(j)).mapv(|v| v * v).sum().sqrt();
                let d1 = (&proj.points.row(i) - &proj.points.row(j)).mapv(|v| v * v).sum().sqrt();
                assert_abs_diff_eq!(d0, d1, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rank_one_projection_zeroes_y() {
        let pts = Array2::from_shape_fn((6, 3), |(i, j)| i as f64 * [1.0, -2.0, 0.5][j]);
        let proj = latent_projection(&pts, vec!["a".into(); 6]).unwrap();
        assert!(proj.warning.is_some());
        assert!(proj.points.column(1).iter().all(|&y| y == 0.0));
        assert!(latent_projection(&pts.slice(ndarray::s![..1, ..]).to_owned(), vec!["a".into()]).is_err());
    }

    #[test]
    fn projection_csv_header() {
        let pts = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]];
        let proj = latent_projection(&pts, vec!["nominal".into(), "anomaly".into(), "nominal".into()]).unwrap();
        let mut buf = Vec::new();
        write_projection_csv(&proj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,label\n"));
        assert_eq!(text.lines().count(), 4);
    }

    /// Eigenvectors of a symmetric matrix by cyclic Jacobi rotations,
    /// sorted by eigenvalue, largest first.
    fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
        let n = a.len();
        let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for row in v.iter_mut() {
                        let (vp, vq) = (row[p], row[q]);
                        row[p] = c * vp - s * vq;
                        row[q] = s * vp + c * vq;
                    }
                }
            }
        }
        let mut out: Vec<(f64, Vec<f64>)> = (0..n).map(|j| (a[j][j], (0..n).map(|i| v[i][j]).collect())).collect();
        out.sort_by(|x, y| y.0.total_cmp(&x.0));
        out
    }

    #[test]
    fn projection_axes_match_covariance_eigenvectors() {
        let mut rng = stream(4, Stream::Synth);
        let scales: Vec<f64> = (0..16).map(|j| 3.0 / (1.0 + j as f64)).collect();
        let pts = Array2::from_shape_fn((300, 16), |(_, j)| (rng.random::<f64>() - 0.5) * scales[j]);
        // mix the coordinates so the axes are not aligned with the basis
        let mix = Array2::from_shape_fn((16, 16), |_| rng.random::<f64>() - 0.5);
        let pts = pts.dot(&mix);
        let proj = latent_projection(&pts, vec!["n".into(); 300]).unwrap();

        let mean = pts.mean_axis(ndarray::Axis(0)).unwrap();
        let c = &pts - &mean;
        let cov = c.t().dot(&c);
        let eig = jacobi_eigen((0..16).map(|i| (0..16).map(|j| cov[[i, j]]).collect()).collect());
        for slot in 0..2 {
            let dot: f64 = proj.axes[slot].iter().zip(&eig[slot].1).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(dot.abs(), 1.0, epsilon = 1e-8);
            assert_abs_diff_eq!(proj.singular_values[slot].powi(2), eig[slot].0, epsilon = 1e-8 * eig[0].0);
        }
    }

    fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
        let n = scores.len();
        let ahead = |j: usize, i: usize| scores[j] < scores[i] || (scores[j] == scores[i] && j <= i);
        let pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
        pos.iter()
            .map(|&i| {
                let upto = (0..n).filter(|&j| ahead(j, i)).count() as f64;
                (0..n).filter(|&j| labels[j] && ahead(j, i)).count() as f64 / upto
            })
            .sum::<f64>()
            / pos.len() as f64
    }

    proptest::proptest! {
        #[test]
        fn ap_matches_brute_force(
            cells in proptest::collection::vec((0u8..10, proptest::bool::ANY), 2..120),
        ) {
            let scores: Vec<f64> = cells.iter().map(|c| f64::from(c.0) / 10.0).collect();
            let mut labels: Vec<bool> = cells.iter().map(|c| c.1).collect();
            labels[0] = true;
            labels[1] = false;
            let ap = average_precision(&scores, &labels, true).unwrap();
            proptest::prop_assert!((ap - brute_force_ap(&scores, &labels)).abs() < 1e-12);
            proptest::prop_assert!(ap > 0.0 && ap <= 1.0);
            // high-score-anomalous convention on negated scores gives the same ranking
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let flipped = average_precision(&neg, &labels, false).unwrap();
            proptest::prop_assert!((flipped - ap).abs() < 1e-12);
        }

        #[test]
        fn ap_is_invariant_to_monotone_maps(
            scores in proptest::collection::vec(-5.0f64..5.0, 3..80),
            shift in -3.0f64..3.0,
        ) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| i % 3 == 0).collect();
            let ap = average_precision(&scores, &labels, true).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| (s + shift).exp() + s.powi(3)).collect();
            proptest::prop_assert_eq!(average_precision(&mapped, &labels, true).unwrap(), ap);
        }

        #[test]
        fn projection_is_centered_with_orthonormal_axes(
            flat in proptest::collection::vec(-10.0f64..10.0, 40),
        ) {
            let pts = Array2::from_shape_vec((10, 4), flat).unwrap();
            let proj = latent_projection(&pts, vec!["n".into(); 10]).unwrap();
            for c in 0..2 {
                proptest::prop_assert!(proj.points.column(c).sum().abs() < 1e-9);
            }
            if proj.warning.is_none() {
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                proptest::prop_assert!((dot(&proj.axes[0], &proj.axes[0]) - 1.0).abs() < 1e-9);
                proptest::prop_assert!((dot(&proj.axes[1], &proj.axes[1]) - 1.0).abs() < 1e-9);
                proptest::prop_assert!(dot(&proj.axes[0], &proj.axes[1]).abs() < 1e-9);
                proptest::prop_assert!(proj.singular_values[0] >= proj.singular_values[1]);
            }
        }
    }
}
