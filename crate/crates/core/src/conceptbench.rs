//! Two-dimensional toy benchmark: two triangular Gamma clusters of nominal
//! points, Gaussian anomaly blobs, and four detectors (GMM, K-means with one
//! and two clusters, and a discriminator trained against uniform noise).

use std::collections::BTreeMap;
use std::io::Write;

use log::{info, warn};
use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Gamma as GammaDist};

use crate::error::{Error, Result};
use crate::eval::average_precision;
use crate::nn::{Activation, AdamConfig, AdamState, DenseStack, DropoutSpec, Pass};
use crate::rng::{self, Rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaCluster {
    /// Per-axis shape `k`.
    pub shape: [f64; 2],
    /// Per-axis scale `θ`.
    pub scale: [f64; 2],
    pub offset: [f64; 2],
    pub count: usize,
}

impl GammaCluster {
    fn axis(&self, j: usize) -> GammaDist {
        GammaDist::new(self.shape[j], 1.0 / self.scale[j]).expect("validated gamma parameters")
    }

    /// Product density of the two independent shifted Gammas.
    pub fn density(&self, p: [f64; 2]) -> f64 {
        (0..2)
            .map(|j| {
                let x = p[j] - self.offset[j];
                if x <= 0.0 {
                    0.0
                } else {
                    self.axis(j).pdf(x)
                }
            })
            .product()
    }

    /// Density at the joint mode (boundary mode for shape ≤ 1 is evaluated
    /// just inside the support).
    pub fn mode_density(&self) -> f64 {
        let mode = [0, 1].map(|j| {
            let m = (self.shape[j] - 1.0).max(0.0) * self.scale[j];
            self.offset[j] + m.max(1e-9)
        });
        self.density(mode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBlob {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NceSettings {
    /// Exclusion threshold as a fraction of each cluster's mode density.
    pub epsilon_fraction: f64,
    /// Relative expansion of the nominal bounding box on each side.
    pub box_expansion: f64,
    pub negatives: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for NceSettings {
    fn default() -> Self {
        Self {
            epsilon_fraction: 1e-3,
            box_expansion: 0.1,
            negatives: 2000,
            hidden: vec![32, 32],
            epochs: 300,
            batch_size: 200,
            learning_rate: 3e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConceptConfig {
    pub clusters: Vec<GammaCluster>,
    pub anomalies: Vec<GaussianBlob>,
    pub nce: NceSettings,
    pub seeds: usize,
}

impl Default for ConceptConfig {
    fn default() -> Self {
        let cluster = |offset| GammaCluster {
            shape: [2.0, 2.0],
            scale: [1.0, 1.0],
            offset,
            count: 500,
        };
        let blob = |mean| GaussianBlob {
            mean,
            covariance: [[0.25, 0.0], [0.0, 0.25]],
            count: 50,
        };
        Self {
            clusters: vec![cluster([0.0, 0.0]), cluster([8.0, 8.0])],
            anomalies: vec![blob([6.5, 6.5]), blob([-1.0, 2.0])],
            nce: NceSettings::default(),
            seeds: 10,
        }
    }
}

impl ConceptConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.clusters.is_empty() {
            errs.push("concept: at least one nominal cluster is required".into());
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.count == 0 {
                errs.push(format!("concept.clusters[{i}].count must be >= 1"));
            }
            if c.shape.iter().chain(&c.scale).any(|&v| !(v > 0.0 && v.is_finite())) {
                errs.push(format!("concept.clusters[{i}]: gamma shape and scale must be positive"));
            }
        }
        for (i, b) in self.anomalies.iter().enumerate() {
            if b.count == 0 {
                errs.push(format!("concept.anomalies[{i}].count must be >= 1"));
            }
            let c = b.covariance;
            if !(c[0][0] > 0.0 && c[0][0] * c[1][1] - c[0][1] * c[1][0] > 0.0 && c[0][1] == c[1][0]) {
                errs.push(format!("concept.anomalies[{i}].covariance must be symmetric positive definite"));
            }
        }
        if self.anomalies.is_empty() {
            errs.push("concept: at least one anomaly blob is required".into());
        }
        let n = &self.nce;
        if !(n.epsilon_fraction > 0.0) {
            errs.push("concept.nce.epsilon_fraction must be > 0".into());
        }
        if !(n.box_expansion >= 0.0) {
            errs.push("concept.nce.box_expansion must be >= 0".into());
        }
        if n.negatives == 0 || n.epochs == 0 || n.batch_size == 0 {
            errs.push("concept.nce: negatives, epochs and batch_size must be >= 1".into());
        }
        if !(n.learning_rate > 0.0) {
            errs.push("concept.nce.learning_rate must be > 0".into());
        }
        if self.seeds == 0 {
            errs.push("concept.seeds must be >= 1".into());
        }
        errs
    }

    fn checked(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Points `[n × 2]` with anomaly labels; nominal rows come first.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptData {
    pub points: Array2<f64>,
    pub is_anomaly: Vec<bool>,
}

impl ConceptData {
    pub fn nominal(&self) -> Array2<f64> {
        let idx: Vec<usize> = (0..self.is_anomaly.len()).filter(|&i| !self.is_anomaly[i]).collect();
        self.points.select(Axis(0), &idx)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "label"])?;
        for (row, &a) in self.points.rows().into_iter().zip(&self.is_anomaly) {
            w.write_record([row[0].to_string(), row[1].to_string(), if a { "anomaly" } else { "nominal" }.into()])?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))
    }
}

pub fn gen_concept_data(config: &ConceptConfig, rng: &mut Rng) -> Result<ConceptData> {
    config.checked()?;
    let mut rows: Vec<[f64; 2]> = Vec::new();
    let mut labels = Vec::new();
    for c in &config.clusters {
        let axes = [0, 1].map(|j| Gamma::new(c.shape[j], c.scale[j]).expect("validated gamma parameters"));
        for _ in 0..c.count {
            rows.push([0, 1].map(|j| c.offset[j] + axes[j].sample(rng)));
            labels.push(false);
        }
    }
    for b in &config.anomalies {
        let cov = DMatrix::from_fn(2, 2, |i, j| b.covariance[i][j]);
        let l = Cholesky::new(cov)
            .ok_or_else(|| Error::config("anomaly covariance is not positive definite"))?
            .l();
        for _ in 0..b.count {
            let z = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
            rows.push([
                b.mean[0] + l[(0, 0)] * z[0],
                b.mean[1] + l[(1, 0)] * z[0] + l[(1, 1)] * z[1],
            ]);
            labels.push(true);
        }
    }
    let points = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
    Ok(ConceptData {
        points,
        is_anomaly: labels,
    })
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Squared distance and index of the nearest row of `centers`.
fn nearest(p: ndarray::ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    centers
        .rows()
        .into_iter()
        .enumerate()
        .map(|(c, row)| (c, sq_dist(p, row)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one center")
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centers: Array2<f64>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

const KMEANS_MAX_ITER: usize = 1000;

fn kmeanspp(points: &Array2<f64>, k: usize, rng: &mut Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a center
            Err(_) => rng.random_range(0..n),
        };
        chosen.push(next);
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(next)));
        }
    }
    points.select(Axis(0), &chosen)
}

/// Lloyd's algorithm from k-means++ seeding, until no center moves by more
/// than 1e-8. An emptied cluster is re-seeded at the point farthest from its
/// assigned center.
pub fn fit_kmeans(points: &Array2<f64>, k: usize, rng: &mut Rng) -> Result<KMeans> {
    let (n, d) = points.dim();
    if k == 0 || n < k {
        return Err(Error::config(format!("k-means needs 1 <= k <= n, got k={k}, n={n}")));
    }
    let mut centers = kmeanspp(points, k, rng);
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let assign: Vec<(usize, f64)> = points.rows().into_iter().map(|p| nearest(p, &centers)).collect();
        history.push(assign.iter().map(|a| a.1).sum());
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in points.rows().into_iter().zip(&assign) {
            sums.row_mut(c).scaled_add(1.0, &p);
            counts[c] += 1;
        }
        let mut new_centers = centers.clone();
        let mut taken = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                new_centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| assign[a].1.total_cmp(&assign[b].1))
                    .expect("n >= k");
                taken.push(far);
                new_centers.row_mut(c).assign(&points.row(far));
            }
        }
        let shift = centers
            .rows()
            .into_iter()
            .zip(new_centers.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = new_centers;
        if shift < 1e-8 {
            break;
        }
    }
    Ok(KMeans {
        centers,
        inertia_history: history,
    })
}

impl KMeans {
    /// Euclidean distance to the nearest center (high = anomalous).
    pub fn score(&self, points: &Array2<f64>) -> Vec<f64> {
        points.rows().into_iter().map(|p| nearest(p, &self.centers).1.sqrt()).collect()
    }

    pub fn inertia(&self, points: &Array2<f64>) -> f64 {
        points.rows().into_iter().map(|p| nearest(p, &self.centers).1).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// Total data log-likelihood before each M-step.
    pub ll_history: Vec<f64>,
}

pub const GMM_REG: f64 = 1e-6;
const GMM_TOL: f64 = 1e-8;
const GMM_MAX_ITER: usize = 500;
const GMM_RESTARTS: usize = 5;

struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
}

fn components(g: &Gmm) -> Option<Vec<Component>> {
    let d = g.means[0].len() as f64;
    g.weights
        .iter()
        .zip(&g.means)
        .zip(&g.covariances)
        .map(|((&w, m), c)| {
            let chol = Cholesky::new(c.clone())?;
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            if !log_det.is_finite() {
                return None;
            }
            Some(Component {
                log_weight: w.ln(),
                mean: m.clone(),
                chol,
                log_norm: -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det),
            })
        })
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-component `ln w_j + ln N(x | μ_j, Σ_j)`.
fn joint_log(comps: &[Component], x: &DVector<f64>) -> Vec<f64> {
    comps
        .iter()
        .map(|c| {
            let diff = x - &c.mean;
            let z = c.chol.l().solve_lower_triangular(&diff).expect("non-singular factor");
            c.log_weight + c.log_norm - 0.5 * z.norm_squared()
        })
        .collect()
}

fn to_vectors(points: &Array2<f64>) -> Vec<DVector<f64>> {
    points.rows().into_iter().map(|r| DVector::from_iterator(r.len(), r.iter().copied())).collect()
}

fn em_once(xs: &[DVector<f64>], k: usize, rng: &mut Rng) -> Option<Gmm> {
    let n = xs.len();
    let d = xs[0].len();
    let pts = Array2::from_shape_fn((n, d), |(i, j)| xs[i][j]);
    let seeds = kmeanspp(&pts, k, rng);
    let mean_all = xs.iter().fold(DVector::zeros(d), |a, x| a + x) / n as f64;
    let cov_all = xs.iter().fold(DMatrix::zeros(d, d), |a, x| {
        let c = x - &mean_all;
        a + &c * c.transpose()
    }) / n as f64
        + DMatrix::identity(d, d) * GMM_REG;
    let mut g = Gmm {
        weights: vec![1.0 / k as f64; k],
        means: seeds.rows().into_iter().map(|r| DVector::from_iterator(d, r.iter().copied())).collect(),
        covariances: vec![cov_all; k],
        ll_history: Vec::new(),
    };
    for _ in 0..GMM_MAX_ITER {
        let comps = components(&g)?;
        let mut resp = DMatrix::<f64>::zeros(n, k);
        let mut ll = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let lj = joint_log(&comps, x);
            let lse = log_sum_exp(&lj);
            ll += lse;
            for j in 0..k {
                resp[(i, j)] = (lj[j] - lse).exp();
            }
        }
        if !ll.is_finite() {
            return None;
        }
        let converged = g.ll_history.last().is_some_and(|&prev| (ll - prev).abs() < GMM_TOL);
        g.ll_history.push(ll);
        if converged {
            break;
        }
        for j in 0..k {
            let nk: f64 = resp.column(j).sum();
            if nk <= 0.0 {
                return None;
            }
            let mean = xs.iter().enumerate().fold(DVector::zeros(d), |a, (i, x)| a + x * resp[(i, j)]) / nk;
            let cov = xs.iter().enumerate().fold(DMatrix::zeros(d, d), |a, (i, x)| {
                let c = x - &mean;
                a + (&c * c.transpose()) * resp[(i, j)]
            }) / nk
                + DMatrix::identity(d, d) * GMM_REG;
            g.weights[j] = nk / n as f64;
            g.means[j] = mean;
            g.covariances[j] = cov;
        }
    }
    Some(g)
}

/// Full-covariance EM from k-means++ means. A numerically singular fit is
/// restarted from fresh seeding up to five times.
pub fn fit_gmm_em(points: &Array2<f64>, k: usize, rng: &mut Rng) -> Result<Gmm> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(Error::config(format!("GMM needs 1 <= k <= n, got k={k}, n={n}")));
    }
    let xs = to_vectors(points);
    for attempt in 0..=GMM_RESTARTS {
        if let Some(g) = em_once(&xs, k, rng) {
            return Ok(g);
        }
        warn!("GMM fit {attempt} hit a singular covariance; restarting");
    }
    Err(Error::Numeric(format!("GMM EM failed after {GMM_RESTARTS} restarts")))
}

impl Gmm {
    /// Log-likelihood of each point under the mixture (low = anomalous).
    pub fn score(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        let comps = components(self).ok_or_else(|| Error::Numeric("singular GMM covariance".into()))?;
        Ok(to_vectors(points).iter().map(|x| log_sum_exp(&joint_log(&comps, x))).collect())
    }

    /// Posterior component probabilities `[n × k]`.
    pub fn responsibilities(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
        let comps = components(self).ok_or_else(|| Error::Numeric("singular GMM covariance".into()))?;
        let xs = to_vectors(points);
        let mut out = Array2::zeros((xs.len(), self.weights.len()));
        for (i, x) in xs.iter().enumerate() {
            let lj = joint_log(&comps, x);
            let lse = log_sum_exp(&lj);
            for (j, l) in lj.iter().enumerate() {
                out[[i, j]] = (l - lse).exp();
            }
        }
        Ok(out)
    }
}

/// Nominal-vs-uniform classifier; its output is the posterior of "nominal".
#[derive(Clone, Debug, PartialEq)]
pub struct NceDiscriminator {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub mlp: DenseStack,
    pub negatives: Array2<f64>,
}

/// Uniform draws over `[lo, hi]` kept only where every cluster density is
/// below its threshold `ε_c`.
pub fn sample_uniform_negatives(
    clusters: &[GammaCluster],
    epsilon_fraction: f64,
    lo: [f64; 2],
    hi: [f64; 2],
    count: usize,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    let eps: Vec<f64> = clusters.iter().map(|c| epsilon_fraction * c.mode_density()).collect();
    // a >99.9% rejection rate means ε is too strict for the box
    let budget = count.saturating_mul(1000).max(10_000);
    let mut out = Vec::with_capacity(count);
    let mut drawn = 0usize;
    while out.len() < count {
        if drawn >= budget {
            return Err(Error::config(format!(
                "uniform negative rejection rate above 99.9% ({} of {drawn} kept); raise epsilon_fraction",
                out.len()
            )));
        }
        drawn += 1;
        let u = [0, 1].map(|j| lo[j] + (hi[j] - lo[j]) * rng.random::<f64>());
        if clusters.iter().zip(&eps).all(|(c, &e)| c.density(u) < e) {
            out.push(u);
        }
    }
    info!("uniform negatives: kept {} of {drawn} candidates", out.len());
    Ok(Array2::from_shape_fn((count, 2), |(i, j)| out[i][j]))
}

fn bounding_box(points: &Array2<f64>, expand: f64) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for r in points.rows() {
        for j in 0..2 {
            lo[j] = lo[j].min(r[j]);
            hi[j] = hi[j].max(r[j]);
        }
    }
    for j in 0..2 {
        let w = (hi[j] - lo[j]).max(1e-12);
        lo[j] -= expand * w;
        hi[j] += expand * w;
    }
    (lo, hi)
}

impl NceDiscriminator {
    fn scale(&self, points: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(points.dim(), |(i, j)| {
            2.0 * (points[[i, j]] - self.lo[j]) / (self.hi[j] - self.lo[j]) - 1.0
        })
    }

    pub fn score(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        let (out, _) = self.mlp.forward(&self.scale(points), &mut Pass::Inference)?;
        Ok(out.column(0).to_vec())
    }
}

/// Trains the discriminator with binary cross-entropy on nominal points
/// (label 1) against ε-filtered uniform negatives (label 0).
pub fn nce_concept(nominal: &Array2<f64>, config: &ConceptConfig, rng: &mut Rng) -> Result<NceDiscriminator> {
    config.checked()?;
    let s = &config.nce;
    let (lo, hi) = bounding_box(nominal, s.box_expansion);
    let negatives = sample_uniform_negatives(&config.clusters, s.epsilon_fraction, lo, hi, s.negatives, rng)?;
    let mut sizes = vec![2];
    sizes.extend(&s.hidden);
    sizes.push(1);
    let mlp = DenseStack::new(&sizes, Activation::Tanh, Activation::Sigmoid, DropoutSpec::new(0.0)?, false, rng);
    let mut disc = NceDiscriminator {
        lo,
        hi,
        mlp,
        negatives,
    };
    let inputs = ndarray::concatenate(Axis(0), &[disc.scale(nominal).view(), disc.scale(&disc.negatives).view()])
        .expect("same width");
    let targets: Array1<f64> = (0..inputs.nrows())
        .map(|i| if i < nominal.nrows() { 1.0 } else { 0.0 })
        .collect();
    let mut adam = AdamState::new(AdamConfig::default());
    let mut order: Vec<usize> = (0..inputs.nrows()).collect();
    for _ in 0..s.epochs {
        order.shuffle(rng);
        for batch in order.chunks(s.batch_size) {
            let x = inputs.select(Axis(0), batch);
            let (out, cache) = disc.mlp.forward(&x, &mut Pass::Inference)?;
            let b = batch.len() as f64;
            // dBCE/dŷ, chosen so that after the sigmoid derivative it is (ŷ − y)/B
            let d_out = Array2::from_shape_fn(out.dim(), |(i, _)| {
                let y = out[[i, 0]];
                (y - targets[batch[i]]) / (y * (1.0 - y)).max(1e-300) / b
            });
            let mut grad = disc.mlp.zeros_like();
            disc.mlp.backward(&cache, &d_out, &mut grad);
            adam.step(&mut disc.mlp, &grad, s.learning_rate)?;
        }
    }
    Ok(disc)
}

/// Context shared by detectors during one benchmark run.
pub struct FitContext<'a> {
    pub config: &'a ConceptConfig,
}

/// A 2-D anomaly detector fitted on nominal points only.
pub trait Detector: Send {
    fn name(&self) -> &'static str;
    /// Orientation of `score`: true when lower scores mean "more anomalous".
    fn anomaly_is_low_score(&self) -> bool;
    fn fit(&mut self, nominal: &Array2<f64>, ctx: &FitContext<'_>, rng: &mut Rng) -> Result<()>;
    fn score(&self, points: &Array2<f64>) -> Result<Vec<f64>>;
}

fn unfitted(name: &str) -> Error {
    Error::config(format!("detector {name} used before fit"))
}

#[derive(Default)]
pub struct GmmDetector {
    k: usize,
    model: Option<Gmm>,
}

impl Detector for GmmDetector {
    fn name(&self) -> &'static str {
        "gmm-k2"
    }
    fn anomaly_is_low_score(&self) -> bool {
        true
    }
    fn fit(&mut self, nominal: &Array2<f64>, _: &FitContext<'_>, rng: &mut Rng) -> Result<()> {
        self.model = Some(fit_gmm_em(nominal, self.k, rng)?);
        Ok(())
    }
    fn score(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        self.model.as_ref().ok_or_else(|| unfitted(self.name()))?.score(points)
    }
}

pub struct KMeansDetector {
    k: usize,
    name: &'static str,
    model: Option<KMeans>,
}

impl Detector for KMeansDetector {
    fn name(&self) -> &'static str {
        self.name
    }
    fn anomaly_is_low_score(&self) -> bool {
        false
    }
    fn fit(&mut self, nominal: &Array2<f64>, _: &FitContext<'_>, rng: &mut Rng) -> Result<()> {
        self.model = Some(fit_kmeans(nominal, self.k, rng)?);
        Ok(())
    }
    fn score(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.model.as_ref().ok_or_else(|| unfitted(self.name))?.score(points))
    }
}

#[derive(Default)]
pub struct NceDetector {
    model: Option<NceDiscriminator>,
}

impl Detector for NceDetector {
    fn name(&self) -> &'static str {
        "nce"
    }
    fn anomaly_is_low_score(&self) -> bool {
        true
    }
    fn fit(&mut self, nominal: &Array2<f64>, ctx: &FitContext<'_>, rng: &mut Rng) -> Result<()> {
        self.model = Some(nce_concept(nominal, ctx.config, rng)?);
        Ok(())
    }
    fn score(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        self.model.as_ref().ok_or_else(|| unfitted("nce"))?.score(points)
    }
}

type Factory = fn() -> Box<dyn Detector>;

/// Detectors by name, in registration order.
pub struct DetectorRegistry {
    factories: Vec<(&'static str, Factory)>,
}

impl Default for DetectorRegistry {
    fn default() -> Self {
        let mut r = Self { factories: Vec::new() };
        r.register("gmm-k2", || Box::new(GmmDetector { k: 2, model: None }));
        r.register("kmeans-k2", || {
            Box::new(KMeansDetector {
                k: 2,
                name: "kmeans-k2",
                model: None,
            })
        });
        r.register("kmeans-k1", || {
            Box::new(KMeansDetector {
                k: 1,
                name: "kmeans-k1",
                model: None,
            })
        });
        r.register("nce", || Box::<NceDetector>::default());
        r
    }
}

impl DetectorRegistry {
    /// Adds or replaces a detector.
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        match self.factories.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = factory,
            None => self.factories.push((name, factory)),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn Detector>> {
        self.factories
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f())
            .ok_or_else(|| Error::config(format!("unknown detector {name:?}; known: {:?}", self.names())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub method: String,
    pub seed: u64,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_ap: f64,
    pub sd_ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
    pub summary: Vec<MethodSummary>,
}

impl BenchReport {
    pub fn mean(&self, method: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.method == method).map(|s| s.mean_ap)
    }

    pub fn write_runs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "seed", "ap"])?;
        for r in &self.runs {
            w.write_record([r.method.clone(), r.seed.to_string(), r.ap.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "mean_ap", "sd_ap"])?;
        for s in &self.summary {
            w.write_record([s.method.clone(), s.mean_ap.to_string(), s.sd_ap.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))
    }
}

/// Fits every registered detector on the nominal points of one generated
/// dataset and scores the full labeled set.
pub fn run_concept_seed(config: &ConceptConfig, registry: &DetectorRegistry, root: u64, seed: u64) -> Result<Vec<BenchRun>> {
    let data = gen_concept_data(config, &mut rng::substream(root, Stream::Bench, seed))?;
    let nominal = data.nominal();
    let ctx = FitContext { config };
    registry
        .names()
        .into_iter()
        .enumerate()
        .map(|(mi, name)| {
            let mut det = registry.create(name)?;
            let mut rng = rng::substream(root, Stream::Bench, seed.wrapping_mul(64).wrapping_add(mi as u64 + 1));
            det.fit(&nominal, &ctx, &mut rng)?;
            let scores = det.score(&data.points)?;
            Ok(BenchRun {
                method: name.to_string(),
                seed,
                ap: average_precision(&scores, &data.is_anomaly, det.anomaly_is_low_score())?,
            })
        })
        .collect()
}

/// Runs `config.seeds` independent replicates in parallel and summarizes
/// mean ± sd AP per method.
pub fn run_concept_bench(config: &ConceptConfig, registry: &DetectorRegistry, root: u64) -> Result<BenchReport> {
    config.checked()?;
    let per_seed: Vec<Vec<BenchRun>> = (0..config.seeds as u64)
        .into_par_iter()
        .map(|s| run_concept_seed(config, registry, root, s))
        .collect::<Result<_>>()?;
    let runs: Vec<BenchRun> = per_seed.into_iter().flatten().collect();
    let mut by_method: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
    let names = registry.names();
    for r in &runs {
        let idx = names.iter().position(|n| *n == r.method).expect("registered");
        by_method.entry(idx).or_insert_with(|| (r.method.clone(), Vec::new())).1.push(r.ap);
    }
    let summary = by_method
        .into_values()
        .map(|(method, aps)| {
            let n = aps.len() as f64;
            let mean = aps.iter().sum::<f64>() / n;
            let sd = if aps.len() > 1 {
                (aps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            MethodSummary {
                method,
                mean_ap: mean,
                sd_ap: sd,
            }
        })
        .collect();
    Ok(BenchReport { runs, summary })
}
