//! Instance-dependent label noise.
//!
//! Each instance gets a flip rate `q` from `N(tau, 0.1², [0, 1])`. The row of
//! its transition matrix indexed by the clean label keeps `1 - q` on the
//! diagonal and spreads `q` over the other classes with a softmax of
//! `x · w_y`, where `w_1..w_c` are fixed `d × c` Gaussian projections. The
//! noisy label is drawn from that row.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::rng::{self, streams, Rng};
use crate::{Error, Result};

/// Standard deviation of the flip-rate distribution.
pub const FLIP_RATE_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseGenConfig {
    pub tau: f64,
    pub seed: u64,
}

impl NoiseGenConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "noise rate tau must lie in [0, 1], got {tau}"
        )))
    }
}

/// The per-class projections `w_1..w_c`, each `d × c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProjection {
    per_class: Vec<Array2<f64>>,
}

impl NoiseProjection {
    pub fn new(per_class: Vec<Array2<f64>>) -> Result<Self> {
        let c = per_class.len();
        if c < 2 {
            return Err(Error::InvalidInput("need at least two class projections".into()));
        }
        let d = per_class[0].nrows();
        for (k, w) in per_class.iter().enumerate() {
            if w.dim() != (d, c) {
                return Err(Error::Dimension(format!(
                    "projection {k} is {:?}, expected ({d}, {c})",
                    w.dim()
                )));
            }
        }
        Ok(Self { per_class })
    }

    pub fn class_count(&self) -> usize {
        self.per_class.len()
    }

    pub fn dim(&self) -> usize {
        self.per_class[0].nrows()
    }

    pub fn matrix(&self, class: usize) -> &Array2<f64> {
        &self.per_class[class]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipRecord {
    pub flip_rate: f64,
    pub row: Array1<f64>,
    pub noisy_label: usize,
}

/// Draws `n` flip rates from `N(tau, 0.1²)` truncated to `[0, 1]` by rejection.
pub fn sample_flip_rates(n: usize, tau: f64, seed: u64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let normal = Normal::new(tau, FLIP_RATE_STD).expect("std is positive");
    let mut rng = rng::stream(seed, streams::FLIP_RATES);
    Ok((0..n).map(|_| truncated_draw(&normal, &mut rng)).collect())
}

fn truncated_draw(normal: &Normal<f64>, rng: &mut Rng) -> f64 {
    loop {
        let v = normal.sample(rng);
        if (0.0..=1.0).contains(&v) {
            return v;
        }
    }
}

pub fn sample_projections(c: usize, d: usize, seed: u64) -> Result<NoiseProjection> {
    if c < 2 || d < 1 {
        return Err(Error::InvalidInput(format!("need c >= 2 and d >= 1, got c={c}, d={d}")));
    }
    let mut rng = rng::stream(seed, streams::PROJECTIONS);
    let per_class = (0..c)
        .map(|_| Array2::from_shape_simple_fn((d, c), || StandardNormal.sample(&mut rng)))
        .collect();
    NoiseProjection::new(per_class)
}

/// The transition row for clean label `y`: `1 - q` at `y`, and `q` times a
/// softmax of `x · w_y` over the remaining classes.
pub fn flip_row(x: ArrayView1<f64>, y: usize, q: f64, proj: &NoiseProjection) -> Result<Array1<f64>> {
    let c = proj.class_count();
    if y >= c {
        return Err(Error::InvalidInput(format!("label {y} is not below class count {c}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput(format!("flip rate must lie in [0, 1], got {q}")));
    }
    if x.len() != proj.dim() {
        return Err(Error::Dimension(format!(
            "instance has {} features, projection expects {}",
            x.len(),
            proj.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("instance has non-finite features".into()));
    }
    let logits = x.dot(proj.matrix(y));
    // The clean class is left out of the softmax entirely.
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut row = Array1::<f64>::zeros(c);
    let mut total = 0.0;
    for j in (0..c).filter(|&j| j != y) {
        let e = (logits[j] - max).exp();
        row[j] = e;
        total += e;
    }
    row.mapv_inplace(|v| q * v / total);
    row[y] = 1.0 - q;
    Ok(row)
}

/// Full `c × c` transition matrix the generator implies for `x` at flip rate `q`:
/// row `j` is `flip_row(x, j, q)`.
pub fn true_transition(x: ArrayView1<f64>, q: f64, proj: &NoiseProjection) -> Result<Array2<f64>> {
    let c = proj.class_count();
    let mut t = Array2::<f64>::zeros((c, c));
    for j in 0..c {
        t.row_mut(j).assign(&flip_row(x, j, q, proj)?);
    }
    Ok(t)
}

/// Index drawn from a probability vector using one uniform variate.
pub(crate) fn draw_categorical(p: ArrayView1<f64>, rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding gap at the top: take the last class with mass.
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

pub fn flip_label(x: ArrayView1<f64>, y: usize, q: f64, proj: &NoiseProjection, rng: &mut Rng) -> Result<FlipRecord> {
    let row = flip_row(x, y, q, proj)?;
    let noisy_label = draw_categorical(row.view(), rng);
    Ok(FlipRecord {
        flip_rate: q,
        row,
        noisy_label,
    })
}

/// Everything the generator drew, kept for evaluation.
#[derive(Debug, Clone)]
pub struct NoiseOutcome {
    pub dataset: Dataset,
    pub flip_rates: Vec<f64>,
    pub projection: NoiseProjection,
}

impl NoiseOutcome {
    /// Ground-truth full transition matrix of instance `i`.
    pub fn transition(&self, i: usize) -> Result<Array2<f64>> {
        true_transition(self.dataset.feature_row(i), self.flip_rates[i], &self.projection)
    }

    pub fn transitions(&self) -> Result<Vec<Array2<f64>>> {
        (0..self.dataset.len()).map(|i| self.transition(i)).collect()
    }
}

/// Corrupts with explicitly supplied flip rates and projections. Instance
/// `i` draws its label from its own random stream, so the output does not
/// depend on processing order.
pub fn corrupt_with(dataset: &Dataset, flip_rates: &[f64], projection: &NoiseProjection, seed: u64) -> Result<Dataset> {
    let clean = dataset
        .clean_labels()
        .ok_or_else(|| Error::InvalidInput("corruption needs clean labels".into()))?;
    if flip_rates.len() != dataset.len() {
        return Err(Error::Dimension(format!(
            "{} flip rates for {} instances",
            flip_rates.len(),
            dataset.len()
        )));
    }
    if projection.class_count() != dataset.class_count() {
        return Err(Error::Dimension(format!(
            "projection has {} classes, dataset has {}",
            projection.class_count(),
            dataset.class_count()
        )));
    }
    let c = dataset.class_count();
    let mut noisy = Vec::with_capacity(dataset.len());
    let mut rows = Array2::<f64>::zeros((dataset.len(), c));
    for (i, (&y, &q)) in clean.iter().zip(flip_rates).enumerate() {
        let mut r = rng::instance_stream(seed, i);
        let rec = flip_label(dataset.feature_row(i), y, q, projection, &mut r)?;
        rows.row_mut(i).assign(&rec.row);
        noisy.push(rec.noisy_label);
    }
    dataset.clone().with_noisy_labels(noisy)?.with_true_rows(rows)
}

pub fn generate_noise(dataset: &Dataset, config: &NoiseGenConfig) -> Result<NoiseOutcome> {
    config.validate()?;
    dataset.require_clean_labels()?;
    let flip_rates = sample_flip_rates(dataset.len(), config.tau, config.seed)?;
    let projection = sample_projections(dataset.class_count(), dataset.dim(), config.seed)?;
    let corrupted = corrupt_with(dataset, &flip_rates, &projection, config.seed)?;
    Ok(NoiseOutcome {
        dataset: corrupted,
        flip_rates,
        projection,
    })
}

/// Adds noisy labels and ground-truth rows to a clean dataset.
pub fn corrupt_dataset(dataset: &Dataset, config: &NoiseGenConfig) -> Result<Dataset> {
    generate_noise(dataset, config).map(|o| o.dataset)
}

/// Fraction of instances whose noisy label differs from the clean one.
pub fn flip_fraction(dataset: &Dataset) -> Result<f64> {
    let clean = dataset.require_clean_labels()?;
    let noisy = dataset.require_noisy_labels()?;
    let flips = clean.iter().zip(noisy).filter(|(a, b)| a != b).count();
    Ok(flips as f64 / clean.len() as f64)
}
