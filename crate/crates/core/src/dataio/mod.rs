//! Datasets and the loaders, splitters and normalisers around them.
//!
//! A [`Dataset`] keeps the feature matrix (one row per instance) next to the
//! optional clean labels, noisy labels and ground-truth transition rows, so a
//! subset or split never lets those parallel arrays drift apart.

mod bundle;
mod csv;
mod idx;

pub use self::bundle::{
    load_bundle, read_json, read_labels, read_matrix, save_bundle, write_json, write_labels, write_matrix, BundleMeta,
};
pub use self::csv::{load_csv, load_csv_reader, write_csv, CsvOptions, LabelColumn};
pub use self::idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{self, streams};
use crate::{Error, Result};

/// Tolerance on the row sums of stored ground-truth transition rows.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    clean_labels: Option<Vec<usize>>,
    noisy_labels: Option<Vec<usize>>,
    class_count: usize,
    true_rows: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, class_count: usize) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "dataset needs n >= 1 and d >= 1, got {}x{}",
                features.nrows(),
                features.ncols()
            )));
        }
        if class_count < 2 {
            return Err(Error::InvalidInput(format!(
                "class count must be at least 2, got {class_count}"
            )));
        }
        if let Some((i, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let d = features.ncols();
            return Err(Error::InvalidInput(format!(
                "non-finite feature at row {}, column {}",
                i / d,
                i % d
            )));
        }
        Ok(Self {
            features,
            clean_labels: None,
            noisy_labels: None,
            class_count,
            true_rows: None,
        })
    }

    pub fn with_clean_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        self.check_labels(&labels, "clean")?;
        self.clean_labels = Some(labels);
        Ok(self)
    }

    pub fn with_noisy_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        self.check_labels(&labels, "noisy")?;
        self.noisy_labels = Some(labels);
        Ok(self)
    }

    pub fn with_true_rows(mut self, rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() != self.len() || rows.ncols() != self.class_count {
            return Err(Error::Dimension(format!(
                "true rows must be {}x{}, got {}x{}",
                self.len(),
                self.class_count,
                rows.nrows(),
                rows.ncols()
            )));
        }
        for (i, row) in rows.rows().into_iter().enumerate() {
            check_stochastic_row(row, ROW_SUM_TOL).map_err(|m| Error::InvalidInput(format!("true row {i}: {m}")))?;
        }
        self.true_rows = Some(rows);
        Ok(self)
    }

    /// Drops the noisy labels and ground-truth rows, keeping features and clean labels.
    pub fn without_noise(mut self) -> Self {
        self.noisy_labels = None;
        self.true_rows = None;
        self
    }

    fn check_labels(&self, labels: &[usize], what: &str) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{what} labels have length {}, expected {}",
                labels.len(),
                self.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= self.class_count) {
            return Err(Error::InvalidInput(format!(
                "{what} label {l} at row {i} is not below class count {}",
                self.class_count
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn feature_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn clean_labels(&self) -> Option<&[usize]> {
        self.clean_labels.as_deref()
    }

    pub fn noisy_labels(&self) -> Option<&[usize]> {
        self.noisy_labels.as_deref()
    }

    pub fn true_rows(&self) -> Option<ArrayView2<'_, f64>> {
        self.true_rows.as_ref().map(|r| r.view())
    }

    pub fn require_clean_labels(&self) -> Result<&[usize]> {
        self.clean_labels()
            .ok_or_else(|| Error::InvalidInput("dataset has no clean labels".into()))
    }

    pub fn require_noisy_labels(&self) -> Result<&[usize]> {
        self.noisy_labels()
            .ok_or_else(|| Error::InvalidInput("dataset has no noisy labels".into()))
    }

    /// Rows at `indices`, in the given order, with every parallel array carried along.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidInput(format!(
                "subset index {bad} out of range for {} rows",
                self.len()
            )));
        }
        if indices.is_empty() {
            return Err(Error::InvalidInput("subset would be empty".into()));
        }
        let pick = |v: &Vec<usize>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Self {
            features: self.features.select(Axis(0), indices),
            clean_labels: self.clean_labels.as_ref().map(pick),
            noisy_labels: self.noisy_labels.as_ref().map(pick),
            class_count: self.class_count,
            true_rows: self.true_rows.as_ref().map(|r| r.select(Axis(0), indices)),
        })
    }

    pub(crate) fn replace_features(mut self, features: Array2<f64>) -> Self {
        debug_assert_eq!(features.dim(), self.features.dim());
        self.features = features;
        self
    }
}

/// Checks that `row` is nonnegative and sums to one within `tol`.
pub(crate) fn check_stochastic_row(row: ArrayView1<f64>, tol: f64) -> std::result::Result<(), String> {
    if let Some(v) = row.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(format!("entry {v} is negative or non-finite"));
    }
    let s: f64 = row.sum();
    if (s - 1.0).abs() > tol {
        return Err(format!("row sums to {s}, not 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Uniform random partition of `0..n` into (train, validation) index sets,
/// each returned in ascending order.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.val_fraction > 0.0 && spec.val_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "validation fraction must lie in (0, 1), got {}",
            spec.val_fraction
        )));
    }
    let n_val = (n as f64 * spec.val_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::InvalidInput(format!(
            "validation fraction {} leaves an empty side for n = {n}",
            spec.val_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(spec.seed, streams::SPLIT);
    order.shuffle(&mut rng);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub fn split_train_val(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(dataset.len(), spec)?;
    Ok((dataset.subset(&train)?, dataset.subset(&val)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    MinMax,
    ZScore,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Normalization::None),
            "minmax" => Ok(Normalization::MinMax),
            "zscore" => Ok(Normalization::ZScore),
            other => Err(Error::Config(format!("unknown normalization `{other}`"))),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Normalization::None => "none",
            Normalization::MinMax => "minmax",
            Normalization::ZScore => "zscore",
        };
        f.write_str(s)
    }
}

/// Column-wise rescaling. Constant columns map to zero under both
/// `MinMax` and `ZScore`.
pub fn normalize_features(dataset: &Dataset, method: Normalization) -> Dataset {
    let mut x = dataset.features.clone();
    match method {
        Normalization::None => {}
        Normalization::MinMax => {
            for mut col in x.columns_mut() {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = hi - lo;
                if span > 0.0 {
                    col.mapv_inplace(|v| ((v - lo) / span).clamp(0.0, 1.0));
                } else {
                    col.fill(0.0);
                }
            }
        }
        Normalization::ZScore => {
            let n = x.nrows() as f64;
            for mut col in x.columns_mut() {
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                if var > 0.0 {
                    let sd = var.sqrt();
                    col.mapv_inplace(|v| (v - mean) / sd);
                } else {
                    col.fill(0.0);
                }
            }
        }
    }
    dataset.clone().replace_features(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let labels = (0..n).map(|i| i % 3).collect();
        let rows = Array2::from_shape_fn((n, 3), |(i, j)| if j == i % 3 { 1.0 } else { 0.0 });
        Dataset::new(x, 3)
            .unwrap()
            .with_clean_labels(labels)
            .unwrap()
            .with_noisy_labels((0..n).map(|i| (i + 1) % 3).collect())
            .unwrap()
            .with_true_rows(rows)
            .unwrap()
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let d = Dataset::new(Array2::zeros((2, 1)), 2).unwrap();
        assert!(d.with_clean_labels(vec![0, 2]).is_err());
    }

    #[test]
    fn rejects_non_stochastic_true_rows() {
        let d = Dataset::new(Array2::zeros((1, 1)), 2).unwrap();
        assert!(d.clone().with_true_rows(array![[0.5, 0.6]]).is_err());
        assert!(d.with_true_rows(array![[-0.1, 1.1]]).is_err());
    }

    #[test]
    fn split_ninety_ten() {
        let (tr, va) = split_indices(
            100,
            SplitSpec {
                val_fraction: 0.1,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!((tr.len(), va.len()), (90, 10));
    }

    #[test]
    fn split_is_deterministic() {
        let spec = SplitSpec {
            val_fraction: 0.3,
            seed: 11,
        };
        assert_eq!(split_indices(50, spec).unwrap(), split_indices(50, spec).unwrap());
    }

    #[test]
    fn split_partitions_and_carries_arrays() {
        let d = toy(10);
        let spec = SplitSpec {
            val_fraction: 0.5,
            seed: 9,
        };
        let (tr_idx, va_idx) = split_indices(10, spec).unwrap();
        let mut all: Vec<usize> = tr_idx.iter().chain(&va_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let (tr, va) = split_train_val(&d, spec).unwrap();
        for (k, &i) in va_idx.iter().enumerate() {
            assert_eq!(va.feature_row(k), d.feature_row(i));
            assert_eq!(va.clean_labels().unwrap()[k], i % 3);
            assert_eq!(va.noisy_labels().unwrap()[k], (i + 1) % 3);
            assert_eq!(va.true_rows().unwrap().row(k), d.true_rows().unwrap().row(i));
        }
        assert_eq!(tr.len(), 5);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(split_indices(
            10,
            SplitSpec {
                val_fraction: 0.0,
                seed: 0
            }
        )
        .is_err());
        assert!(split_indices(
            10,
            SplitSpec {
                val_fraction: 1.0,
                seed: 0
            }
        )
        .is_err());
        assert!(split_indices(
            3,
            SplitSpec {
                val_fraction: 0.01,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn minmax_column() {
        let d = Dataset::new(array![[0.0], [5.0], [10.0]], 2).unwrap();
        let out = normalize_features(&d, Normalization::MinMax);
        assert_eq!(out.features().column(0).to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn zscore_constant_and_moments() {
        let d = Dataset::new(array![[1.0, 2.0], [1.0, 4.0], [1.0, 9.0], [1.0, -3.0]], 2).unwrap();
        let out = normalize_features(&d, Normalization::ZScore);
        assert!(out.features().column(0).iter().all(|&v| v == 0.0));
        let col = out.features().column(1).to_owned();
        let mean = col.sum() / 4.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalization_none_is_identity() {
        let d = toy(7);
        let out = normalize_features(&d, Normalization::None);
        assert_eq!(out, d);
    }
}
