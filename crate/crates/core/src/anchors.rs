//! Anchor points and the transition rows they reveal.
//!
//! At an anchor `x` of clean class `i` the noisy posterior `Pr(Ȳ | X = x)`
//! equals row `i` of `T(x)`, so reading the noisy posterior at anchors yields
//! estimated transition rows without clean labels.

use std::cmp::Ordering;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::simplexopt::SimplexVector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub k: usize,
    /// Instance indices per class, best first.
    pub per_class: Vec<Vec<usize>>,
    /// Selection score `Pr(Ȳ = i | x)` of every selected instance.
    pub scores: Vec<Vec<f64>>,
    /// Whether class `i` needed the global-ranking fallback.
    pub fallback: Vec<bool>,
}

impl AnchorSet {
    pub fn class_count(&self) -> usize {
        self.per_class.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Rows read from exact posteriors (fixtures, ground truth).
    Oracle,
    /// Rows read from a learned noisy-posterior model.
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRows {
    pub provenance: Provenance,
    /// `rows[i][l]` estimates row `i` of `T` at the `l`-th anchor of class `i`.
    pub rows: Vec<Vec<SimplexVector>>,
}

impl AnchorRows {
    pub fn class_count(&self) -> usize {
        self.rows.len()
    }
}

fn check_posterior(posterior: ArrayView2<f64>, c: usize) -> Result<()> {
    if posterior.ncols() != c {
        return Err(Error::Dimension(format!(
            "posterior has {} columns, expected {c}",
            posterior.ncols()
        )));
    }
    if posterior.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("posterior table contains non-finite values".into()));
    }
    Ok(())
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Picks, for each class `i`, the `k` instances with the largest
/// `Pr(Ȳ = i | x)` among those predicted as `i`; ties go to the lower index.
/// When fewer than `k` instances are predicted as `i`, the rest come from
/// the global ranking by `Pr(Ȳ = i | x)`.
pub fn select_anchors(posterior: ArrayView2<f64>, k: usize, c: usize) -> Result<AnchorSet> {
    if k < 1 {
        return Err(Error::InvalidInput("need at least one anchor per class".into()));
    }
    check_posterior(posterior, c)?;
    let n = posterior.nrows();
    if n < k {
        return Err(Error::InvalidInput(format!(
            "{n} instances cannot supply {k} anchors per class"
        )));
    }
    let predicted: Vec<usize> = posterior.rows().into_iter().map(argmax).collect();

    let mut per_class = Vec::with_capacity(c);
    let mut scores = Vec::with_capacity(c);
    let mut fallback = Vec::with_capacity(c);
    for i in 0..c {
        let col = posterior.column(i);
        let by_score = |a: &usize, b: &usize| -> Ordering { col[*b].total_cmp(&col[*a]).then(a.cmp(b)) };

        let mut chosen: Vec<usize> = (0..n).filter(|&j| predicted[j] == i).collect();
        chosen.sort_by(by_score);
        chosen.truncate(k);
        let short = chosen.len() < k;
        if short {
            let mut global: Vec<usize> = (0..n).filter(|&j| predicted[j] != i).collect();
            global.sort_by(by_score);
            chosen.extend(global.into_iter().take(k - chosen.len()));
        }
        scores.push(chosen.iter().map(|&j| col[j]).collect());
        per_class.push(chosen);
        fallback.push(short);
    }
    Ok(AnchorSet {
        k,
        per_class,
        scores,
        fallback,
    })
}

/// Reads the noisy posterior at every anchor and renormalises it onto the simplex.
pub fn estimate_anchor_rows(anchor_set: &AnchorSet, posterior: ArrayView2<f64>) -> Result<AnchorRows> {
    check_posterior(posterior, anchor_set.class_count())?;
    let n = posterior.nrows();
    let rows = anchor_set
        .per_class
        .iter()
        .map(|idx| {
            idx.iter()
                .map(|&j| {
                    if j >= n {
                        return Err(Error::InvalidInput(format!(
                            "anchor index {j} out of range for {n} rows"
                        )));
                    }
                    SimplexVector::renormalized(posterior.row(j))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnchorRows {
        provenance: Provenance::Estimated,
        rows,
    })
}
