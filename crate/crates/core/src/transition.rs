//! Part-dependent transition matrices.
//!
//! `T(x) ≈ Σⱼ hⱼ(x) Pʲ`, where `h(x)` are the instance's parts coefficients
//! and `P¹..Pʳ` are row-stochastic. The `Pʲ` are learned row by row from
//! anchor rows; a shared slack matrix `ΔT` can revise the assembled `T(x)`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorRows;
use crate::dataio::{check_stochastic_row, read_json, read_matrix, write_json, write_matrix, ROW_SUM_TOL};
use crate::simplexopt::{project_simplex, ProjGradConfig, SimplexVector};
use crate::{Error, Result};

/// A row-stochastic `c × c` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTransition {
    matrix: Array2<f64>,
}

impl InstanceTransition {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "transition matrix must be square, got {:?}",
                matrix.dim()
            )));
        }
        for (i, row) in matrix.rows().into_iter().enumerate() {
            check_stochastic_row(row, ROW_SUM_TOL).map_err(|m| Error::InvalidInput(format!("row {i}: {m}")))?;
        }
        Ok(Self { matrix })
    }

    pub fn identity(c: usize) -> Self {
        Self { matrix: Array2::eye(c) }
    }

    pub fn class_count(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.matrix
    }
}

/// Additive correction `ΔT`, shared by all instances. Mixed sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackVariable {
    pub delta: Array2<f64>,
}

impl SlackVariable {
    pub fn zeros(c: usize) -> Self {
        Self {
            delta: Array2::zeros((c, c)),
        }
    }

    pub fn class_count(&self) -> usize {
        self.delta.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Revision {
    pub transition: InstanceTransition,
    /// Rows with no positive entry after clipping, replaced by the uniform row.
    pub degenerate_rows: Vec<usize>,
}

/// `T + ΔT` with negatives clipped to zero and each row renormalised.
/// Rows with nothing positive left fall back to uniform. A row whose slack
/// is all zero is copied unchanged.
pub(crate) fn revise_matrix(t: ArrayView2<f64>, delta: ArrayView2<f64>) -> (Array2<f64>, Vec<usize>) {
    let c = t.ncols();
    let mut out = &t + &delta;
    let mut degenerate = Vec::new();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        if delta.row(i).iter().all(|&v| v == 0.0) && t.row(i).iter().all(|&v| v >= 0.0) {
            row.assign(&t.row(i));
            continue;
        }
        row.mapv_inplace(|v| v.max(0.0));
        let s = row.sum();
        if s > 0.0 && s.is_finite() {
            row.mapv_inplace(|v| v / s);
        } else {
            row.fill(1.0 / c as f64);
            degenerate.push(i);
        }
    }
    (out, degenerate)
}

pub fn revise(t: &InstanceTransition, slack: &SlackVariable) -> Result<Revision> {
    if slack.delta.dim() != t.matrix.dim() {
        return Err(Error::Dimension(format!(
            "slack is {:?}, transition is {:?}",
            slack.delta.dim(),
            t.matrix.dim()
        )));
    }
    let (matrix, degenerate_rows) = revise_matrix(t.matrix.view(), slack.delta.view());
    Ok(Revision {
        transition: InstanceTransition { matrix },
        degenerate_rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackMeta {
    pub r: usize,
    pub c: usize,
    pub fit_objective_per_row: Vec<f64>,
    pub objective_traces: Vec<Vec<f64>>,
}

/// The `r` part-dependent matrices `P¹..Pʳ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionStack {
    matrices: Vec<Array2<f64>>,
    fit_objective_per_row: Vec<f64>,
    objective_traces: Vec<Vec<f64>>,
}

impl TransitionStack {
    pub fn from_matrices(matrices: Vec<Array2<f64>>) -> Result<Self> {
        let c = matrices.first().map(|m| m.nrows()).unwrap_or(0);
        if c == 0 {
            return Err(Error::InvalidInput("stack needs at least one nonempty matrix".into()));
        }
        for (j, m) in matrices.iter().enumerate() {
            InstanceTransition::new(m.clone()).map_err(|e| Error::InvalidInput(format!("P{}: {e}", j + 1)))?;
            if m.nrows() != c {
                return Err(Error::Dimension(format!(
                    "P{} has {} classes, expected {c}",
                    j + 1,
                    m.nrows()
                )));
            }
        }
        Ok(Self {
            matrices,
            fit_objective_per_row: vec![0.0; c],
            objective_traces: vec![Vec::new(); c],
        })
    }

    pub fn r(&self) -> usize {
        self.matrices.len()
    }

    pub fn class_count(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.matrices
    }

    pub fn fit_objective_per_row(&self) -> &[f64] {
        &self.fit_objective_per_row
    }

    /// Objective after every block sweep, per class row.
    pub fn objective_traces(&self) -> &[Vec<f64>] {
        &self.objective_traces
    }

    pub fn meta(&self) -> StackMeta {
        StackMeta {
            r: self.r(),
            c: self.class_count(),
            fit_objective_per_row: self.fit_objective_per_row.clone(),
            objective_traces: self.objective_traces.clone(),
        }
    }

    /// Writes `P_1.csv .. P_r.csv` and `stack_meta.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (j, m) in self.matrices.iter().enumerate() {
            write_matrix(m.view(), dir.join(format!("P_{}.csv", j + 1)))?;
        }
        write_json(&self.meta(), dir.join("stack_meta.json"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: StackMeta = read_json(dir.join("stack_meta.json"))?;
        let matrices = (1..=meta.r)
            .map(|j| read_matrix(dir.join(format!("P_{j}.csv"))))
            .collect::<Result<Vec<_>>>()?;
        let mut stack = Self::from_matrices(matrices)?;
        if stack.class_count() != meta.c {
            return Err(Error::Format("stack_meta.json disagrees with the P files".into()));
        }
        stack.fit_objective_per_row = meta.fit_objective_per_row;
        stack.objective_traces = meta.objective_traces;
        Ok(stack)
    }
}

fn row_objective(targets: &[ArrayView1<f64>], coeffs: &[&SimplexVector], rows: &Array2<f64>) -> f64 {
    targets
        .iter()
        .zip(coeffs)
        .map(|(t, h)| {
            let fit = h.view().dot(rows);
            let r = t - &fit;
            r.dot(&r)
        })
        .sum()
}

/// Learns row `i` of every `Pʲ` from the anchors of class `i`, independently
/// per class, by cyclic block projected gradient over `j`.
///
/// Each block step uses the block's exact Lipschitz constant, so it is the
/// exact minimiser over that block and the objective never increases.
/// `config.step_size` is not used; `max_iters` counts block sweeps.
pub fn fit_part_matrices(
    anchor_rows: &AnchorRows,
    coefficients: &[Vec<SimplexVector>],
    r: usize,
    c: usize,
    config: &ProjGradConfig,
) -> Result<TransitionStack> {
    config.validate()?;
    if anchor_rows.class_count() != c || coefficients.len() != c {
        return Err(Error::Dimension(format!(
            "expected anchors and coefficients for {c} classes, got {} and {}",
            anchor_rows.class_count(),
            coefficients.len()
        )));
    }
    let mut matrices = vec![Array2::<f64>::zeros((c, c)); r];
    let mut objectives = Vec::with_capacity(c);
    let mut traces = Vec::with_capacity(c);

    for i in 0..c {
        let rows = &anchor_rows.rows[i];
        let hs = &coefficients[i];
        if rows.len() != hs.len() {
            return Err(Error::Dimension(format!(
                "class {i}: {} anchor rows but {} coefficient vectors",
                rows.len(),
                hs.len()
            )));
        }
        if rows.len() < r {
            return Err(Error::InvalidInput(format!(
                "class {i} has {} anchors; the problem is underdetermined, need at least r = {r} anchor points per class",
                rows.len()
            )));
        }
        if let Some(h) = hs.iter().find(|h| h.len() != r) {
            return Err(Error::Dimension(format!(
                "coefficient vector has length {}, expected {r}",
                h.len()
            )));
        }
        if let Some(t) = rows.iter().find(|t| t.len() != c) {
            return Err(Error::Dimension(format!(
                "anchor row has length {}, expected {c}",
                t.len()
            )));
        }
        let (block, objective, trace) = fit_class_row(rows, hs, r, c, config)?;
        for (j, m) in matrices.iter_mut().enumerate() {
            m.row_mut(i).assign(&block.row(j));
        }
        objectives.push(objective);
        traces.push(trace);
    }
    Ok(TransitionStack {
        matrices,
        fit_objective_per_row: objectives,
        objective_traces: traces,
    })
}

/// Returns the `r × c` block of rows `P¹ᵢ..Pʳᵢ`.
fn fit_class_row(
    rows: &[SimplexVector],
    hs: &[SimplexVector],
    r: usize,
    c: usize,
    config: &ProjGradConfig,
) -> Result<(Array2<f64>, f64, Vec<f64>)> {
    let targets: Vec<ArrayView1<f64>> = rows.iter().map(|t| t.view()).collect();
    let coeffs: Vec<&SimplexVector> = hs.iter().collect();
    let mut block = Array2::from_elem((r, c), 1.0 / c as f64);
    let curvature: Vec<f64> = (0..r).map(|j| hs.iter().map(|h| h[j] * h[j]).sum()).collect();

    // residuals[l] = t_l − Σⱼ h_lj pⱼ
    let mut residuals: Vec<Array1<f64>> = targets
        .iter()
        .zip(&coeffs)
        .map(|(t, h)| t - &h.view().dot(&block))
        .collect();
    let mut f = row_objective(&targets, &coeffs, &block);
    let mut trace = vec![f];

    for _sweep in 0..config.max_iters {
        for j in 0..r {
            if curvature[j] <= 0.0 {
                continue;
            }
            let mut target = block.row(j).to_owned();
            for (res, h) in residuals.iter().zip(&coeffs) {
                target.scaled_add(h[j] / curvature[j], res);
            }
            let next = project_simplex(target.view())?.into_inner();
            let change = &next - &block.row(j);
            for (res, h) in residuals.iter_mut().zip(&coeffs) {
                res.scaled_add(-h[j], &change);
            }
            block.row_mut(j).assign(&next);
        }
        let next_f = row_objective(&targets, &coeffs, &block);
        let decrease = f - next_f;
        f = next_f;
        trace.push(f);
        if decrease < config.tol {
            break;
        }
    }
    Ok((block, f, trace))
}

/// `T(x) = Σⱼ hⱼ Pʲ`.
pub fn combine(stack: &TransitionStack, h: &SimplexVector) -> Result<InstanceTransition> {
    if h.len() != stack.r() {
        return Err(Error::Dimension(format!(
            "coefficients have length {}, stack has {} parts",
            h.len(),
            stack.r()
        )));
    }
    let c = stack.class_count();
    let mut t = Array2::<f64>::zeros((c, c));
    for (m, &w) in stack.matrices.iter().zip(h.as_slice()) {
        t.scaled_add(w, m);
    }
    Ok(InstanceTransition { matrix: t })
}

/// `‖estimated − truth‖₁`.
pub fn approximation_error(estimated_row: ArrayView1<f64>, true_row: ArrayView1<f64>) -> Result<f64> {
    if estimated_row.len() != true_row.len() {
        return Err(Error::Dimension(format!(
            "rows have lengths {} and {}",
            estimated_row.len(),
            true_row.len()
        )));
    }
    Ok(estimated_row.iter().zip(true_row).map(|(a, b)| (a - b).abs()).sum())
}

/// Instance-independent comparator: row `i` is the renormalised mean of the
/// class-`i` anchor rows.
pub fn class_dependent_baseline(anchor_rows: &AnchorRows) -> Result<InstanceTransition> {
    let c = anchor_rows.class_count();
    let mut t = Array2::<f64>::zeros((c, c));
    for (i, rows) in anchor_rows.rows.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::InvalidInput(format!("class {i} has no anchor rows")));
        }
        let mut mean = Array1::<f64>::zeros(c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Dimension(format!(
                    "anchor row has length {}, expected {c}",
                    row.len()
                )));
            }
            mean += &row.view();
        }
        mean /= rows.len() as f64;
        t.row_mut(i).assign(&SimplexVector::renormalized(mean.view())?.view());
    }
    Ok(InstanceTransition { matrix: t })
}

/// Per-instance transition matrices, indexed like the training set.
pub trait TransitionProvider {
    fn class_count(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn transition(&self, index: usize) -> Result<Array2<f64>>;
}

/// Matrices held in memory.
#[derive(Debug, Clone)]
pub struct FixedTransitions {
    matrices: Vec<Array2<f64>>,
}

impl FixedTransitions {
    pub fn new(matrices: Vec<Array2<f64>>) -> Result<Self> {
        let c = matrices.first().map(|m| m.nrows()).unwrap_or(0);
        if matrices.iter().any(|m| m.dim() != (c, c)) {
            return Err(Error::Dimension(
                "transition matrices must share one square shape".into(),
            ));
        }
        Ok(Self { matrices })
    }

    pub fn identity(c: usize, n: usize) -> Self {
        Self {
            matrices: vec![Array2::eye(c); n],
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            matrices: indices.iter().map(|&i| self.matrices[i].clone()).collect(),
        }
    }
}

impl TransitionProvider for FixedTransitions {
    fn class_count(&self) -> usize {
        self.matrices.first().map(|m| m.nrows()).unwrap_or(0)
    }

    fn len(&self) -> usize {
        self.matrices.len()
    }

    fn transition(&self, index: usize) -> Result<Array2<f64>> {
        self.matrices
            .get(index)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no transition for instance {index}")))
    }
}

/// `T(x)` assembled on demand from a stack and per-instance coefficients.
#[derive(Debug, Clone)]
pub struct PartTransitions {
    pub stack: TransitionStack,
    pub coefficients: Vec<SimplexVector>,
}

impl TransitionProvider for PartTransitions {
    fn class_count(&self) -> usize {
        self.stack.class_count()
    }

    fn len(&self) -> usize {
        self.coefficients.len()
    }

    fn transition(&self, index: usize) -> Result<Array2<f64>> {
        let h = self
            .coefficients
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("no coefficients for instance {index}")))?;
        Ok(combine(&self.stack, h)?.into_inner())
    }
}
