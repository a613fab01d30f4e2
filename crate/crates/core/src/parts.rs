//! Parts-based representation: `X ≈ W H` with a mixed-sign parts matrix `W`
//! (d × r) and coefficient columns `H[:, i]` constrained to the simplex.
//!
//! Fitting alternates an exact ridge-stabilised least-squares solve for `W`
//! with one simplex-constrained least-squares problem per column of `H`.

use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{read_json, read_matrix, write_json, write_matrix};
use crate::linalg::{cholesky_solve, frobenius_sq, orthonormalize_columns, symmetric_eigenvalues};
use crate::rng::{self, streams};
use crate::simplexopt::{gram_lipschitz, GramLs, ProjGradConfig, SimplexVector};
use crate::{Error, Result};

/// Relative ridge on the W-step: `λ = RIDGE · trace(HHᵀ) / r`.
pub const RIDGE: f64 = 1e-8;

/// Power iterations for the randomized range finder used at initialisation.
const RANGE_FINDER_ITERS: usize = 6;

/// How `W` is initialised before alternating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartsInit {
    /// Successive projection: the `r` columns of `X` that in turn have the
    /// largest residual after projecting out the ones already chosen. On data
    /// whose coefficients reach the simplex vertices these are the true parts.
    SuccessiveProjection,
    /// Random combinations of the top-`r` left singular directions (seeded).
    #[default]
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartsConfig {
    pub init: PartsInit,
    /// Inner solver for each coefficient column.
    pub solver: ProjGradConfig,
    pub max_alternations: usize,
    /// Stop when one alternation lowers the objective by less than
    /// `tol × (objective before)`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for PartsConfig {
    fn default() -> Self {
        Self {
            init: PartsInit::default(),
            solver: ProjGradConfig {
                tol: 1e-12,
                max_iters: 5000,
                ..Default::default()
            },
            max_alternations: 200,
            tol: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartsMeta {
    pub r: usize,
    pub d: usize,
    pub n: usize,
    pub final_objective: f64,
    pub objective_trace: Vec<f64>,
    pub config: PartsConfig,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PartsModel {
    w: Array2<f64>,
    h: Array2<f64>,
    final_objective: f64,
    objective_trace: Vec<f64>,
    config: PartsConfig,
    warnings: Vec<String>,
}

impl PartsModel {
    /// Parts matrix, `d × r`.
    pub fn parts(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    /// Coefficients of the training columns, `r × n`.
    pub fn coefficients(&self) -> ArrayView2<'_, f64> {
        self.h.view()
    }

    pub fn coefficient(&self, i: usize) -> SimplexVector {
        SimplexVector::renormalized(self.h.column(i)).expect("stored columns are finite")
    }

    pub fn r(&self) -> usize {
        self.w.ncols()
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn final_objective(&self) -> f64 {
        self.final_objective
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn config(&self) -> &PartsConfig {
        &self.config
    }

    /// Solver settings for coefficients of unseen instances: the fitting
    /// solver with a tighter stopping rule and a larger budget.
    pub fn inference_config(&self) -> ProjGradConfig {
        ProjGradConfig {
            tol: self.config.solver.tol.min(1e-13),
            max_iters: self.config.solver.max_iters.max(20_000),
            ..self.config.solver
        }
    }

    pub fn meta(&self) -> PartsMeta {
        PartsMeta {
            r: self.r(),
            d: self.dim(),
            n: self.h.ncols(),
            final_objective: self.final_objective,
            objective_trace: self.objective_trace.clone(),
            config: self.config,
            warnings: self.warnings.clone(),
        }
    }

    /// Writes `W.csv`, `H.csv` and `parts_meta.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_matrix(self.w.view(), dir.join("W.csv"))?;
        write_matrix(self.h.view(), dir.join("H.csv"))?;
        write_json(&self.meta(), dir.join("parts_meta.json"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let w = read_matrix(dir.join("W.csv"))?;
        let h = read_matrix(dir.join("H.csv"))?;
        let meta: PartsMeta = read_json(dir.join("parts_meta.json"))?;
        if w.ncols() != meta.r || h.nrows() != meta.r || w.nrows() != meta.d || h.ncols() != meta.n {
            return Err(Error::Format("parts files disagree with parts_meta.json".into()));
        }
        for (i, col) in h.columns().into_iter().enumerate() {
            SimplexVector::new(col.to_owned()).map_err(|e| Error::Format(format!("H column {i}: {e}")))?;
        }
        Ok(Self {
            w,
            h,
            final_objective: meta.final_objective,
            objective_trace: meta.objective_trace,
            config: meta.config,
            warnings: meta.warnings,
        })
    }
}

fn objective(x: ArrayView2<f64>, w: ArrayView2<f64>, h: ArrayView2<f64>) -> f64 {
    let resid = &x - &w.dot(&h);
    frobenius_sq(resid.view())
}

/// Random unit vectors in the span of the top-`r` left singular directions
/// of `x`, scaled to the RMS column norm of `x`.
fn initial_parts(x: ArrayView2<f64>, r: usize, seed: u64) -> Array2<f64> {
    let (d, n) = x.dim();
    let mut rng = rng::stream(seed, streams::PARTS_INIT);
    let omega = Array2::from_shape_simple_fn((n, r), || StandardNormal.sample(&mut rng));
    let mut q = x.dot(&omega);
    orthonormalize_columns(&mut q);
    for _ in 0..RANGE_FINDER_ITERS {
        q = x.dot(&x.t().dot(&q));
        orthonormalize_columns(&mut q);
    }
    let mix = Array2::from_shape_simple_fn((r, r), || -> f64 { StandardNormal.sample(&mut rng) });
    let mut w = q.dot(&mix);
    let scale = (frobenius_sq(x) / n as f64).sqrt();
    for mut col in w.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > 1e-12 {
            col.mapv_inplace(|v| v * scale / norm);
        } else {
            // Degenerate span (e.g. rank(X) < r): fall back to a random direction.
            let g = Array1::from_shape_simple_fn(d, || -> f64 { StandardNormal.sample(&mut rng) });
            let gn = g.dot(&g).sqrt();
            col.assign(&(g * (scale / gn)));
        }
    }
    w
}

fn successive_projection(x: ArrayView2<f64>, r: usize) -> Array2<f64> {
    let mut resid = x.to_owned();
    let mut chosen: Vec<usize> = Vec::with_capacity(r);
    for _ in 0..r {
        let norms: Vec<f64> = resid.columns().into_iter().map(|c| c.dot(&c)).collect();
        let mut best = None;
        for (j, &v) in norms.iter().enumerate() {
            if chosen.contains(&j) {
                continue;
            }
            if best.is_none_or(|b: usize| v > norms[b]) {
                best = Some(j);
            }
        }
        let j = best.expect("r <= n");
        chosen.push(j);
        let norm = norms[j].sqrt();
        if norm > 0.0 {
            let u = resid.column(j).mapv(|v| v / norm);
            let proj = u.dot(&resid);
            for (mut col, p) in resid.columns_mut().into_iter().zip(proj.iter()) {
                col.scaled_add(-p, &u);
            }
        }
    }
    let mut w = Array2::zeros((x.nrows(), r));
    for (k, &j) in chosen.iter().enumerate() {
        w.column_mut(k).assign(&x.column(j));
    }
    w
}

/// H-step: every column re-solved from its current value, so no column's
/// residual can grow.
fn update_coefficients(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    h: &mut Array2<f64>,
    solver: &ProjGradConfig,
) -> Result<()> {
    let gram = w.t().dot(&w);
    let lipschitz = gram_lipschitz(gram.view(), solver.seed);
    let linear = w.t().dot(&x); // r × n
    for i in 0..x.ncols() {
        let xi = x.column(i);
        let problem = GramLs::with_gram(gram.clone(), lipschitz, linear.column(i).to_owned(), xi.dot(&xi));
        let init = SimplexVector::renormalized(h.column(i))?;
        let sol = problem.solve(&init, solver)?;
        h.column_mut(i).assign(&sol.solution.view());
    }
    Ok(())
}

/// W-step: `W = X Hᵀ (H Hᵀ + λ I)⁻¹`.
fn update_parts(
    x: ArrayView2<f64>,
    h: ArrayView2<f64>,
    warnings: &mut Vec<String>,
    step: usize,
) -> Result<Array2<f64>> {
    let r = h.nrows();
    let mut hht = h.dot(&h.t());
    let trace: f64 = hht.diag().sum();
    let lambda = RIDGE * trace / r as f64;
    let ev = symmetric_eigenvalues(hht.view());
    if ev[0] <= 1e-10 * trace {
        let msg = format!("alternation {step}: coefficient matrix is rank-deficient, ridge {lambda:e} applied");
        warn!("{msg}");
        warnings.push(msg);
    }
    for k in 0..r {
        hht[[k, k]] += lambda.max(f64::MIN_POSITIVE);
    }
    let rhs = h.dot(&x.t()); // r × d
    let wt = cholesky_solve(hht.view(), rhs.view())?;
    Ok(wt.reversed_axes())
}

/// Fits `r` parts to the columns of `x` (d × n).
pub fn fit_parts(x: ArrayView2<f64>, r: usize, config: &PartsConfig) -> Result<PartsModel> {
    let (d, n) = x.dim();
    if r < 1 || r > d.min(n) {
        return Err(Error::InvalidInput(format!(
            "part count r = {r} must lie in [1, min(d, n)] = [1, {}]",
            d.min(n)
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("data matrix must be finite".into()));
    }
    config.solver.validate()?;

    let mut warnings = Vec::new();
    let mut w = match config.init {
        PartsInit::SuccessiveProjection => successive_projection(x, r),
        PartsInit::Spectral => initial_parts(x, r, config.seed),
    };
    let mut h = Array2::from_elem((r, n), 1.0 / r as f64);
    let mut current = objective(x, w.view(), h.view());
    let mut trace = vec![current];

    for step in 1..=config.max_alternations {
        update_coefficients(x, w.view(), &mut h, &config.solver)?;
        let after_h = objective(x, w.view(), h.view());
        let candidate = update_parts(x, h.view(), &mut warnings, step)?;
        let after_w = objective(x, candidate.view(), h.view());
        // The ridge term can nudge the plain objective up by rounding-level
        // amounts; keep the old parts in that case.
        let next = if after_w <= after_h {
            w = candidate;
            after_w
        } else {
            after_h
        };
        let decrease = current - next;
        current = next;
        trace.push(current);
        if decrease <= config.tol * trace[trace.len() - 2] {
            break;
        }
    }

    Ok(PartsModel {
        w,
        h,
        final_objective: current,
        objective_trace: trace,
        config: *config,
        warnings,
    })
}

/// Simplex coefficients of a new instance with the parts frozen.
pub fn infer_coefficients(model: &PartsModel, x: ArrayView1<f64>) -> Result<SimplexVector> {
    infer_coefficients_with(model, x, &model.inference_config())
}

pub fn infer_coefficients_with(
    model: &PartsModel,
    x: ArrayView1<f64>,
    config: &ProjGradConfig,
) -> Result<SimplexVector> {
    if x.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "instance has {} features, parts have {}",
            x.len(),
            model.dim()
        )));
    }
    let problem = GramLs::new(model.w.view(), x, config.seed)?;
    Ok(problem.solve(&SimplexVector::uniform(model.r()), config)?.solution)
}

/// Coefficients for every column of `x` (d × n), sharing one Gram matrix.
pub fn infer_all(model: &PartsModel, x: ArrayView2<f64>) -> Result<Vec<SimplexVector>> {
    if x.nrows() != model.dim() {
        return Err(Error::Dimension(format!(
            "data has {} rows, parts have {}",
            x.nrows(),
            model.dim()
        )));
    }
    let config = model.inference_config();
    let gram = model.w.t().dot(&model.w);
    let lipschitz = gram_lipschitz(gram.view(), config.seed);
    let linear = model.w.t().dot(&x);
    x.axis_iter(Axis(1))
        .enumerate()
        .map(|(i, xi)| {
            let p = GramLs::with_gram(gram.clone(), lipschitz, linear.column(i).to_owned(), xi.dot(&xi));
            Ok(p.solve(&SimplexVector::uniform(model.r()), &config)?.solution)
        })
        .collect()
}

/// `Σᵢ ‖xᵢ − W h(xᵢ)‖²` with `h` re-inferred for every column of `x`.
pub fn reconstruction_error(model: &PartsModel, x: ArrayView2<f64>) -> Result<f64> {
    let hs = infer_all(model, x)?;
    Ok(x.axis_iter(Axis(1))
        .zip(&hs)
        .map(|(xi, h)| {
            let r = &xi - &model.w.dot(&h.view());
            r.dot(&r)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn r_out_of_range() {
        let x = Array2::<f64>::ones((3, 5));
        assert!(fit_parts(x.view(), 0, &PartsConfig::default()).is_err());
        assert!(fit_parts(x.view(), 4, &PartsConfig::default()).is_err());
    }

    #[test]
    fn single_part_is_the_mean() {
        let x = array![[1.0, 2.0, 6.0], [0.0, -1.0, 4.0]];
        let m = fit_parts(x.view(), 1, &PartsConfig::default()).unwrap();
        assert!(m.coefficients().iter().all(|&v| v == 1.0));
        assert!((m.parts()[[0, 0]] - 3.0).abs() < 1e-6);
        assert!((m.parts()[[1, 0]] - 1.0).abs() < 1e-6);
        let h = infer_coefficients(&m, array![5.0, 5.0].view()).unwrap();
        assert_eq!(h.as_slice(), &[1.0]);
    }

    #[test]
    fn infer_dimension_mismatch() {
        let x = array![[1.0, 2.0, 6.0], [0.0, -1.0, 4.0]];
        let m = fit_parts(x.view(), 1, &PartsConfig::default()).unwrap();
        assert!(infer_coefficients(&m, array![1.0].view()).is_err());
    }

    #[test]
    fn save_and_load() {
        let x = Array2::from_shape_fn((4, 12), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        let m = fit_parts(x.view(), 2, &PartsConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = PartsModel::load(dir.path()).unwrap();
        assert_eq!(back.parts(), m.parts());
        assert_eq!(back.coefficients(), m.coefficients());
        assert_eq!(back.objective_trace(), m.objective_trace());
    }
}
