//! Euclidean projection onto the probability simplex and least squares over it.
//!
//! Both the parts coefficients and the rows of the part-dependent transition
//! matrices live on a simplex; this module is the shared kernel for the two.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::power_iteration;
use crate::rng::{self, streams};
use crate::{Error, Result};

/// Tolerance on the row sum accepted by [`SimplexVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Inputs closer than this to the simplex are returned untouched by
/// [`project_simplex`], which makes the projection exactly idempotent.
const FEASIBLE_SLACK: f64 = 1e-12;

/// Nonnegative vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Array1<f64>);

impl SimplexVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("simplex vector cannot be empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "simplex entry {v} is negative or non-finite"
            )));
        }
        let s = values.sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!("simplex vector sums to {s}")));
        }
        Ok(Self(values))
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "simplex dimension must be positive");
        Self(Array1::from_elem(m, 1.0 / m as f64))
    }

    pub fn vertex(m: usize, j: usize) -> Self {
        assert!(j < m, "vertex index out of range");
        let mut v = Array1::zeros(m);
        v[j] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("owned 1-d arrays are contiguous")
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    /// Clips negatives and divides by the sum; falls back to uniform when
    /// nothing positive remains.
    pub fn renormalized(v: ArrayView1<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidInput("simplex vector cannot be empty".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("cannot renormalize a non-finite vector".into()));
        }
        let clipped = v.mapv(|x| x.max(0.0));
        let s = clipped.sum();
        if s > 0.0 {
            Ok(Self(clipped / s))
        } else {
            Ok(Self::uniform(v.len()))
        }
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(v))
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Self {
        v.0.to_vec()
    }
}

fn is_feasible(v: ArrayView1<f64>) -> bool {
    v.iter().all(|&x| x >= 0.0) && (v.sum() - 1.0).abs() <= FEASIBLE_SLACK
}

/// Euclidean projection onto the probability simplex by sort and threshold.
pub fn project_simplex(v: ArrayView1<f64>) -> Result<SimplexVector> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("cannot project a non-finite vector".into()));
    }
    if is_feasible(v) {
        return Ok(SimplexVector(v.to_owned()));
    }
    Ok(SimplexVector(project_unchecked(v)))
}

fn project_unchecked(v: ArrayView1<f64>) -> Array1<f64> {
    let m = v.len();
    let mut order: Vec<usize> = (0..m).collect();
    // Descending by value, ties by index.
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &idx) in order.iter().enumerate() {
        cumsum += v[idx];
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if v[idx] - t > 0.0 {
            theta = t;
        }
    }
    v.mapv(|x| (x - theta).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjGradConfig {
    /// Fixed step; `None` uses `1/L` with `L` from power iteration.
    pub step_size: Option<f64>,
    pub max_iters: usize,
    /// Stop once one iteration lowers the objective by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ProjGradConfig {
    fn default() -> Self {
        Self {
            step_size: None,
            max_iters: 2000,
            tol: 1e-8,
            seed: 0,
        }
    }
}

impl ProjGradConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.step_size {
            if !(s > 0.0) {
                return Err(Error::Config(format!("step size must be positive, got {s}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimplexLsSolution {
    pub solution: SimplexVector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

/// Power-iteration steps used to estimate the Lipschitz constant.
pub const POWER_ITERATIONS: usize = 50;

/// `‖Au - b‖²` in Gram form, `uᵀGu - 2ℓᵀu + ‖b‖²` with `G = AᵀA`, `ℓ = Aᵀb`.
///
/// Building the Gram matrix once lets many right-hand sides share it.
#[derive(Debug, Clone)]
pub struct GramLs {
    gram: Array2<f64>,
    linear: Array1<f64>,
    constant: f64,
    lipschitz: f64,
}

impl GramLs {
    pub fn new(a: ArrayView2<f64>, b: ArrayView1<f64>, seed: u64) -> Result<Self> {
        check_problem(a, b)?;
        let gram = a.t().dot(&a);
        let lipschitz = gram_lipschitz(gram.view(), seed);
        Ok(Self::with_gram(gram, lipschitz, a.t().dot(&b), b.dot(&b)))
    }

    /// Reuses a precomputed `G = AᵀA` and its gradient Lipschitz constant `2 λmax(G)`.
    pub fn with_gram(gram: Array2<f64>, lipschitz: f64, linear: Array1<f64>, constant: f64) -> Self {
        Self {
            gram,
            linear,
            constant,
            lipschitz,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, u: ArrayView1<f64>) -> f64 {
        let gu = self.gram.dot(&u);
        u.dot(&gu) - 2.0 * self.linear.dot(&u) + self.constant
    }

    fn gradient(&self, u: ArrayView1<f64>) -> Array1<f64> {
        (self.gram.dot(&u) - &self.linear) * 2.0
    }

    pub fn solve(&self, init: &SimplexVector, config: &ProjGradConfig) -> Result<SimplexLsSolution> {
        config.validate()?;
        if init.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "initial point has length {}, problem has {}",
                init.len(),
                self.dim()
            )));
        }
        let mut u = init.view().to_owned();
        let mut f = self.objective(u.view());
        let mut trace = vec![f];
        let mut step = match config.step_size {
            Some(s) => s,
            None if self.lipschitz > 0.0 => 1.0 / self.lipschitz,
            None => {
                // A = 0: every feasible point is optimal.
                return Ok(SimplexLsSolution {
                    solution: init.clone(),
                    objective: f.max(0.0),
                    iterations: 0,
                    converged: true,
                    trace,
                });
            }
        };
        // Projected gradient with Nesterov momentum. A step that would raise
        // the objective restarts the momentum from the current iterate, and
        // only then does the step shrink, so the trace never increases.
        let mut converged = false;
        let mut iterations = 0;
        let mut y = u.clone();
        let mut t = 1.0f64;
        let mut halvings = 0;
        while iterations < config.max_iters {
            iterations += 1;
            let g = self.gradient(y.view());
            let cand = project_unchecked((&y - &(&g * step)).view());
            let fc = self.objective(cand.view());
            if fc > f {
                if t > 1.0 {
                    y.assign(&u);
                    t = 1.0;
                    continue;
                }
                halvings += 1;
                if halvings > 40 {
                    // No descent along the projected arc: stationary to rounding.
                    converged = true;
                    break;
                }
                step *= 0.5;
                continue;
            }
            halvings = 0;
            let decrease = f - fc;
            let plain = t == 1.0;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &cand + &((&cand - &u) * ((t - 1.0) / t_next));
            t = t_next;
            u = cand;
            f = fc;
            trace.push(f);
            if decrease < config.tol {
                // only a stalled plain gradient step counts as convergence
                if plain {
                    converged = true;
                    break;
                }
                y.assign(&u);
                t = 1.0;
            }
        }
        Ok(SimplexLsSolution {
            solution: SimplexVector(u),
            objective: f.max(0.0),
            iterations,
            converged,
            trace,
        })
    }
}

fn check_problem(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<()> {
    if a.ncols() == 0 {
        return Err(Error::InvalidInput("least squares needs k >= 1 columns".into()));
    }
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "A has {} rows but b has length {}",
            a.nrows(),
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("least-squares inputs must be finite".into()));
    }
    Ok(())
}

/// Gradient Lipschitz constant `2 λmax(G)` of `uᵀGu`, from a seeded power iteration.
pub fn gram_lipschitz(gram: ArrayView2<f64>, seed: u64) -> f64 {
    let k = gram.nrows();
    let mut rng = rng::stream(seed, streams::SOLVER_INIT);
    let start = Array1::from_shape_simple_fn(k, || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z.abs() + 0.1
    });
    2.0 * power_iteration(gram, start.view(), POWER_ITERATIONS)
}

/// Minimises `‖Au - b‖²` over the simplex by projected gradient from the
/// uniform point.
pub fn solve_simplex_ls(a: ArrayView2<f64>, b: ArrayView1<f64>, config: &ProjGradConfig) -> Result<SimplexLsSolution> {
    solve_simplex_ls_from(a, b, &SimplexVector::uniform(a.ncols().max(1)), config)
}

/// Same as [`solve_simplex_ls`] from a caller-supplied feasible start.
pub fn solve_simplex_ls_from(
    a: ArrayView2<f64>,
    b: ArrayView1<f64>,
    init: &SimplexVector,
    config: &ProjGradConfig,
) -> Result<SimplexLsSolution> {
    let problem = GramLs::new(a, b, config.seed)?;
    let mut sol = problem.solve(init, config)?;
    let r = a.dot(&sol.solution.view()) - b;
    sol.objective = r.dot(&r);
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn feasible_point_is_fixed() {
        let p = project_simplex(array![0.2, 0.3, 0.5].view()).unwrap();
        assert_eq!(p.as_slice(), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn singleton_is_one() {
        for x in [-5.0, 0.0, 0.3, 42.0] {
            assert_eq!(project_simplex(array![x].view()).unwrap().as_slice(), &[1.0]);
        }
    }

    #[test]
    fn known_projection() {
        let p = project_simplex(array![0.5, 0.5, 1.0].view()).unwrap();
        let expected = [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0];
        for (a, b) in p.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_and_nan_rejected() {
        assert!(project_simplex(Array1::<f64>::zeros(0).view()).is_err());
        assert!(project_simplex(array![f64::NAN, 1.0].view()).is_err());
    }

    #[test]
    fn identity_ls_returns_b_or_projection() {
        let a = Array2::<f64>::eye(3);
        let cfg = ProjGradConfig {
            tol: 1e-14,
            ..Default::default()
        };
        let b = array![0.1, 0.6, 0.3];
        let s = solve_simplex_ls(a.view(), b.view(), &cfg).unwrap();
        for (u, v) in s.solution.as_slice().iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-6);
        }
        let b = array![2.0, -1.0, 0.5];
        let s = solve_simplex_ls(a.view(), b.view(), &cfg).unwrap();
        let p = project_simplex(b.view()).unwrap();
        for (u, v) in s.solution.as_slice().iter().zip(p.as_slice()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn max_iters_flags_non_convergence() {
        let a = array![[1.0, 0.9], [0.9, 1.0], [0.0, 0.1]];
        let b = array![3.0, -1.0, 0.5];
        let cfg = ProjGradConfig {
            max_iters: 1,
            tol: 1e-300,
            ..Default::default()
        };
        let s = solve_simplex_ls(a.view(), b.view(), &cfg).unwrap();
        assert!(!s.converged);
        assert!(s.trace.len() <= 2);
    }

    #[test]
    fn non_finite_rejected() {
        let a = array![[1.0, f64::INFINITY]];
        assert!(solve_simplex_ls(a.view(), array![1.0].view(), &ProjGradConfig::default()).is_err());
    }

    #[test]
    fn zero_matrix_keeps_start() {
        let a = Array2::<f64>::zeros((2, 3));
        let s = solve_simplex_ls(a.view(), array![1.0, 2.0].view(), &ProjGradConfig::default()).unwrap();
        assert!(s.converged);
        assert_eq!(s.solution, SimplexVector::uniform(3));
    }

    #[test]
    fn renormalized_clips_and_falls_back() {
        let v = SimplexVector::renormalized(array![-1e-17, 0.5, 0.5].view()).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.5, 0.5]);
        let v = SimplexVector::renormalized(array![-1.0, 0.0].view()).unwrap();
        assert_eq!(v.as_slice(), &[0.5, 0.5]);
    }
}
