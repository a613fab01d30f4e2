//! Estimates part-dependent matrices from anchor rows on a planted problem,
//! assembles T(x) for a new instance and applies a slack revision.

use ndarray::{array, Array1, Array2};
use ptd::anchors::{AnchorRows, Provenance};
use ptd::rng::{self, streams};
use ptd::simplexopt::{ProjGradConfig, SimplexVector};
use ptd::transition::{
    approximation_error, class_dependent_baseline, combine, fit_part_matrices, revise, SlackVariable, TransitionStack,
};
use rand::Rng;

fn random_simplex(g: &mut impl Rng, m: usize) -> SimplexVector {
    let e: Array1<f64> = (0..m).map(|_| -(1.0 - g.random::<f64>()).ln()).collect();
    let s = e.sum();
    SimplexVector::new(e / s).unwrap()
}

fn main() -> ptd::Result<()> {
    let (c, r, k) = (3, 2, 40);
    let truth = TransitionStack::from_matrices(vec![
        array![[0.9, 0.1, 0.0], [0.0, 0.8, 0.2], [0.1, 0.0, 0.9]],
        array![[0.5, 0.5, 0.0], [0.3, 0.7, 0.0], [0.0, 0.4, 0.6]],
    ])?;
    let mut g = rng::stream(11, streams::FIXTURE);

    // anchors of class i reveal row i of T(x) at their own coefficients
    let coeffs: Vec<Vec<SimplexVector>> = (0..c)
        .map(|_| (0..k).map(|_| random_simplex(&mut g, r)).collect())
        .collect();
    let rows = (0..c)
        .map(|i| {
            coeffs[i]
                .iter()
                .map(|h| SimplexVector::new(combine(&truth, h).unwrap().row(i).to_owned()).unwrap())
                .collect()
        })
        .collect();
    let anchor_rows = AnchorRows {
        provenance: Provenance::Oracle,
        rows,
    };

    let stack = fit_part_matrices(&anchor_rows, &coeffs, r, c, &ProjGradConfig::default())?;
    let baseline = class_dependent_baseline(&anchor_rows)?;
    let h = random_simplex(&mut g, r);
    let t_true = combine(&truth, &h)?;
    let t_est = combine(&stack, &h)?;
    println!("fresh instance, h = {:.3}", h.view());
    println!("estimated T(x) =\n{:.3}", t_est.matrix());
    for i in 0..c {
        println!(
            "row {i}: part-dependent error {:.2e}, class-dependent error {:.3}",
            approximation_error(t_est.row(i), t_true.row(i))?,
            approximation_error(baseline.row(i), t_true.row(i))?
        );
    }

    let slack = SlackVariable {
        delta: Array2::from_shape_fn((c, c), |(i, j)| if i == j { 0.05 } else { -0.02 }),
    };
    let revised = revise(&t_est, &slack)?;
    println!("revised T(x) =\n{:.3}", revised.transition.matrix());
    Ok(())
}
