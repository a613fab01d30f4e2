//! Euclidean projection onto the simplex and simplex-constrained least squares.

use ndarray::array;
use ptd::simplexopt::{project_simplex, solve_simplex_ls, ProjGradConfig};

fn main() -> ptd::Result<()> {
    let v = array![0.9, 0.4, -0.3, 0.2];
    let p = project_simplex(v.view())?;
    println!("project({v}) = {:.4}", p.view());

    // b is a convex combination of A's columns, so the residual vanishes
    let a = array![[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
    let b = a.dot(&array![0.2, 0.5, 0.3]);
    let sol = solve_simplex_ls(
        a.view(),
        b.view(),
        &ProjGradConfig {
            tol: 1e-14,
            ..Default::default()
        },
    )?;
    println!(
        "argmin ‖Au - b‖² over the simplex: {:.4} (objective {:.2e}, {} iterations)",
        sol.solution.view(),
        sol.objective,
        sol.iterations
    );
    Ok(())
}
