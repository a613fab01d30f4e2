//! Recovers a planted parts matrix: X = W* H* with every column of H* on the simplex.

use ndarray::Array2;
use ptd::linalg::frobenius_sq;
use ptd::parts::{fit_parts, infer_coefficients, PartsConfig};
use ptd::rng::{self, streams};
use rand::Rng;

fn main() -> ptd::Result<()> {
    let (d, n, r) = (20, 200, 4);
    let mut g = rng::stream(3, streams::FIXTURE);
    let w = Array2::from_shape_fn((d, r), |_| g.random::<f64>());
    let h = Array2::from_shape_fn((r, n), |_| -g.random::<f64>().ln());
    let h = &h / &h.sum_axis(ndarray::Axis(0));
    let x = w.dot(&h);

    let model = fit_parts(x.view(), r, &PartsConfig::default())?;
    println!(
        "{} alternations, relative objective {:.3e}",
        model.objective_trace().len() - 1,
        model.final_objective() / frobenius_sq(x.view())
    );
    let h0 = infer_coefficients(&model, x.column(0))?;
    println!("coefficients of x_0: {:.4}", h0.view());
    Ok(())
}
