//! Corrupts a small Gaussian mixture with instance-dependent noise and
//! prints the flip statistics and one instance's transition matrix.
//!
//!     cargo run --example noise_generation -- 0.3

use ndarray::Array2;
use ptd::dataio::Dataset;
use ptd::noisegen::{flip_fraction, generate_noise, NoiseGenConfig};
use ptd::rng::{self, streams};
use rand_distr::{Distribution, StandardNormal};

fn main() -> ptd::Result<()> {
    let tau: f64 = std::env::args().nth(1).map_or(0.3, |s| s.parse().expect("tau"));
    let (n, d, c) = (2000, 5, 3);
    let mut r = rng::stream(7, streams::FIXTURE);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let x = Array2::from_shape_fn((n, d), |(i, j)| {
        let z: f64 = StandardNormal.sample(&mut r);
        z + if j == labels[i] { 3.0 } else { 0.0 }
    });
    let data = Dataset::new(x, c)?.with_clean_labels(labels)?;

    let outcome = generate_noise(&data, &NoiseGenConfig { tau, seed: 1 })?;
    let mean_q = outcome.flip_rates.iter().sum::<f64>() / n as f64;
    println!(
        "tau = {tau}: mean flip rate {mean_q:.4}, realised flip fraction {:.4}",
        flip_fraction(&outcome.dataset)?
    );
    println!("T(x_0) =\n{:.3}", outcome.transition(0)?);
    println!(
        "row recorded for x_0 (clean class {}): {:.3}",
        0,
        outcome.dataset.true_rows().unwrap().row(0)
    );
    Ok(())
}
