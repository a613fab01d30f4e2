//! Trains on noisy labels with plain cross-entropy and with the forward
//! correction under the generator's own transition matrices.

use ndarray::Array2;
use ptd::classifier::{evaluate, train, RiskKind, TrainConfig};
use ptd::dataio::{split_train_val, Dataset, SplitSpec};
use ptd::noisegen::{generate_noise, NoiseGenConfig};
use ptd::rng::{self, streams};
use ptd::transition::FixedTransitions;
use rand_distr::{Distribution, StandardNormal};

fn mixture(n: usize, seed: u64) -> Dataset {
    let mut g = rng::stream(seed, streams::FIXTURE);
    let mut x = Array2::zeros((n, 2));
    let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
    for i in 0..n {
        let a = 2.0 * std::f64::consts::PI * y[i] as f64 / 3.0;
        let e: [f64; 2] = [StandardNormal.sample(&mut g), StandardNormal.sample(&mut g)];
        x[[i, 0]] = 2.0 + 2.0 * a.cos() + e[0];
        x[[i, 1]] = 2.0 + 2.0 * a.sin() + e[1];
    }
    Dataset::new(x, 3).unwrap().with_clean_labels(y).unwrap()
}

fn main() -> ptd::Result<()> {
    let outcome = generate_noise(&mixture(1500, 0), &NoiseGenConfig { tau: 0.35, seed: 0 })?;
    let data = outcome.dataset.clone();
    let all_t = outcome.transitions()?;
    let (test, rest) = split_train_val(
        &data,
        SplitSpec {
            val_fraction: 0.8,
            seed: 1,
        },
    )?;
    let (tr_idx, va_idx) = ptd::dataio::split_indices(
        rest.len(),
        SplitSpec {
            val_fraction: 0.1,
            seed: 2,
        },
    )?;
    let (train_set, val_set) = (rest.subset(&tr_idx)?, rest.subset(&va_idx)?);

    // transitions of the training instances, located through the same splits
    let (_, rest_idx) = ptd::dataio::split_indices(
        data.len(),
        SplitSpec {
            val_fraction: 0.8,
            seed: 1,
        },
    )?;
    let train_t = FixedTransitions::new(tr_idx.iter().map(|&i| all_t[rest_idx[i]].clone()).collect())?;

    let config = TrainConfig {
        epochs: 30,
        lr_milestones: vec![15, 25],
        ..Default::default()
    };
    let ce = train(&train_set, &val_set, RiskKind::Ce, None, &config)?;
    let fwd = train(&train_set, &val_set, RiskKind::PtdF, Some(&train_t), &config)?;
    println!(
        "clean test accuracy: ce {:.3}, forward-corrected {:.3}",
        evaluate(&ce.params, &test)?,
        evaluate(&fwd.params, &test)?
    );
    Ok(())
}
