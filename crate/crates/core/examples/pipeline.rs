//! The whole pipeline on a small mixture: corrupt, estimate T(x), train every
//! risk, report. Artifacts go to a temporary run directory.

use ndarray::Array2;
use ptd::classifier::TrainConfig;
use ptd::dataio::{save_bundle, BundleMeta, Dataset, Normalization};
use ptd::harness::{accuracy_table, approximation_table, run_pipeline, ExperimentConfig};
use ptd::rng::{self, streams};
use rand_distr::{Distribution, StandardNormal};

fn main() -> ptd::Result<()> {
    let n = 600;
    let mut g = rng::stream(5, streams::FIXTURE);
    let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| {
        let a = 2.0 * std::f64::consts::PI * y[i] as f64 / 3.0;
        let e: f64 = StandardNormal.sample(&mut g);
        4.0 + 3.0 * if j == 0 { a.cos() } else { a.sin() } + e
    });
    let data = Dataset::new(x, 3)?.with_clean_labels(y)?;

    let root = std::env::temp_dir().join("ptd-pipeline-example");
    let bundle = root.join("data");
    save_bundle(&data, &BundleMeta::for_dataset(&data), &bundle)?;

    let short = TrainConfig {
        epochs: 20,
        lr_milestones: vec![10, 15],
        phase2_epochs: 5,
        ..Default::default()
    };
    let config = ExperimentConfig {
        dataset: bundle,
        normalize: Normalization::ZScore,
        taus: vec![0.3],
        r: 2,
        repetitions: 1,
        output_dir: root.join("runs"),
        warmup: short.clone(),
        train: short,
        ..Default::default()
    };
    let report = run_pipeline(&config)?;
    println!("accuracy (%)\n{}", accuracy_table(&report));
    println!("row error\n{}", approximation_table(&report));
    println!("artifacts under {}", config.run_dir().display());
    Ok(())
}
