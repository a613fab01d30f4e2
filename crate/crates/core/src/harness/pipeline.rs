use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Representation};
use crate::anchors::{estimate_anchor_rows, select_anchors, AnchorRows, AnchorSet};
use crate::classifier::{evaluate, train, ClassifierParams, RiskKind, TrainConfig, TrainOutcome};
use crate::dataio::{
    normalize_features, save_bundle, split_indices, write_json, write_matrix, BundleMeta, Dataset, SplitSpec,
};
use crate::noisegen::{generate_noise, NoiseGenConfig};
use crate::parts::{fit_parts, infer_all, PartsConfig, PartsModel};
use crate::simplexopt::{ProjGradConfig, SimplexVector};
use crate::transition::{
    approximation_error, class_dependent_baseline, combine, fit_part_matrices, revise_matrix, FixedTransitions,
    InstanceTransition, PartTransitions, SlackVariable, TransitionProvider, TransitionStack,
};
use crate::{Error, Result};

/// Artifact directory names, one per pipeline step, in execution order.
pub const STAGES: [&str; 8] = [
    "00_data",
    "01_noisy_model",
    "02_representations",
    "03_parts",
    "04_anchor_rows",
    "05_part_matrices",
    "06_transitions",
    "07_corrected",
];

/// Train/validation/test split of one (tau, repetition) cell.
#[derive(Debug, Clone)]
pub struct CellData {
    pub tau: f64,
    pub seed: u64,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Generator's full `T(x)` for every training instance, when the labels
    /// were corrupted here.
    pub train_transitions: Option<Vec<Array2<f64>>>,
}

fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    if a.dim() != b.dim() || a.class_count() != b.class_count() {
        return Err(Error::Dimension("train and test datasets disagree on shape".into()));
    }
    let x = concatenate(Axis(0), &[a.features(), b.features()]).expect("same width");
    let mut out = Dataset::new(x, a.class_count())?;
    if let (Some(ya), Some(yb)) = (a.clean_labels(), b.clean_labels()) {
        out = out.with_clean_labels([ya, yb].concat())?;
    }
    if let (Some(ya), Some(yb)) = (a.noisy_labels(), b.noisy_labels()) {
        out = out.with_noisy_labels([ya, yb].concat())?;
    }
    if let (Some(ra), Some(rb)) = (a.true_rows(), b.true_rows()) {
        out = out.with_true_rows(concatenate(Axis(0), &[ra, rb]).expect("same width"))?;
    }
    Ok(out)
}

/// Corrupts (unless labels are already noisy), normalises, and splits.
///
/// Noise is generated on the features as given; normalisation statistics
/// come from all instances of the cell.
pub fn prepare_cell(
    config: &ExperimentConfig,
    base: &Dataset,
    test_base: Option<&Dataset>,
    tau: f64,
    seed: u64,
) -> Result<CellData> {
    let (all, n_test_given) = match test_base {
        Some(t) => (concat(base, t)?, t.len()),
        None => (base.clone(), 0),
    };
    let (noisy, transitions) = if all.noisy_labels().is_some() {
        (all, None)
    } else {
        let out = generate_noise(&all, &NoiseGenConfig { tau, seed })?;
        let ts = out.transitions()?;
        (out.dataset, Some(ts))
    };
    let noisy = normalize_features(&noisy, config.normalize);

    let n = noisy.len();
    let (rest, test_idx) = if n_test_given > 0 {
        (
            (0..n - n_test_given).collect::<Vec<_>>(),
            (n - n_test_given..n).collect::<Vec<_>>(),
        )
    } else {
        split_indices(
            n,
            SplitSpec {
                val_fraction: config.test_fraction,
                seed,
            },
        )?
    };
    let (tr, va) = split_indices(
        rest.len(),
        SplitSpec {
            val_fraction: config.val_fraction,
            seed: seed ^ 0x5eed_5eed,
        },
    )?;
    let train_idx: Vec<usize> = tr.iter().map(|&i| rest[i]).collect();
    let val_idx: Vec<usize> = va.iter().map(|&i| rest[i]).collect();
    let test = noisy.subset(&test_idx)?;
    test.require_clean_labels()?;
    Ok(CellData {
        tau,
        seed,
        train: noisy.subset(&train_idx)?,
        val: noisy.subset(&val_idx)?,
        test,
        train_transitions: transitions.map(|ts| train_idx.iter().map(|&i| ts[i].clone()).collect()),
    })
}

/// Everything the estimation stage learns before corrected training.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub warmup: TrainOutcome,
    /// Noisy posterior on the training set.
    pub posterior: Array2<f64>,
    pub train_representation: Array2<f64>,
    pub test_representation: Array2<f64>,
    pub parts: PartsModel,
    pub anchors: AnchorSet,
    pub anchor_rows: AnchorRows,
    pub stack: TransitionStack,
    pub train_coefficients: Vec<SimplexVector>,
    pub test_coefficients: Vec<SimplexVector>,
}

impl Estimate {
    pub fn provider(&self) -> PartTransitions {
        PartTransitions {
            stack: self.stack.clone(),
            coefficients: self.train_coefficients.clone(),
        }
    }
}

pub fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

/// Features for the factorisation, one row per instance.
pub fn representation(params: &ClassifierParams, kind: Representation, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    match kind {
        Representation::Hidden => params.hidden_representation(x),
        Representation::Raw => Ok(x.to_owned()),
    }
}

/// Anchors' coefficients from the columns of `H`.
pub fn anchor_coefficients(parts: &PartsModel, anchors: &AnchorSet) -> Vec<Vec<SimplexVector>> {
    anchors
        .per_class
        .iter()
        .map(|idx| idx.iter().map(|&j| parts.coefficient(j)).collect())
        .collect()
}

/// Steps 3 to 5 for one part count, given the noisy posterior and representations.
pub fn fit_transitions(
    posterior: ArrayView2<f64>,
    train_representation: ArrayView2<f64>,
    r: usize,
    k: usize,
    parts_config: &PartsConfig,
    solver: &ProjGradConfig,
) -> Result<(PartsModel, AnchorSet, AnchorRows, TransitionStack)> {
    let c = posterior.ncols();
    let parts = fit_parts(train_representation.t(), r, parts_config).map_err(|e| Error::stage("03_parts", e))?;
    let anchors = select_anchors(posterior, k, c).map_err(|e| Error::stage("04_anchor_rows", e))?;
    let rows = estimate_anchor_rows(&anchors, posterior).map_err(|e| Error::stage("04_anchor_rows", e))?;
    let coeffs = anchor_coefficients(&parts, &anchors);
    let stack = fit_part_matrices(&rows, &coeffs, r, c, solver).map_err(|e| Error::stage("05_part_matrices", e))?;
    Ok((parts, anchors, rows, stack))
}

/// The estimation stage up to the per-instance transition matrices, persisting one
/// artifact directory per step under `cell_dir` when given.
pub fn estimate(
    config: &ExperimentConfig,
    cell: &CellData,
    cell_dir: Option<&Path>,
    timings: &mut Timings,
) -> Result<Estimate> {
    let dir = |stage: &str| cell_dir.map(|d| d.join(stage));
    let r = config.r;
    let k = config.anchors_per_class();

    let t = Instant::now();
    let warmup = train(
        &cell.train,
        &cell.val,
        RiskKind::Ce,
        None,
        &with_seed(&config.warmup, cell.seed),
    )
    .map_err(|e| Error::stage("01_noisy_model", e))?;
    let posterior = warmup.params.predict_batch(cell.train.features())?;
    if let Some(d) = dir("01_noisy_model") {
        persist(&d, |d| {
            warmup.params.save(d.join("model.json"))?;
            warmup.log.write_csv(d.join("train_log.csv"))?;
            write_matrix(posterior.view(), d.join("posterior.csv"))
        })
        .map_err(|e| Error::stage("01_noisy_model", e))?;
    }
    timings.add("01_noisy_model", t);

    let t = Instant::now();
    let train_repr = representation(&warmup.params, config.representation, cell.train.features())?;
    let test_repr = representation(&warmup.params, config.representation, cell.test.features())?;
    if let Some(d) = dir("02_representations") {
        persist(&d, |d| {
            write_matrix(train_repr.view(), d.join("train.csv"))?;
            write_matrix(test_repr.view(), d.join("test.csv"))
        })
        .map_err(|e| Error::stage("02_representations", e))?;
    }
    timings.add("02_representations", t);

    let t = Instant::now();
    let (parts, anchors, anchor_rows, stack) =
        fit_transitions(posterior.view(), train_repr.view(), r, k, &config.parts, &config.solver)?;
    if let Some(d) = dir("03_parts") {
        parts.save(&d).map_err(|e| Error::stage("03_parts", e))?;
    }
    if let Some(d) = dir("04_anchor_rows") {
        persist(&d, |d| {
            write_json(&anchors, d.join("anchors.json"))?;
            write_json(&anchor_rows, d.join("anchor_rows.json"))
        })
        .map_err(|e| Error::stage("04_anchor_rows", e))?;
    }
    if let Some(d) = dir("05_part_matrices") {
        stack.save(&d).map_err(|e| Error::stage("05_part_matrices", e))?;
    }
    timings.add("03_05_parts_anchors_matrices", t);

    let t = Instant::now();
    let train_coefficients: Vec<SimplexVector> = (0..cell.train.len()).map(|i| parts.coefficient(i)).collect();
    let test_coefficients = infer_all(&parts, test_repr.t()).map_err(|e| Error::stage("06_transitions", e))?;
    if let Some(d) = dir("06_transitions") {
        persist(&d, |d| {
            write_matrix(
                coefficient_matrix(&train_coefficients).view(),
                d.join("train_coefficients.csv"),
            )?;
            write_matrix(
                coefficient_matrix(&test_coefficients).view(),
                d.join("test_coefficients.csv"),
            )?;
            if config.dump_transitions {
                let c = stack.class_count();
                let mut flat = Array2::<f64>::zeros((train_coefficients.len(), c * c));
                for (i, h) in train_coefficients.iter().enumerate() {
                    let t = combine(&stack, h)?.into_inner();
                    flat.row_mut(i).assign(&ndarray::Array1::from_iter(t.iter().copied()));
                }
                write_matrix(flat.view(), d.join("transitions.csv"))?;
            }
            Ok(())
        })
        .map_err(|e| Error::stage("06_transitions", e))?;
    }
    timings.add("06_transitions", t);

    Ok(Estimate {
        warmup,
        posterior,
        train_representation: train_repr,
        test_representation: test_repr,
        parts,
        anchors,
        anchor_rows,
        stack,
        train_coefficients,
        test_coefficients,
    })
}

fn coefficient_matrix(hs: &[SimplexVector]) -> Array2<f64> {
    let r = hs.first().map(|h| h.len()).unwrap_or(0);
    let mut m = Array2::zeros((hs.len(), r));
    for (i, h) in hs.iter().enumerate() {
        m.row_mut(i).assign(&h.view());
    }
    m
}

fn persist(dir: &Path, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    f(dir)
}

/// Per-instance ℓ₁ errors of estimated rows against the generator's rows,
/// using the row of each instance's clean class.
pub fn row_errors(test: &Dataset, estimated: impl Fn(usize) -> Result<InstanceTransition>) -> Result<Vec<f64>> {
    let truth = test
        .true_rows()
        .ok_or_else(|| Error::InvalidInput("approximation error needs ground-truth rows".into()))?;
    let labels = test.require_clean_labels()?;
    (0..test.len())
        .map(|i| approximation_error(estimated(i)?.row(labels[i]), truth.row(i)))
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

/// Wall-clock seconds per stage, summed over cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings(pub BTreeMap<String, f64>);

impl Timings {
    pub fn add(&mut self, stage: &str, since: Instant) {
        *self.0.entry(stage.to_string()).or_default() += since.elapsed().as_secs_f64();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub tau: f64,
    pub kind: RiskKind,
    pub repetition: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub clamp_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationRecord {
    pub tau: f64,
    pub r: usize,
    pub repetition: usize,
    pub class_dependent: f64,
    pub ptd: f64,
    /// Revised `T(x)` with the slack learned by each revision kind.
    pub revised: BTreeMap<RiskKind, f64>,
}

/// Outputs of one (tau, repetition) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub accuracy: Vec<AccuracyRecord>,
    pub approximation: Option<ApproximationRecord>,
}

/// Runs one cell end to end.
pub fn run_cell(
    config: &ExperimentConfig,
    cell: &CellData,
    repetition: usize,
    cell_dir: Option<&Path>,
    timings: &mut Timings,
) -> Result<CellResult> {
    if let Some(d) = cell_dir {
        let t = Instant::now();
        persist(&d.join(STAGES[0]), |d| {
            for (name, set) in [("train", &cell.train), ("val", &cell.val), ("test", &cell.test)] {
                let mut meta = BundleMeta::for_dataset(set);
                meta.seed = Some(cell.seed);
                meta.normalization = Some(config.normalize);
                meta.noise = Some(serde_json::json!({ "tau": cell.tau, "seed": cell.seed }));
                save_bundle(set, &meta, d.join(name))?;
            }
            Ok(())
        })
        .map_err(|e| Error::stage(STAGES[0], e))?;
        timings.add(STAGES[0], t);
    }

    let est = estimate(config, cell, cell_dir, timings)?;
    let provider = est.provider();
    let has_truth = cell.test.true_rows().is_some();

    let mut accuracy = Vec::new();
    let mut revised = BTreeMap::new();
    for &kind in &config.risks {
        let t = Instant::now();
        let stage = format!("{}/{kind}", STAGES[7]);
        let outcome = train(
            &cell.train,
            &cell.val,
            kind,
            Some(&provider as &dyn TransitionProvider),
            &with_seed(&config.train, cell.seed),
        )
        .map_err(|e| Error::stage(&stage, e))?;
        let acc = evaluate(&outcome.params, &cell.test).map_err(|e| Error::stage(&stage, e))?;
        if let Some(d) = cell_dir {
            persist(&d.join(STAGES[7]).join(kind.name()), |d| {
                outcome.params.save(d.join("model.json"))?;
                outcome.log.write_csv(d.join("train_log.csv"))?;
                if let Some(s) = &outcome.slack {
                    write_matrix(s.delta.view(), d.join("slack.csv"))?;
                }
                write_json(
                    &serde_json::json!({ "accuracy": acc, "best_epoch": outcome.log.best_epoch }),
                    d.join("metrics.json"),
                )
            })
            .map_err(|e| Error::stage(&stage, e))?;
        }
        if let (true, Some(slack)) = (has_truth, outcome.slack.as_ref()) {
            let errs = revised_errors(&cell.test, &est.stack, &est.test_coefficients, slack)?;
            revised.insert(kind, mean(&errs));
        }
        accuracy.push(AccuracyRecord {
            tau: cell.tau,
            kind,
            repetition,
            seed: cell.seed,
            accuracy: acc,
            best_epoch: outcome.log.best_epoch,
            clamp_count: outcome.log.total_clamps(),
        });
        timings.add(STAGES[7], t);
    }

    let approximation = if has_truth {
        let (cd, ptd) = baseline_and_ptd_errors(&cell.test, &est.anchor_rows, &est.stack, &est.test_coefficients)?;
        Some(ApproximationRecord {
            tau: cell.tau,
            r: config.r,
            repetition,
            class_dependent: mean(&cd),
            ptd: mean(&ptd),
            revised,
        })
    } else {
        None
    };
    Ok(CellResult {
        accuracy,
        approximation,
    })
}

/// Per-instance errors of the class-dependent baseline and of PTD.
pub fn baseline_and_ptd_errors(
    test: &Dataset,
    anchor_rows: &AnchorRows,
    stack: &TransitionStack,
    coefficients: &[SimplexVector],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let baseline = class_dependent_baseline(anchor_rows)?;
    let cd = row_errors(test, |_| Ok(baseline.clone()))?;
    let ptd = row_errors(test, |i| combine(stack, &coefficients[i]))?;
    Ok((cd, ptd))
}

pub fn revised_errors(
    test: &Dataset,
    stack: &TransitionStack,
    coefficients: &[SimplexVector],
    slack: &SlackVariable,
) -> Result<Vec<f64>> {
    row_errors(test, |i| {
        let t = combine(stack, &coefficients[i])?;
        InstanceTransition::new(revise_matrix(t.matrix(), slack.delta.view()).0)
    })
}

/// Ground-truth provider for the training set of a corrupted cell.
pub fn oracle_provider(cell: &CellData) -> Result<FixedTransitions> {
    let ts = cell
        .train_transitions
        .clone()
        .ok_or_else(|| Error::InvalidInput("cell labels were not generated here, so no ground truth exists".into()))?;
    FixedTransitions::new(ts)
}

pub fn cell_dir(run_dir: &Path, tau: f64, repetition: usize) -> PathBuf {
    run_dir
        .join("cells")
        .join(format!("tau-{tau}"))
        .join(format!("rep-{repetition}"))
}
