//! End-to-end experiments: corruption, transition estimation, corrected training,
//! evaluation, significance tests and reports.

mod config;
mod pipeline;
mod stats;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, Representation};
pub use pipeline::{
    anchor_coefficients, baseline_and_ptd_errors, cell_dir, estimate, fit_transitions, oracle_provider, prepare_cell,
    representation, revised_errors, row_errors, run_cell, with_seed, AccuracyRecord, ApproximationRecord, CellData,
    CellResult, Estimate, Timings, STAGES,
};
pub use stats::{mean_std, regularized_incomplete_beta, ttest_two_sample, ttest_welch, two_sided_p, TTest};

use crate::classifier::{train, RiskKind};
use crate::dataio::{load_bundle, write_json, Dataset};
use crate::parts::infer_all;
use crate::transition::{PartTransitions, TransitionProvider};
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub tau: f64,
    /// Risk kind, or an estimator name for approximation rows.
    pub method: String,
    pub r: Option<usize>,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestRecord {
    pub tau: f64,
    pub reference: RiskKind,
    pub other: RiskKind,
    pub welch: bool,
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub accuracy: Vec<AccuracyRecord>,
    pub accuracy_summary: Vec<SummaryRow>,
    pub approximation: Vec<ApproximationRecord>,
    pub approximation_summary: Vec<SummaryRow>,
    pub ttests: Vec<TTestRecord>,
    /// The only field that differs between identical runs.
    pub timings: Timings,
}

impl Report {
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.accuracy.iter().find(|a| !(0.0..=1.0).contains(&a.accuracy)) {
            return Err(Error::Numerical(format!("accuracy {} outside [0, 1]", a.accuracy)));
        }
        if let Some(t) = self.ttests.iter().find(|t| !(0.0..=1.0).contains(&t.p_value)) {
            return Err(Error::Numerical(format!("p-value {} outside [0, 1]", t.p_value)));
        }
        Ok(())
    }
}

pub fn load_datasets(config: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>)> {
    let (base, _) = load_bundle(&config.dataset)?;
    let test = match &config.test_dataset {
        Some(p) => Some(load_bundle(p)?.0),
        None => None,
    };
    if base.noisy_labels().is_some() && config.taus.len() > 1 {
        return Err(Error::Config(
            "dataset already carries noisy labels, so a sweep over several taus is meaningless".into(),
        ));
    }
    Ok((base, test))
}

fn summarize<'a>(groups: impl IntoIterator<Item = ((u64, String, Option<usize>), &'a [f64])>) -> Vec<SummaryRow> {
    groups
        .into_iter()
        .map(|((tau_bits, method, r), values)| {
            let (mean, std) = mean_std(values);
            SummaryRow {
                tau: f64::from_bits(tau_bits),
                method,
                r,
                mean,
                std,
                count: values.len(),
            }
        })
        .collect()
}

fn accuracy_summary(config: &ExperimentConfig, records: &[AccuracyRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<((u64, String, Option<usize>), Vec<f64>)> = Vec::new();
    for &tau in &config.taus {
        for &kind in &config.risks {
            let v = records
                .iter()
                .filter(|a| a.tau == tau && a.kind == kind)
                .map(|a| a.accuracy)
                .collect();
            groups.push(((tau.to_bits(), kind.name().to_string(), None), v));
        }
    }
    summarize(groups.iter().map(|(k, v)| (k.clone(), v.as_slice())))
}

fn approximation_summary(records: &[ApproximationRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, usize, String), Vec<f64>> = BTreeMap::new();
    let mut order: Vec<(u64, usize, String)> = Vec::new();
    let mut push = |key: (u64, usize, String), v: f64| {
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(v);
    };
    for a in records {
        let base = |m: &str| (a.tau.to_bits(), a.r, m.to_string());
        push(base("class_dependent"), a.class_dependent);
        push(base("ptd"), a.ptd);
        for (kind, &v) in &a.revised {
            push(base(&format!("revised_{kind}")), v);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let values = &groups[&key];
            let (mean, std) = mean_std(values);
            SummaryRow {
                tau: f64::from_bits(key.0),
                method: key.2,
                r: Some(key.1),
                mean,
                std,
                count: values.len(),
            }
        })
        .collect()
}

/// Per-tau tests of the reference kind against every other kind.
fn ttests(config: &ExperimentConfig, records: &[AccuracyRecord]) -> Result<Vec<TTestRecord>> {
    let mut out = Vec::new();
    if config.repetitions < 2 || !config.risks.contains(&config.reference) {
        return Ok(out);
    }
    for &tau in &config.taus {
        let sample = |k: RiskKind| -> Vec<f64> {
            records
                .iter()
                .filter(|a| a.tau == tau && a.kind == k)
                .map(|a| a.accuracy)
                .collect()
        };
        let reference = sample(config.reference);
        for &other in config.risks.iter().filter(|&&k| k != config.reference) {
            let t = if config.welch {
                ttest_welch(&reference, &sample(other))?
            } else {
                ttest_two_sample(&reference, &sample(other))?
            };
            out.push(TTestRecord {
                tau,
                reference: config.reference,
                other,
                welch: config.welch,
                statistic: t.statistic,
                dof: t.dof,
                p_value: t.p_value,
            });
        }
    }
    Ok(out)
}

/// Runs every (tau, repetition) cell in order and writes the run directory
/// `output_dir/<config hash>`, ending with the report.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let (base, test) = load_datasets(config)?;
    let run_dir = config.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    write_json(config, run_dir.join("config.json"))?;
    log::info!("run directory {}", run_dir.display());

    let mut timings = Timings::default();
    let mut accuracy = Vec::new();
    let mut approximation = Vec::new();
    for &tau in &config.taus {
        for rep in 0..config.repetitions {
            let seed = config.repetition_seed(rep);
            log::info!("cell tau={tau} repetition={rep} seed={seed}");
            let t = Instant::now();
            let cell = prepare_cell(config, &base, test.as_ref(), tau, seed).map_err(|e| Error::stage(STAGES[0], e))?;
            timings.add(STAGES[0], t);
            let result = run_cell(config, &cell, rep, Some(&cell_dir(&run_dir, tau, rep)), &mut timings)?;
            accuracy.extend(result.accuracy);
            approximation.extend(result.approximation);
        }
    }

    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: config.content_hash(),
        config: config.clone(),
        accuracy_summary: accuracy_summary(config, &accuracy),
        approximation_summary: approximation_summary(&approximation),
        ttests: ttests(config, &accuracy)?,
        accuracy,
        approximation,
        timings,
    };
    report.validate()?;
    emit_report(&report, &run_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Mean and std of per-instance ℓ₁ row error, pooled over repetitions.
    pub rows: Vec<SummaryRow>,
}

impl SweepTable {
    pub fn get(&self, tau: f64, r: usize, method: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|s| s.tau == tau && s.r == Some(r) && s.method == method)
    }
}

/// Approximation error against the generator's rows for each part count.
/// Revision kinds listed in `config.risks` are trained per `r` to obtain
/// their slack.
pub fn approximation_sweep(config: &ExperimentConfig, r_values: &[usize]) -> Result<SweepTable> {
    config.validate()?;
    if r_values.is_empty() {
        return Err(Error::Config("r sweep is empty".into()));
    }
    let (base, test) = load_datasets(config)?;
    let revision: Vec<RiskKind> = config.risks.iter().copied().filter(|k| k.is_revision()).collect();
    let mut pooled: BTreeMap<(u64, usize, String), Vec<f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for &tau in &config.taus {
        for rep in 0..config.repetitions {
            let seed = config.repetition_seed(rep);
            let cell = prepare_cell(config, &base, test.as_ref(), tau, seed)?;
            if cell.test.true_rows().is_none() {
                return Err(Error::InvalidInput(
                    "approximation sweep needs ground-truth rows (true_rows)".into(),
                ));
            }
            let warmup = train(
                &cell.train,
                &cell.val,
                RiskKind::Ce,
                None,
                &with_seed(&config.warmup, seed),
            )?;
            let posterior = warmup.params.predict_batch(cell.train.features())?;
            let train_repr = representation(&warmup.params, config.representation, cell.train.features())?;
            let test_repr = representation(&warmup.params, config.representation, cell.test.features())?;
            for &r in r_values {
                let cfg = ExperimentConfig { r, ..config.clone() };
                let (parts, _, rows, stack) = fit_transitions(
                    posterior.view(),
                    train_repr.view(),
                    r,
                    cfg.anchors_for(r),
                    &cfg.parts,
                    &cfg.solver,
                )?;
                let test_h = infer_all(&parts, test_repr.t())?;
                let (cd, ptd) = baseline_and_ptd_errors(&cell.test, &rows, &stack, &test_h)?;
                let mut add = |method: String, v: Vec<f64>| {
                    let key = (tau.to_bits(), r, method);
                    if !pooled.contains_key(&key) {
                        order.push(key.clone());
                    }
                    pooled.entry(key).or_default().extend(v);
                };
                add("class_dependent".into(), cd);
                add("ptd".into(), ptd);
                let provider = PartTransitions {
                    stack: stack.clone(),
                    coefficients: (0..cell.train.len()).map(|i| parts.coefficient(i)).collect(),
                };
                for &kind in &revision {
                    let out = train(
                        &cell.train,
                        &cell.val,
                        kind,
                        Some(&provider as &dyn TransitionProvider),
                        &with_seed(&config.train, seed),
                    )?;
                    if let Some(slack) = &out.slack {
                        add(
                            format!("revised_{kind}"),
                            revised_errors(&cell.test, &stack, &test_h, slack)?,
                        );
                    }
                }
            }
        }
    }
    let rows = order
        .into_iter()
        .map(|key| {
            let v = &pooled[&key];
            let (mean, std) = mean_std(v);
            SummaryRow {
                tau: f64::from_bits(key.0),
                method: key.2,
                r: Some(key.1),
                mean,
                std,
                count: v.len(),
            }
        })
        .collect();
    Ok(SweepTable { rows })
}

fn tau_header(taus: &[f64]) -> String {
    let mut s = String::from("method");
    for t in taus {
        let _ = write!(s, ",tau={t}");
    }
    s
}

/// Mean±std of fractions, as percentages.
fn percent_cell(row: Option<&SummaryRow>) -> String {
    match row {
        Some(s) => format!("{:.2}±{:.2}", 100.0 * s.mean, 100.0 * s.std),
        None => String::new(),
    }
}

/// Rows are methods, columns are noise levels.
pub fn accuracy_table(report: &Report) -> String {
    let taus = &report.config.taus;
    let mut out = tau_header(taus);
    out.push('\n');
    for kind in &report.config.risks {
        out.push_str(kind.name());
        for &tau in taus {
            let row = report
                .accuracy_summary
                .iter()
                .find(|s| s.tau == tau && s.method == kind.name());
            let _ = write!(out, ",{}", percent_cell(row));
        }
        out.push('\n');
    }
    out
}

/// ℓ₁ errors at the configured `r`; rows are estimators.
pub fn approximation_table(report: &Report) -> String {
    let taus = &report.config.taus;
    let mut methods: Vec<&str> = Vec::new();
    for s in &report.approximation_summary {
        if !methods.contains(&s.method.as_str()) {
            methods.push(&s.method);
        }
    }
    let mut out = tau_header(taus);
    out.push('\n');
    for m in methods {
        out.push_str(m);
        for &tau in taus {
            match report
                .approximation_summary
                .iter()
                .find(|s| s.tau == tau && s.method == m)
            {
                Some(s) => {
                    let _ = write!(out, ",{:.4}±{:.4}", s.mean, s.std);
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `report.json`, `accuracy.csv` and, when ground truth exists,
/// `approximation.csv` into `dir`.
pub fn emit_report(report: &Report, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(report, dir.join("report.json"))?;
    let path = dir.join("accuracy.csv");
    std::fs::write(&path, accuracy_table(report)).map_err(|e| Error::io(&path, e))?;
    if !report.approximation_summary.is_empty() {
        let path = dir.join("approximation.csv");
        std::fs::write(&path, approximation_table(report)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
