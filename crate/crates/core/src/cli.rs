//! The `ptd` command-line tool. Each subcommand exposes one pipeline step
//! over bundles and artifact directories; `pipeline` runs them all from one
//! config file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::anchors::{estimate_anchor_rows, select_anchors, AnchorRows, AnchorSet};
use crate::classifier::{evaluate, noisy_accuracy, train, ClassifierParams, RiskKind, TrainConfig};
use crate::dataio::{load_bundle, read_json, save_bundle, split_indices, write_json, write_matrix, Dataset, SplitSpec};
use crate::harness::{
    accuracy_table, anchor_coefficients, approximation_sweep, approximation_table, run_pipeline, ttest_two_sample,
    ttest_welch, ExperimentConfig, Report,
};
use crate::noisegen::{generate_noise, NoiseGenConfig, FLIP_RATE_STD};
use crate::parts::{fit_parts, PartsConfig, PartsModel};
use crate::simplexopt::{ProjGradConfig, SimplexVector};
use crate::transition::{fit_part_matrices, PartTransitions, TransitionStack};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "ptd",
    version,
    about = "Part-dependent transition matrices for instance-dependent label noise"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add instance-dependent noisy labels and ground-truth rows to a clean bundle.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit parts W and coefficients H on a bundle's features.
    Factorize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        r: usize,
        /// Factorise this model's hidden layer instead of the raw features.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Select anchors from a noisy-posterior model and read their rows.
    Anchors {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit the part-dependent matrices from anchor rows and parts.
    FitTransition {
        /// Output directory of `anchors`.
        #[arg(long)]
        anchors: PathBuf,
        /// Output directory of `factorize` on the same bundle.
        #[arg(long)]
        parts: PathBuf,
        #[arg(long, default_value_t = 5000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a classifier with one of the risks.
    Train(TrainArgs),
    /// Clean and noisy accuracy of a saved model on a bundle.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Approximation error against ground truth over a range of part counts.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Part counts; defaults to `r_sweep` from the config.
        #[arg(long, value_delimiter = ',')]
        r: Vec<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Two-sample t-test on two comma-separated samples.
    Ttest {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        a: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        b: Vec<f64>,
        #[arg(long)]
        welch: bool,
    },
    /// Print the tables of a finished run (`report.json` or its directory).
    Report {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the whole pipeline from a TOML config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Validation bundle; otherwise `--val-fraction` of the input is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value = "ce")]
    pub risk: RiskKind,
    /// TOML file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directories from `factorize` and `fit-transition`, needed by the ptd risks.
    #[arg(long)]
    pub parts: Option<PathBuf>,
    #[arg(long)]
    pub transitions: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corrupt {
            input,
            tau,
            seed,
            output,
        } => corrupt(&input, tau, seed, &output),
        Command::Factorize {
            input,
            r,
            model,
            seed,
            output,
        } => factorize(&input, r, model.as_deref(), seed, &output),
        Command::Anchors {
            input,
            model,
            k,
            output,
        } => anchors(&input, &model, k, &output),
        Command::FitTransition {
            anchors,
            parts,
            max_iters,
            tol,
            output,
        } => fit_transition(&anchors, &parts, max_iters, tol, &output),
        Command::Train(args) => train_cmd(&args),
        Command::Evaluate { model, input } => {
            let params = ClassifierParams::load(&model)?;
            let (data, _) = load_bundle(&input)?;
            let mut out = json!({ "n": data.len() });
            if data.clean_labels().is_some() {
                out["accuracy"] = json!(evaluate(&params, &data)?);
            }
            if data.noisy_labels().is_some() {
                out["noisy_accuracy"] = json!(noisy_accuracy(&params, &data)?);
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::Sweep { config, r, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rs = if r.is_empty() { cfg.r_sweep.clone() } else { r };
            let table = approximation_sweep(&cfg, &rs)?;
            println!("tau,r,method,mean,std,count");
            for s in &table.rows {
                println!(
                    "{},{},{},{:.6},{:.6},{}",
                    s.tau,
                    s.r.unwrap_or(0),
                    s.method,
                    s.mean,
                    s.std,
                    s.count
                );
            }
            if let Some(o) = output {
                write_json(&table, o)?;
            }
            Ok(())
        }
        Command::Ttest { a, b, welch } => {
            let t = if welch {
                ttest_welch(&a, &b)?
            } else {
                ttest_two_sample(&a, &b)?
            };
            println!("{}", serde_json::to_string_pretty(&t)?);
            Ok(())
        }
        Command::Report { input } => {
            let path = if input.is_dir() {
                input.join("report.json")
            } else {
                input
            };
            let report: Report = read_json(&path)?;
            print_tables(&report);
            Ok(())
        }
        Command::Pipeline { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_pipeline(&cfg)?;
            print_tables(&report);
            println!("run directory: {}", cfg.run_dir().display());
            Ok(())
        }
    }
}

fn print_tables(report: &Report) {
    println!("accuracy (%)\n{}", accuracy_table(report));
    if !report.approximation_summary.is_empty() {
        println!("approximation error (l1)\n{}", approximation_table(report));
    }
    for t in &report.ttests {
        println!(
            "tau={} {} vs {}: t={:.4} dof={:.1} p={:.4}",
            t.tau, t.reference, t.other, t.statistic, t.dof, t.p_value
        );
    }
}

fn corrupt(input: &Path, tau: f64, seed: u64, output: &Path) -> Result<()> {
    let (data, mut meta) = load_bundle(input)?;
    let outcome = generate_noise(&data, &NoiseGenConfig { tau, seed })?;
    meta.seed = Some(seed);
    meta.noise = Some(json!({ "tau": tau, "seed": seed, "flip_rate_std": FLIP_RATE_STD }));
    save_bundle(&outcome.dataset, &meta, output)?;
    log::info!(
        "wrote {} noisy instances to {}",
        outcome.dataset.len(),
        output.display()
    );
    Ok(())
}

fn factorize(input: &Path, r: usize, model: Option<&Path>, seed: u64, output: &Path) -> Result<()> {
    let (data, _) = load_bundle(input)?;
    let x = match model {
        Some(m) => ClassifierParams::load(m)?.hidden_representation(data.features())?,
        None => data.features().to_owned(),
    };
    let config = PartsConfig {
        seed,
        ..Default::default()
    };
    let parts = fit_parts(x.t(), r, &config)?;
    parts.save(output)?;
    log::info!("parts objective {:.6e}", parts.final_objective());
    Ok(())
}

fn anchors(input: &Path, model: &Path, k: usize, output: &Path) -> Result<()> {
    let (data, _) = load_bundle(input)?;
    let params = ClassifierParams::load(model)?;
    let posterior = params.predict_batch(data.features())?;
    let set = select_anchors(posterior.view(), k, data.class_count())?;
    let rows = estimate_anchor_rows(&set, posterior.view())?;
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    write_matrix(posterior.view(), output.join("posterior.csv"))?;
    write_json(&set, output.join("anchors.json"))?;
    write_json(&rows, output.join("anchor_rows.json"))
}

fn fit_transition(anchor_dir: &Path, parts_dir: &Path, max_iters: usize, tol: f64, output: &Path) -> Result<()> {
    let set: AnchorSet = read_json(anchor_dir.join("anchors.json"))?;
    let rows: AnchorRows = read_json(anchor_dir.join("anchor_rows.json"))?;
    let parts = PartsModel::load(parts_dir)?;
    let n = parts.coefficients().ncols();
    if let Some(&j) = set.per_class.iter().flatten().find(|&&j| j >= n) {
        return Err(Error::InvalidInput(format!(
            "anchor index {j} outside the {n} factorised instances"
        )));
    }
    let coeffs = anchor_coefficients(&parts, &set);
    let solver = ProjGradConfig {
        max_iters,
        tol,
        ..Default::default()
    };
    let stack = fit_part_matrices(&rows, &coeffs, parts.r(), set.class_count(), &solver)?;
    stack.save(output)
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<TrainConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let (data, _) = load_bundle(&args.input)?;

    let provider = if args.risk.needs_transitions() {
        let (Some(p), Some(t)) = (&args.parts, &args.transitions) else {
            return Err(Error::Config(format!(
                "risk {} needs --parts and --transitions",
                args.risk
            )));
        };
        let parts = PartsModel::load(p)?;
        if parts.coefficients().ncols() != data.len() {
            return Err(Error::InvalidInput(format!(
                "parts were fitted on {} instances, the training bundle has {}",
                parts.coefficients().ncols(),
                data.len()
            )));
        }
        let coefficients: Vec<SimplexVector> = (0..data.len()).map(|i| parts.coefficient(i)).collect();
        Some(PartTransitions {
            stack: TransitionStack::load(t)?,
            coefficients,
        })
    } else {
        None
    };

    let (train_set, val_set, provider) = match &args.val {
        Some(v) => (data, load_bundle(v)?.0, provider),
        None => {
            let spec = SplitSpec {
                val_fraction: args.val_fraction,
                seed: config.seed,
            };
            let (tr, va) = split_indices(data.len(), spec)?;
            let provider = provider.map(|p| PartTransitions {
                coefficients: tr.iter().map(|&i| p.coefficients[i].clone()).collect(),
                stack: p.stack,
            });
            (data.subset(&tr)?, data.subset(&va)?, provider)
        }
    };
    let outcome = train(
        &train_set,
        &val_set,
        args.risk,
        provider
            .as_ref()
            .map(|p| p as &dyn crate::transition::TransitionProvider),
        &config,
    )?;
    save_training(
        &outcome.params,
        &outcome.log,
        outcome.slack.as_ref(),
        &val_set,
        &args.output,
    )
}

fn save_training(
    params: &ClassifierParams,
    log: &crate::classifier::TrainLog,
    slack: Option<&crate::transition::SlackVariable>,
    val: &Dataset,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    params.save(dir.join("model.json"))?;
    log.write_csv(dir.join("train_log.csv"))?;
    if let Some(s) = slack {
        write_matrix(s.delta.view(), dir.join("slack.csv"))?;
    }
    let metrics = json!({
        "best_epoch": log.best_epoch,
        "val_noisy_accuracy": noisy_accuracy(params, val)?,
    });
    write_json(&metrics, dir.join("metrics.json"))
}
