use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerKind};
use super::risk::{risk, Batch, RiskKind, RiskOptions, DEFAULT_WEIGHT_CAP};
use super::{noisy_accuracy, Architecture, ClassifierParams};
use crate::dataio::Dataset;
use crate::rng::{self, streams, Rng};
use crate::transition::{SlackVariable, TransitionProvider};
use crate::{Error, Result};

/// Two-phase schedule. Phase 1 trains the classifier alone with the
/// configured optimizer and step decay. Phase 2 runs only for the revision
/// kinds: Adam at `slack_learning_rate` updates classifier and `ΔT` jointly.
///
/// `detach_reweight` freezes the reweighting factor in phase 1. Phase 2
/// always differentiates through it, since that is the only path from the
/// reweighted loss to `ΔT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs after which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub seed: u64,
    pub slack_learning_rate: Option<f64>,
    pub phase2_epochs: usize,
    pub weight_cap: f64,
    pub detach_reweight: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            optimizer: OptimizerKind::SgdMomentum,
            learning_rate: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 100,
            lr_milestones: vec![40, 80],
            lr_decay: 0.1,
            seed: 0,
            slack_learning_rate: Some(5e-7),
            phase2_epochs: 20,
            weight_cap: DEFAULT_WEIGHT_CAP,
            detach_reweight: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if let Some(lr) = self.slack_learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("slack_learning_rate must be positive, got {lr}"));
            }
        }
        if !(self.weight_cap > 0.0) {
            return bad(format!("weight_cap must be positive, got {}", self.weight_cap));
        }
        if self.architecture.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| epoch > m).count();
        self.learning_rate * self.lr_decay.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub phase: u8,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub clamp_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainLog {
    /// `train_log.csv`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        for row in &self.rows {
            w.serialize(row)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn total_clamps(&self) -> usize {
        self.rows.iter().map(|r| r.clamp_count).sum()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ClassifierParams,
    pub slack: Option<SlackVariable>,
    pub log: TrainLog,
}

struct EpochStats {
    loss: f64,
    clamps: usize,
}

struct Phase<'a> {
    kind: RiskKind,
    options: RiskOptions,
    lr: f64,
    optimizer: &'a mut Optimizer,
    slack: Option<(&'a mut SlackVariable, &'a mut Optimizer)>,
}

/// Trains on the noisy labels of `train_set`, keeping the epoch with the best
/// argmax agreement between `g(x)` and the noisy labels of `val_set`.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    kind: RiskKind,
    transitions: Option<&dyn TransitionProvider>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let labels = train_set.require_noisy_labels()?;
    val_set.require_noisy_labels()?;
    let (d, c) = (train_set.dim(), train_set.class_count());
    if val_set.dim() != d || val_set.class_count() != c {
        return Err(Error::Dimension("train and validation sets disagree on shape".into()));
    }
    if kind.needs_transitions() {
        let t =
            transitions.ok_or_else(|| Error::InvalidInput(format!("{kind} needs per-instance transition matrices")))?;
        if t.len() != train_set.len() || t.class_count() != c {
            return Err(Error::Dimension(format!(
                "transition provider covers {} instances of {} classes, training set has {} of {c}",
                t.len(),
                t.class_count(),
                train_set.len()
            )));
        }
    }
    let slack_lr = match (kind.is_revision(), config.slack_learning_rate) {
        (true, None) => return Err(Error::Config(format!("{kind} needs slack_learning_rate"))),
        (_, lr) => lr,
    };

    let mut params = ClassifierParams::init(d, c, &config.architecture, config.seed)?;
    let mut order_rng = rng::stream(config.seed, streams::BATCH_ORDER);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rows = Vec::new();
    let mut best = (f64::NEG_INFINITY, params.clone(), None, 0);
    let mut record = |epoch: usize,
                      phase: u8,
                      lr: f64,
                      stats: EpochStats,
                      p: &ClassifierParams,
                      s: Option<&SlackVariable>|
     -> Result<()> {
        if !stats.loss.is_finite() {
            return Err(Error::NonConvergence(format!(
                "training loss became non-finite at epoch {epoch}"
            )));
        }
        let acc = noisy_accuracy(p, val_set)?;
        log::debug!("epoch {epoch} phase {phase}: loss {:.5}, val {:.4}", stats.loss, acc);
        rows.push(TrainLogRow {
            epoch,
            phase,
            learning_rate: lr,
            train_loss: stats.loss,
            val_accuracy: acc,
            clamp_count: stats.clamps,
        });
        if acc > best.0 {
            best = (acc, p.clone(), s.cloned(), epoch);
        }
        Ok(())
    };

    let mut opt = Optimizer::new(config.optimizer, config.momentum, config.weight_decay);
    let base = kind.without_revision();
    let zero_slack = kind.is_revision().then(|| SlackVariable::zeros(c));
    for epoch in 1..=config.epochs {
        let lr = config.learning_rate_at(epoch);
        let phase = Phase {
            kind: base,
            options: RiskOptions {
                weight_cap: config.weight_cap,
                detach_weight: config.detach_reweight,
            },
            lr,
            optimizer: &mut opt,
            slack: None,
        };
        let stats = run_epoch(
            &mut params,
            train_set,
            labels,
            transitions,
            &mut order,
            &mut order_rng,
            phase,
            config,
        )?;
        record(epoch, 1, lr, stats, &params, zero_slack.as_ref())?;
    }

    if let (true, Some(lr)) = (kind.is_revision(), slack_lr) {
        let mut slack = SlackVariable::zeros(c);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.0, config.weight_decay);
        let mut slack_opt = Optimizer::new(OptimizerKind::Adam, 0.0, 0.0);
        for epoch in config.epochs + 1..=config.epochs + config.phase2_epochs {
            let phase = Phase {
                kind,
                options: RiskOptions {
                    weight_cap: config.weight_cap,
                    detach_weight: false,
                },
                lr,
                optimizer: &mut opt,
                slack: Some((&mut slack, &mut slack_opt)),
            };
            let stats = run_epoch(
                &mut params,
                train_set,
                labels,
                transitions,
                &mut order,
                &mut order_rng,
                phase,
                config,
            )?;
            record(epoch, 2, lr, stats, &params, Some(&slack))?;
        }
    }

    let (_, params, slack, best_epoch) = best;
    Ok(TrainOutcome {
        params,
        slack,
        log: TrainLog { rows, best_epoch },
    })
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    params: &mut ClassifierParams,
    set: &Dataset,
    labels: &[usize],
    transitions: Option<&dyn TransitionProvider>,
    order: &mut [usize],
    order_rng: &mut Rng,
    phase: Phase<'_>,
    config: &TrainConfig,
) -> Result<EpochStats> {
    order.shuffle(order_rng);
    let Phase {
        kind,
        options,
        lr,
        optimizer,
        mut slack,
    } = phase;
    let mut total = 0.0;
    let mut clamps = 0;
    for chunk in order.chunks(config.batch_size) {
        let x = set.features().select(Axis(0), chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let ts: Vec<Array2<f64>> = match (kind.needs_transitions(), transitions) {
            (true, Some(p)) => chunk.iter().map(|&i| p.transition(i)).collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        let batch = Batch {
            features: x.view(),
            labels: &y,
            transitions: &ts,
        };
        let out = risk(params, batch, kind, slack.as_ref().map(|(s, _)| &**s), options)?;
        total += out.loss * chunk.len() as f64;
        clamps += out.clamp_count;
        optimizer.step(&mut params.tensors_mut(), &out.grads.tensors(), lr);
        if let (Some((s, opt)), Some(g)) = (slack.as_mut(), out.slack_grad.as_ref()) {
            let grad = g.as_slice().expect("standard layout");
            opt.step(&mut [s.delta.as_slice_mut().expect("standard layout")], &[grad], lr);
        }
    }
    Ok(EpochStats {
        loss: total / set.len() as f64,
        clamps,
    })
}
