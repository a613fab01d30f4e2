use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{RiskKind, TrainConfig};
use crate::dataio::Normalization;
use crate::parts::PartsConfig;
use crate::simplexopt::ProjGradConfig;
use crate::{Error, Result};

/// Features handed to the parts factorisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Last hidden layer of the noisy warmup model.
    #[default]
    Hidden,
    Raw,
}

/// One experiment, usually read from TOML. Every field has a default except
/// `dataset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Bundle directory holding the (clean) dataset.
    pub dataset: PathBuf,
    /// Separate test bundle; when absent `test_fraction` is held out.
    pub test_dataset: Option<PathBuf>,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub normalize: Normalization,
    pub taus: Vec<f64>,
    /// Part count for the main pipeline.
    pub r: usize,
    /// Part counts for the approximation sweep.
    pub r_sweep: Vec<usize>,
    /// Anchors per class; defaults to `max(r, 20)`.
    pub k: Option<usize>,
    pub risks: Vec<RiskKind>,
    /// Risk every other kind is t-tested against.
    pub reference: RiskKind,
    pub repetitions: usize,
    pub seed: u64,
    /// Explicit per-repetition seeds; otherwise `seed + repetition`.
    pub seeds: Option<Vec<u64>>,
    pub representation: Representation,
    pub welch: bool,
    pub dump_transitions: bool,
    pub output_dir: PathBuf,
    pub parts: PartsConfig,
    pub solver: ProjGradConfig,
    /// Noisy-posterior model of the first pipeline step.
    pub warmup: TrainConfig,
    /// Corrected training.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            test_dataset: None,
            test_fraction: 0.2,
            val_fraction: 0.1,
            normalize: Normalization::None,
            taus: vec![0.2, 0.3, 0.4, 0.5],
            r: 10,
            r_sweep: (10..=20).collect(),
            k: None,
            risks: RiskKind::ALL.to_vec(),
            reference: RiskKind::PtdRV,
            repetitions: 5,
            seed: 0,
            seeds: None,
            representation: Representation::Hidden,
            welch: false,
            dump_transitions: false,
            output_dir: PathBuf::from("runs"),
            parts: PartsConfig::default(),
            solver: ProjGradConfig {
                tol: 1e-12,
                max_iters: 5000,
                ..Default::default()
            },
            warmup: TrainConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file; relative dataset paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() && !p.as_os_str().is_empty() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut cfg.dataset);
            if let Some(t) = cfg.test_dataset.as_mut() {
                fix(t);
            }
            fix(&mut cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dataset.as_os_str().is_empty() {
            return bad("dataset path is required");
        }
        if self.taus.is_empty() || self.risks.is_empty() {
            return bad("taus and risks must be nonempty");
        }
        if let Some(t) = self.taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Config(format!("tau {t} outside [0, 1]")));
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.repetitions {
                return Err(Error::Config(format!(
                    "{} seeds given for {} repetitions",
                    seeds.len(),
                    self.repetitions
                )));
            }
        }
        if self.r == 0 || self.r_sweep.contains(&0) {
            return bad("part counts must be positive");
        }
        if self.k.is_some_and(|k| k < self.r) {
            return Err(Error::Config(format!(
                "k = {} anchors per class is below r = {}; need at least r anchor points per class",
                self.k.unwrap_or(0),
                self.r
            )));
        }
        if self.test_dataset.is_none() && !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1) when no test dataset is given");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        self.parts.solver.validate()?;
        self.solver.validate()?;
        self.warmup.validate()?;
        self.train.validate()
    }

    pub fn anchors_per_class(&self) -> usize {
        self.k.unwrap_or(self.r.max(20))
    }

    pub fn anchors_for(&self, r: usize) -> usize {
        self.k.unwrap_or(20).max(r)
    }

    pub fn repetition_seed(&self, rep: usize) -> u64 {
        match &self.seeds {
            Some(s) => s[rep],
            None => self.seed.wrapping_add(rep as u64),
        }
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.content_hash()[..16])
    }
}
