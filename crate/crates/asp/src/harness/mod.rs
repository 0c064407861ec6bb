//! Experiment orchestration: configuration, per-trial execution, sweeps,
//! artifact persistence, and report emission.
//!
//! Config files are flat `key=value` text with dotted keys, e.g.
//! `train.batches=25000`. CLI flags override file values; the effective
//! config is snapshotted into the run directory.

pub mod report;
pub mod runner;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_EPISODES_PER_DIRECTION;
use crate::training::{Domain, Method, TrainConfig};

pub use report::{analyze_policyspace, emit_report, pca_project, ReportOutcome};
pub use runner::{run_sweep, run_trial, SweepOutcome, TrialStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

/// Full description of one sweep: the axes, budgets, and output location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub methods: Vec<Method>,
    pub paired_counts: Vec<usize>,
    pub trials: usize,
    pub unpaired_count: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
    /// Particle: greedy episodes per mixed direction. Lever: random deals
    /// per composition.
    pub eval_episodes: usize,
    /// Budgets shared by base and new models; `new_batches` overrides the
    /// batch budget for new-model training only.
    pub train: TrainConfig,
    pub new_batches: usize,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, domain: Domain, seed: u64) -> Self {
        let train = match preset {
            Preset::Desk => TrainConfig::desk(domain, seed),
            Preset::Paper => TrainConfig::paper(domain, seed),
        };
        let (trials, paired_counts): (usize, Vec<usize>) = match (preset, domain) {
            (Preset::Paper, Domain::Particle) => (30, (0..=6).collect()),
            (Preset::Paper, Domain::Lever) => (20, vec![0, 2, 4, 6, 8]),
            (Preset::Paper, Domain::Vae) => (20, vec![0, 8, 16, 32]),
            (Preset::Desk, Domain::Particle) => (10, vec![2, 3, 4]),
            (Preset::Desk, Domain::Lever) => (10, vec![4, 6, 8]),
            (Preset::Desk, Domain::Vae) => (10, vec![0, 32]),
        };
        let new_batches = match (preset, domain) {
            (Preset::Desk, Domain::Particle) => 6_000,
            (Preset::Desk, Domain::Lever) => 4_000,
            (Preset::Desk, Domain::Vae) => 2_500,
            (Preset::Paper, _) => train.batches,
        };
        Self {
            domain,
            methods: vec![Method::Asp, Method::Osp, Method::Pc],
            paired_counts,
            trials,
            unpaired_count: train.unpaired_count,
            seed,
            output_dir: PathBuf::from("runs/latest"),
            workers: 1,
            eval_episodes: DEFAULT_EPISODES_PER_DIRECTION,
            train,
            new_batches,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.paired_counts.is_empty() {
            return Err(Error::Config(
                "at least one paired count is required".into(),
            ));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        if self.new_batches == 0 {
            return Err(Error::Config("new_batches must be >= 1".into()));
        }
        self.train.validate()
    }

    /// Apply one flat `section.key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::Config(format!("bad value '{value}' for {key}: {e}")))
        }
        fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
        where
            T::Err: std::fmt::Display,
        {
            value.split(',').map(|v| parse(key, v.trim())).collect()
        }
        match key {
            "experiment.domain" => {
                self.domain = parse(key, value)?;
                self.train.domain = self.domain;
            }
            "experiment.methods" => self.methods = parse_list(key, value)?,
            "experiment.paired_counts" => self.paired_counts = parse_list(key, value)?,
            "experiment.trials" => self.trials = parse(key, value)?,
            "experiment.unpaired_count" => self.unpaired_count = parse(key, value)?,
            "experiment.seed" => {
                self.seed = parse(key, value)?;
                self.train.seed = self.seed;
            }
            "experiment.output_dir" => self.output_dir = PathBuf::from(value),
            "experiment.workers" => self.workers = parse(key, value)?,
            "experiment.eval_episodes" => self.eval_episodes = parse(key, value)?,
            "new.batches" => self.new_batches = parse(key, value)?,
            "train.batches" => self.train.batches = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.model_lr" => self.train.model_lr = parse(key, value)?,
            "train.adversary_lr" => self.train.adversary_lr = parse(key, value)?,
            "train.gamma" => self.train.gamma = parse(key, value)?,
            "train.epsilon_start" => self.train.epsilon_start = parse(key, value)?,
            "train.epsilon_end" => self.train.epsilon_end = parse(key, value)?,
            "train.epsilon_decay_frac" => self.train.epsilon_decay_frac = parse(key, value)?,
            "train.replay_capacity" => self.train.replay_capacity = parse(key, value)?,
            "train.lambda0" => self.train.lambda0 = parse(key, value)?,
            "train.lambda1" => self.train.lambda1 = parse(key, value)?,
            "train.entropy_weight" => self.train.entropy_weight = parse(key, value)?,
            "train.value_weight" => self.train.value_weight = parse(key, value)?,
            "train.update_ratio" => self.train.update_ratio = parse(key, value)?,
            "train.retry_limit" => self.train.retry_limit = parse(key, value)?,
            "train.target_refresh" => self.train.target_refresh = parse(key, value)?,
            "train.latent_dim" => self.train.latent_dim = parse(key, value)?,
            "train.kl_weight" => self.train.kl_weight = parse(key, value)?,
            "train.dataset_size" => self.train.dataset_size = parse(key, value)?,
            "train.min_unpaired_per_batch" => {
                self.train.min_unpaired_per_batch = parse(key, value)?
            }
            "train.adversary_hidden" => self.train.adversary_hidden = parse_list(key, value)?,
            "train.curve_every" => self.train.curve_every = parse(key, value)?,
            "train.world_extent" => self.train.world_extent = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Apply every override from a flat key-value file.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (pairs_applied, (key, value)) in parse_flat_config(&text)?.iter().enumerate() {
            self.set(key, value).map_err(|e| {
                Error::Config(format!(
                    "{} (entry {} of {})",
                    e,
                    pairs_applied + 1,
                    path.display()
                ))
            })?;
        }
        Ok(())
    }

    /// Render the effective config back into the flat file format.
    pub fn to_flat_string(&self) -> String {
        let t = &self.train;
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let paired: Vec<String> = self.paired_counts.iter().map(|p| p.to_string()).collect();
        let entries: Vec<(&str, String)> = vec![
            ("experiment.domain", self.domain.name().to_string()),
            ("experiment.methods", methods.join(",")),
            ("experiment.paired_counts", paired.join(",")),
            ("experiment.trials", self.trials.to_string()),
            ("experiment.unpaired_count", self.unpaired_count.to_string()),
            ("experiment.seed", self.seed.to_string()),
            (
                "experiment.output_dir",
                self.output_dir.display().to_string(),
            ),
            ("experiment.workers", self.workers.to_string()),
            ("experiment.eval_episodes", self.eval_episodes.to_string()),
            ("new.batches", self.new_batches.to_string()),
            ("train.batches", t.batches.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.model_lr", t.model_lr.to_string()),
            ("train.adversary_lr", t.adversary_lr.to_string()),
            ("train.gamma", t.gamma.to_string()),
            ("train.epsilon_start", t.epsilon_start.to_string()),
            ("train.epsilon_end", t.epsilon_end.to_string()),
            ("train.epsilon_decay_frac", t.epsilon_decay_frac.to_string()),
            ("train.replay_capacity", t.replay_capacity.to_string()),
            ("train.lambda0", t.lambda0.to_string()),
            ("train.lambda1", t.lambda1.to_string()),
            ("train.entropy_weight", t.entropy_weight.to_string()),
            ("train.value_weight", t.value_weight.to_string()),
            ("train.update_ratio", t.update_ratio.to_string()),
            ("train.retry_limit", t.retry_limit.to_string()),
            ("train.target_refresh", t.target_refresh.to_string()),
            ("train.latent_dim", t.latent_dim.to_string()),
            ("train.kl_weight", t.kl_weight.to_string()),
            ("train.dataset_size", t.dataset_size.to_string()),
            (
                "train.min_unpaired_per_batch",
                t.min_unpaired_per_batch.to_string(),
            ),
            (
                "train.adversary_hidden",
                t.adversary_hidden
                    .iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("train.curve_every", t.curve_every.to_string()),
            ("train.world_extent", t.world_extent.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

/// Parse flat `key=value` lines; `#` starts a comment, blank lines are
/// skipped. Later entries override earlier ones.
pub fn parse_flat_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected key=value, got '{line}'",
                lineno + 1
            ))
        })?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        match seen.get(&key) {
            Some(&idx) => out[idx] = (key, value),
            None => {
                seen.insert(key.clone(), out.len());
                out.push((key, value));
            }
        }
    }
    Ok(out)
}
