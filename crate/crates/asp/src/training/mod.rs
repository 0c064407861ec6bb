//! Base-model self-play training with quality gates, dataset generation
//! (P and U), and the three new-model procedures (ASP, OSP, PC).

pub mod lever;
pub mod particle;
pub mod vae;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{PairedDataset, UnpairedDataset};
use crate::error::{Error, Result};
use crate::models::{Actor, AdversaryNet, CommNet, Speaker, VaeDecoder, VaeEncoder};

pub use lever::dqn_update;
pub use particle::a2c_update;
pub use vae::{kl_divergence, vae_update};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Particle,
    Vae,
    Lever,
}

impl Domain {
    pub fn name(&self) -> &'static str {
        match self {
            Domain::Particle => "particle",
            Domain::Vae => "vae",
            Domain::Lever => "lever",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "particle" => Ok(Domain::Particle),
            "vae" => Ok(Domain::Vae),
            "lever" => Ok(Domain::Lever),
            other => Err(Error::Config(format!("unknown domain '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Asp,
    Osp,
    Pc,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Asp => "ASP",
            Method::Osp => "OSP",
            Method::Pc => "PC",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ASP" => Ok(Method::Asp),
            "OSP" => Ok(Method::Osp),
            "PC" => Ok(Method::Pc),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Everything a single training run needs. Defaults mirror the experiment
/// protocol; the desk preset shrinks budgets to workstation scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub domain: Domain,
    pub batches: usize,
    pub batch_size: usize,
    pub model_lr: f64,
    pub adversary_lr: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `batches` over which epsilon decays linearly.
    pub epsilon_decay_frac: f64,
    pub replay_capacity: usize,
    pub lambda0: f64,
    pub lambda1: f64,
    pub seed: u64,
    pub paired_count: usize,
    pub unpaired_count: usize,
    pub entropy_weight: f64,
    pub value_weight: f64,
    pub update_ratio: usize,
    pub retry_limit: usize,
    /// DQN target-network refresh period in batches.
    pub target_refresh: usize,
    pub latent_dim: usize,
    pub kl_weight: f64,
    /// VAE training-set size (synthetic fallback; IDX data overrides).
    pub dataset_size: usize,
    /// Unpaired rows per batch when the paired set is empty or tiny.
    pub min_unpaired_per_batch: usize,
    /// Adversary MLP hidden-layer widths.
    pub adversary_hidden: Vec<usize>,
    /// Curve-log period in batches.
    pub curve_every: usize,
    /// Particle-world spawn half-width.
    pub world_extent: f64,
}

impl TrainConfig {
    /// Full-protocol budgets.
    pub fn paper(domain: Domain, seed: u64) -> Self {
        let base = Self {
            domain,
            batches: 25_000,
            batch_size: 8,
            model_lr: 1e-3,
            adversary_lr: 1e-4,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_frac: 0.5,
            replay_capacity: 10_000,
            lambda0: 10.0,
            lambda1: 1.0,
            seed,
            paired_count: 0,
            unpaired_count: 4096,
            entropy_weight: 0.01,
            value_weight: 0.5,
            update_ratio: 1,
            retry_limit: 5,
            target_refresh: 100,
            latent_dim: 32,
            kl_weight: 1e-3,
            dataset_size: 8192,
            min_unpaired_per_batch: 8,
            adversary_hidden: vec![64, 64],
            curve_every: 100,
            world_extent: 5.0,
        };
        match domain {
            Domain::Particle => base,
            Domain::Vae => Self {
                batches: 5_000,
                batch_size: 128,
                unpaired_count: 2048,
                ..base
            },
            Domain::Lever => Self {
                batches: 10_000,
                batch_size: 32,
                unpaired_count: 4096,
                ..base
            },
        }
    }

    /// Workstation-scale budgets: roughly half the `paper` preset's, trimmed
    /// further where the quality gates are comfortably met. At these reduced
    /// budgets the default adversarial weight overwhelms the paired
    /// anchoring in the RL domains, so the desk preset dials `lambda1` down
    /// to a distribution tiebreaker there; the `paper` preset keeps the
    /// defaults.
    pub fn desk(domain: Domain, seed: u64) -> Self {
        let paper = Self::paper(domain, seed);
        match domain {
            Domain::Particle => Self {
                batches: 12_500,
                lambda1: 0.1,
                ..paper
            },
            // The VAE arm trades a slower adversary and larger unpaired
            // batches for stable latent alignment: a 32-d marginal cannot be
            // matched from 8-row batches, and a fast adversary saturates,
            // which kills the generator signal and collapses the encoder.
            Domain::Vae => Self {
                batches: 15_000,
                dataset_size: 4096,
                lambda1: 0.3,
                adversary_lr: 2e-5,
                min_unpaired_per_batch: 512,
                ..paper
            },
            Domain::Lever => Self {
                batches: 5_000,
                lambda1: 0.1,
                ..paper
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batches == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "batches and batch_size must be positive".into(),
            ));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if self.lambda0 < 0.0 || self.lambda1 < 0.0 {
            return Err(Error::Config("lambda weights must be nonnegative".into()));
        }
        if self.replay_capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        if self.update_ratio == 0 {
            return Err(Error::Config("update_ratio must be >= 1".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.adversary_hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config(
                "adversary_hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Linearly decayed epsilon at a given batch index.
    pub fn epsilon_at(&self, batch: usize) -> f64 {
        let decay_batches = (self.batches as f64 * self.epsilon_decay_frac).max(1.0);
        let t = (batch as f64 / decay_batches).min(1.0);
        if t >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + t * (self.epsilon_end - self.epsilon_start)
    }
}

/// Uniform-sampling experience replay.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            next: 0,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<T>> {
        if self.items.is_empty() {
            return Err(Error::Contract(
                "sampling from an empty replay buffer".into(),
            ));
        }
        Ok((0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect())
    }
}

/// The convention-holding networks for one domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Nets {
    Particle {
        speaker: Speaker,
        actor: Actor,
        target_pos: (f64, f64),
    },
    Vae {
        encoder: VaeEncoder,
        decoder: VaeDecoder,
    },
    Lever {
        net: CommNet,
    },
}

impl Nets {
    pub fn domain(&self) -> Domain {
        match self {
            Nets::Particle { .. } => Domain::Particle,
            Nets::Vae { .. } => Domain::Vae,
            Nets::Lever { .. } => Domain::Lever,
        }
    }
}

/// A gated base model: the social convention new agents must adopt.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModelBundle {
    pub domain: Domain,
    pub nets: Nets,
    /// Self-play quality that passed the domain gate.
    pub quality: f64,
    /// The seed the successful attempt actually used.
    pub seed: u64,
}

/// One training-curve record, logged every `curve_every` batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub l_sp: f64,
    pub l_p: f64,
    pub l_u: f64,
    pub adversary_acc: f64,
    pub eval_reward: f64,
}

/// Adversaries trained during an ASP run (two for the lever domain, one
/// otherwise), kept for held-out accuracy checks.
#[derive(Debug, Clone)]
pub struct TrainedAdversaries {
    pub nets: Vec<AdversaryNet>,
}

/// Output of `train_new`.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub nets: Nets,
    pub curve: Vec<CurvePoint>,
    pub warnings: Vec<String>,
    pub adversaries: Option<TrainedAdversaries>,
}

impl TrainOutcome {
    /// Serialize the curve as JSON lines.
    pub fn curve_jsonl(&self) -> String {
        let mut out = String::new();
        for point in &self.curve {
            out.push_str(&serde_json::to_string(point).expect("curve point serializes"));
            out.push('\n');
        }
        out
    }
}

/// Quality gates per domain.
pub fn quality_gate(domain: Domain) -> f64 {
    match domain {
        Domain::Particle => 300.0,
        Domain::Lever => 0.95,
        // Reconstruction MSE gate (lower is better).
        Domain::Vae => 0.01,
    }
}

fn gate_passed(domain: Domain, quality: f64) -> bool {
    match domain {
        Domain::Particle | Domain::Lever => quality >= quality_gate(domain),
        Domain::Vae => quality <= quality_gate(domain),
    }
}

/// Train one base model, retrying with fresh seeds up to the configured
/// limit and discarding attempts that miss the gate.
pub fn train_base(config: &TrainConfig) -> Result<BaseModelBundle> {
    config.validate()?;
    let mut best_score = match config.domain {
        Domain::Vae => f64::INFINITY,
        _ => f64::NEG_INFINITY,
    };
    for attempt in 0..config.retry_limit {
        let attempt_seed = crate::stream_seed(config.seed, &format!("base-attempt/{attempt}"));
        let (nets, quality) = match config.domain {
            Domain::Particle => particle::train_base_particle(config, attempt_seed)?,
            Domain::Vae => vae::train_base_vae(config, attempt_seed)?,
            Domain::Lever => lever::train_base_lever(config, attempt_seed)?,
        };
        if gate_passed(config.domain, quality) {
            return Ok(BaseModelBundle {
                domain: config.domain,
                nets,
                quality,
                seed: attempt_seed,
            });
        }
        best_score = match config.domain {
            Domain::Vae => best_score.min(quality),
            _ => best_score.max(quality),
        };
    }
    Err(Error::TrainingFailure {
        best_score,
        message: format!(
            "{} base missed its gate ({}) in {} attempts",
            config.domain.name(),
            quality_gate(config.domain),
            config.retry_limit
        ),
    })
}

/// Generate the paired set P and unpaired set U from a gated base model by
/// running base self-play and sampling timesteps uniformly.
pub fn generate_datasets(
    base: &BaseModelBundle,
    paired_count: usize,
    unpaired_count: usize,
    seed: u64,
) -> Result<(PairedDataset, UnpairedDataset)> {
    match &base.nets {
        Nets::Particle {
            speaker,
            actor,
            target_pos,
        } => particle::generate_datasets_particle(
            speaker,
            actor,
            *target_pos,
            paired_count,
            unpaired_count,
            seed,
        ),
        Nets::Vae { encoder, decoder } => {
            vae::generate_datasets_vae(encoder, decoder, paired_count, unpaired_count, seed)
        }
        Nets::Lever { net } => {
            lever::generate_datasets_lever(net, paired_count, unpaired_count, seed)
        }
    }
}

/// Train a new model against the base convention with the given method.
///
/// Method/dataset contract: PC uses only P; OSP adds self-play; ASP adds the
/// adversarial term and requires nonempty U.
pub fn train_new(
    method: Method,
    base: &BaseModelBundle,
    paired: &PairedDataset,
    unpaired: &UnpairedDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if method == Method::Asp && config.lambda1 > 0.0 && unpaired.is_empty() {
        return Err(Error::Contract(
            "ASP with a positive adversarial weight requires a nonempty unpaired dataset".into(),
        ));
    }
    match &base.nets {
        Nets::Particle { target_pos, .. } => {
            particle::train_new_particle(method, *target_pos, paired, unpaired, config)
        }
        Nets::Vae { .. } => vae::train_new_vae(method, paired, unpaired, config),
        Nets::Lever { .. } => lever::train_new_lever(method, paired, unpaired, config),
    }
}

/// Sample an index from a probability row.
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// How many unpaired rows accompany each batch: the full paired count, with
/// a floor so the zero-paired case still feeds the adversary.
pub(crate) fn unpaired_rows_per_batch(config: &TrainConfig, paired_len: usize) -> usize {
    paired_len.max(config.min_unpaired_per_batch)
}

/// Detect the small-U failure mode: the model fools the adversary while
/// self-play quality has collapsed below half the gate.
pub(crate) fn failure_mode_warning(
    domain: Domain,
    adversary_acc: f64,
    selfplay_quality: f64,
) -> Option<String> {
    let gate = quality_gate(domain);
    let collapsed = match domain {
        Domain::Particle | Domain::Lever => selfplay_quality < 0.5 * gate,
        Domain::Vae => selfplay_quality > 2.0 * gate,
    };
    if adversary_acc <= 0.6 && collapsed {
        Some(format!(
            "adversary fooled (accuracy {adversary_acc:.3}) while self-play quality \
             {selfplay_quality:.3} fell below half the gate {gate}"
        ))
    } else {
        None
    }
}
