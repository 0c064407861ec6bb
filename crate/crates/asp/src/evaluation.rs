//! Mixed-team evaluation, summary statistics, and the Friedman test.
//!
//! Each domain mixes a newly trained model with the base model in both
//! directions and reports the per-direction scores alongside their mean.
//! Quartiles use linear interpolation on the inclusive empirical CDF so the
//! reported medians are reproducible bit-for-bit. The Friedman p-value uses
//! the chi-square approximation with k-1 degrees of freedom.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::envs::lever::{lever_deal, lever_score};
use crate::error::{Error, Result};
use crate::models::{CommNet, VaeDecoder, VaeEncoder, LEVER_AGENTS};
use crate::stream_rng;
use crate::training::particle::evaluate_pair;
use crate::training::{Domain, Method, Nets};

/// Default episode count per mixed direction.
pub const DEFAULT_EPISODES_PER_DIRECTION: usize = 1000;

/// Identity of one experiment trial, carried into its records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub trial_id: u64,
    pub base_seed: u64,
    pub method: Method,
    pub paired_count: usize,
    pub unpaired_count: usize,
}

/// One evaluated (trial, method, paired-count) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub domain: Domain,
    pub base_seed: u64,
    pub method: Method,
    pub paired_count: usize,
    pub unpaired_count: usize,
    pub mixed_score: f64,
    /// Keyed by which roles were new.
    pub direction_scores: BTreeMap<String, f64>,
}

impl TrialRecord {
    fn from_directions(
        meta: &TrialMeta,
        domain: Domain,
        direction_scores: BTreeMap<String, f64>,
    ) -> Result<Self> {
        if direction_scores.is_empty() {
            return Err(Error::Contract(
                "trial record needs at least one direction".into(),
            ));
        }
        let mixed_score = direction_scores.values().sum::<f64>() / direction_scores.len() as f64;
        Ok(Self {
            trial_id: meta.trial_id,
            domain,
            base_seed: meta.base_seed,
            method: meta.method,
            paired_count: meta.paired_count,
            unpaired_count: meta.unpaired_count,
            mixed_score,
            direction_scores,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub count: usize,
}

fn expect_particle(
    nets: &Nets,
) -> Result<(&crate::models::Speaker, &crate::models::Actor, (f64, f64))> {
    match nets {
        Nets::Particle {
            speaker,
            actor,
            target_pos,
        } => Ok((speaker, actor, *target_pos)),
        other => Err(Error::Contract(format!(
            "expected particle nets, got {:?} domain",
            other.domain()
        ))),
    }
}

/// Mixed particle teams: (base speaker + new actor) and (new speaker + base
/// actor), greedy policies, mean episode reward per direction.
pub fn evaluate_particle_mixed(
    new: &Nets,
    base: &Nets,
    episodes_per_direction: usize,
    extent: f64,
    meta: &TrialMeta,
    eval_seed: u64,
) -> Result<TrialRecord> {
    let (new_speaker, new_actor, new_target) = expect_particle(new)?;
    let (base_speaker, base_actor, base_target) = expect_particle(base)?;
    if new_target != base_target {
        return Err(Error::Config(format!(
            "target mismatch between bundles: {new_target:?} vs {base_target:?}"
        )));
    }
    let mut rng_a = stream_rng(eval_seed, "eval/particle/new-actor");
    let mut rng_s = stream_rng(eval_seed, "eval/particle/new-speaker");
    let mut scores = BTreeMap::new();
    scores.insert(
        "new_actor".to_string(),
        evaluate_pair(
            base_speaker,
            new_actor,
            base_target,
            extent,
            episodes_per_direction,
            &mut rng_a,
        )?,
    );
    scores.insert(
        "new_speaker".to_string(),
        evaluate_pair(
            new_speaker,
            base_actor,
            base_target,
            extent,
            episodes_per_direction,
            &mut rng_s,
        )?,
    );
    TrialRecord::from_directions(meta, Domain::Particle, scores)
}

fn expect_vae(nets: &Nets) -> Result<(&VaeEncoder, &VaeDecoder)> {
    match nets {
        Nets::Vae { encoder, decoder } => Ok((encoder, decoder)),
        other => Err(Error::Contract(format!(
            "expected VAE nets, got {:?} domain",
            other.domain()
        ))),
    }
}

fn cross_mse(encoder: &VaeEncoder, decoder: &VaeDecoder, images: &Array2<f64>) -> Result<f64> {
    let (mean, _) = encoder.encode(images)?;
    let recon = decoder.decode(&mean)?;
    Ok((&recon - images).mapv(|d| d * d).mean().unwrap())
}

/// Mixed VAE wiring over a test set: base encoder -> new decoder and new
/// encoder -> base decoder, mean pixel MSE per direction (encoder mean, no
/// sampling noise).
pub fn evaluate_vae_mixed(
    new: &Nets,
    base: &Nets,
    test_images: &Array2<f64>,
    meta: &TrialMeta,
) -> Result<TrialRecord> {
    let (new_enc, new_dec) = expect_vae(new)?;
    let (base_enc, base_dec) = expect_vae(base)?;
    if new_enc.latent_dim != base_enc.latent_dim {
        return Err(Error::Contract(format!(
            "latent dim mismatch: {} vs {}",
            new_enc.latent_dim, base_enc.latent_dim
        )));
    }
    let mut scores = BTreeMap::new();
    scores.insert(
        "new_decoder".to_string(),
        cross_mse(base_enc, new_dec, test_images)?,
    );
    scores.insert(
        "new_encoder".to_string(),
        cross_mse(new_enc, base_dec, test_images)?,
    );
    TrialRecord::from_directions(meta, Domain::Vae, scores)
}

fn expect_lever(nets: &Nets) -> Result<&CommNet> {
    match nets {
        Nets::Lever { net } => Ok(net),
        other => Err(Error::Contract(format!(
            "expected lever nets, got {:?} domain",
            other.domain()
        ))),
    }
}

fn lever_team_reward(
    team: [&CommNet; LEVER_AGENTS],
    deals: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..deals {
        let ids = lever_deal(rng).agent_ids;
        let (q, _) = crate::models::commnet_forward_mixed(team, ids)?;
        let mut pulls = [0usize; LEVER_AGENTS];
        for k in 0..LEVER_AGENTS {
            pulls[k] = q
                .row(k)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
        }
        total += lever_score(ids, pulls)?;
    }
    Ok(total / deals as f64)
}

/// Mixed lever teams with one or two new agents among three; the new agents'
/// slots are drawn uniformly per deal. Scores are errors (one minus the mean
/// reward), keyed by the new-agent count.
pub fn evaluate_lever_mixed(
    new: &Nets,
    base: &Nets,
    deals: usize,
    meta: &TrialMeta,
    eval_seed: u64,
) -> Result<TrialRecord> {
    let new_net = expect_lever(new)?;
    let base_net = expect_lever(base)?;
    let mut per_composition = BTreeMap::new();
    let mut scores = BTreeMap::new();
    for new_count in 1..LEVER_AGENTS {
        let mut rng = stream_rng(eval_seed, &format!("eval/lever/new-{new_count}"));
        let mut total = 0.0;
        for _ in 0..deals {
            // Draw the new agents' slots, then play one random deal.
            let mut slots: Vec<usize> = (0..LEVER_AGENTS).collect();
            for i in 0..new_count {
                let j = rng.random_range(i..LEVER_AGENTS);
                slots.swap(i, j);
            }
            let mut team = [base_net; LEVER_AGENTS];
            for &s in &slots[..new_count] {
                team[s] = new_net;
            }
            total += lever_team_reward(team, 1, &mut rng)?;
        }
        let reward = total / deals as f64;
        per_composition.insert(new_count, reward);
        scores.insert(new_count.to_string(), 1.0 - reward);
    }
    // The compositions must satisfy the mixed-team mean identity.
    crate::core::mixed_team_reward_bar(&per_composition, LEVER_AGENTS)?;
    TrialRecord::from_directions(meta, Domain::Lever, scores)
}

/// Quantile by linear interpolation on the inclusive empirical CDF.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and quartiles of a nonempty sample.
pub fn summarize(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(Error::Contract("summarize over an empty sample".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample value {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SummaryStats {
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
        count: sorted.len(),
    })
}

/// Within-block ranks, ties averaged.
fn average_ranks(row: &[f64]) -> Vec<f64> {
    let k = row.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap());
    let mut ranks = vec![0.0; k];
    let mut i = 0;
    while i < k {
        let mut j = i;
        while j + 1 < k && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Friedman test over a blocks x treatments score matrix. Returns the
/// chi-square statistic and its approximate p-value (k-1 degrees of freedom).
pub fn friedman_test(scores: &Array2<f64>) -> Result<(f64, f64)> {
    let n = scores.nrows();
    let k = scores.ncols();
    if n < 2 || k < 2 {
        return Err(Error::Contract(format!(
            "Friedman test needs >= 2x2 scores, got {n}x{k}"
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite score in Friedman test".into(),
        ));
    }
    let mut rank_sums = vec![0.0; k];
    for row in scores.rows() {
        let ranks = average_ranks(&row.to_vec());
        for (s, r) in rank_sums.iter_mut().zip(&ranks) {
            *s += r;
        }
    }
    let (n_f, k_f) = (n as f64, k as f64);
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let statistic = (12.0 / (n_f * k_f * (k_f + 1.0)) * sum_sq - 3.0 * n_f * (k_f + 1.0)).max(0.0);
    let dist =
        ChiSquared::new(k_f - 1.0).map_err(|e| Error::Domain(format!("chi-square setup: {e}")))?;
    let p_value = (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0);
    Ok((statistic, p_value))
}
