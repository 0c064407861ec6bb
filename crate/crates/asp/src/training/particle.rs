//! Particle-world self-play (A2C over a speaker–actor pair plus a critic),
//! dataset generation, and ASP/OSP/PC new-model training.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{
    adversarial_step, paired_loss, paired_loss_grad, PairedDataset, UnpairedDataset,
};
use crate::envs::particle::{
    particle_reset, particle_reset_with_target, particle_step, ParticleAction, EPISODE_LEN,
};
use crate::error::{Error, Result};
use crate::models::{Actor, AdversaryNet, Speaker, COMM_DIM, NUM_PARTICLE_ACTIONS};
use crate::nn::{softmax_rows, Activation, Adam, Mlp, MlpGrads};
use crate::stream_rng;

use super::{
    failure_mode_warning, sample_categorical, unpaired_rows_per_batch, CurvePoint, Method, Nets,
    TrainConfig, TrainOutcome, TrainedAdversaries,
};

const SPEAKER_HIDDEN: [usize; 1] = [64];
const ACTOR_HIDDEN: [usize; 1] = [64];
const GATE_EVAL_EPISODES: usize = 100;
const CURVE_EVAL_EPISODES: usize = 16;

/// Speaker + actor + value critic, trained jointly.
pub struct ParticleNets {
    pub speaker: Speaker,
    pub actor: Actor,
    pub critic: Mlp,
}

impl ParticleNets {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            speaker: Speaker::new(&SPEAKER_HIDDEN, rng),
            actor: Actor::new(&ACTOR_HIDDEN, rng),
            critic: Mlp::new(&[2, 64, 1], &[Activation::Relu, Activation::Identity], rng),
        }
    }
}

/// One lockstep batch of complete episodes, laid out timestep-major:
/// row `t * episodes + b` is episode `b` at timestep `t`.
pub struct EpisodeBatch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    /// `rewards[b][t]`.
    pub rewards: Vec<Vec<f64>>,
    pub episodes: usize,
}

impl EpisodeBatch {
    pub fn mean_total_reward(&self) -> f64 {
        self.rewards
            .iter()
            .map(|r| r.iter().sum::<f64>())
            .sum::<f64>()
            / self.episodes as f64
    }
}

/// Run `episodes` complete episodes in lockstep. When `greedy` is false,
/// actions are sampled from the actor's softmax using `action_rng`.
pub fn collect_episodes(
    speaker: &Speaker,
    actor: &Actor,
    target: (f64, f64),
    extent: f64,
    episodes: usize,
    greedy: bool,
    reset_rng: &mut ChaCha8Rng,
    action_rng: &mut ChaCha8Rng,
) -> Result<EpisodeBatch> {
    let steps = EPISODE_LEN as usize;
    let mut envs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        envs.push(particle_reset_with_target(reset_rng, extent, target)?);
    }
    let mut states = Array2::zeros((steps * episodes, 2));
    let mut actions = Vec::with_capacity(steps * episodes);
    let mut rewards = vec![Vec::with_capacity(steps); episodes];
    for t in 0..steps {
        let mut step_states = Array2::zeros((episodes, 2));
        for (b, env) in envs.iter().enumerate() {
            step_states[(b, 0)] = env.actor_pos.0;
            step_states[(b, 1)] = env.actor_pos.1;
        }
        let comm = speaker.forward(&step_states)?;
        let probs = actor.forward_probs(&comm)?;
        for b in 0..episodes {
            let row = probs.row(b);
            let action_idx = if greedy {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            } else {
                sample_categorical(row.as_slice().unwrap(), action_rng)
            };
            let action = ParticleAction::from_index(action_idx)?;
            let (next, reward) = particle_step(&envs[b], action)?;
            envs[b] = next;
            states[(t * episodes + b, 0)] = step_states[(b, 0)];
            states[(t * episodes + b, 1)] = step_states[(b, 1)];
            actions.push(action_idx);
            rewards[b].push(reward);
        }
    }
    Ok(EpisodeBatch {
        states,
        actions,
        rewards,
        episodes,
    })
}

/// Mean undiscounted total episode reward over greedy episodes.
pub fn evaluate_pair(
    speaker: &Speaker,
    actor: &Actor,
    target: (f64, f64),
    extent: f64,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut unused = rng.clone();
    let batch = collect_episodes(
        speaker,
        actor,
        target,
        extent,
        episodes,
        true,
        rng,
        &mut unused,
    )?;
    Ok(batch.mean_total_reward())
}

pub struct A2cGrads {
    pub speaker: MlpGrads,
    pub actor: MlpGrads,
    pub critic: MlpGrads,
    pub policy_loss: f64,
    pub value_loss: f64,
}

/// Compute A2C gradients over a completed episode batch without applying
/// them. Advantage = discounted return − value estimate, normalized across
/// the batch; the policy gradient flows through the actor into the speaker.
pub fn a2c_grads(
    nets: &ParticleNets,
    batch: &EpisodeBatch,
    gamma: f64,
    entropy_weight: f64,
    value_weight: f64,
) -> Result<A2cGrads> {
    let steps = EPISODE_LEN as usize;
    let n_rows = batch.states.nrows();
    let episodes = batch.episodes;

    // Forward with caches (parameters are unchanged since collection, so
    // this reproduces the rollout's activations exactly).
    let speaker_cache = nets.speaker.mlp.forward_cached(&batch.states);
    let comm = speaker_cache.output().clone();
    let actor_cache = nets.actor.mlp.forward_cached(&comm);
    let probs = softmax_rows(actor_cache.output());
    let critic_cache = nets.critic.forward_cached(&batch.states);
    let values = critic_cache.output();

    // Discounted returns per row (timestep-major layout).
    let mut returns = Array1::zeros(n_rows);
    for b in 0..episodes {
        let mut g = 0.0;
        for t in (0..steps).rev() {
            g = batch.rewards[b][t] + gamma * g;
            returns[t * episodes + b] = g;
        }
    }
    let advantages: Array1<f64> = Array1::from_shape_fn(n_rows, |i| returns[i] - values[(i, 0)]);
    let mean = advantages.mean().unwrap();
    let std = (advantages.mapv(|a| (a - mean) * (a - mean)).mean().unwrap()).sqrt();
    let adv_norm = advantages.mapv(|a| (a - mean) / (std + 1e-8));

    // Policy loss and its logit gradient.
    let mut policy_loss = 0.0;
    let mut d_logits = Array2::zeros(probs.raw_dim());
    let nf = n_rows as f64;
    for i in 0..n_rows {
        let a = batch.actions[i];
        let row = probs.row(i);
        let entropy: f64 = -row
            .iter()
            .map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 })
            .sum::<f64>();
        policy_loss += -row[a].max(1e-12).ln() * adv_norm[i] - entropy_weight * entropy;
        for j in 0..NUM_PARTICLE_ACTIONS {
            let indicator = if j == a { 1.0 } else { 0.0 };
            let grad_logp = (row[j] - indicator) * adv_norm[i];
            let grad_entropy = entropy_weight * row[j] * (row[j].max(1e-12).ln() + entropy);
            d_logits[(i, j)] = (grad_logp + grad_entropy) / nf;
        }
    }
    policy_loss /= nf;
    if !policy_loss.is_finite() {
        return Err(Error::NumericalHealth("non-finite policy loss".into()));
    }

    let (actor_grads, d_comm) = nets.actor.mlp.backward(&actor_cache, &d_logits);
    let (speaker_grads, _) = nets.speaker.mlp.backward(&speaker_cache, &d_comm);

    // Value loss on the raw (unnormalized) residual.
    let residual = Array2::from_shape_fn((n_rows, 1), |(i, _)| values[(i, 0)] - returns[i]);
    let value_loss = value_weight * residual.mapv(|r| r * r).mean().unwrap();
    let d_values = residual.mapv(|r| value_weight * 2.0 * r / nf);
    let (critic_grads, _) = nets.critic.backward(&critic_cache, &d_values);
    if !value_loss.is_finite() {
        return Err(Error::NumericalHealth("non-finite value loss".into()));
    }

    Ok(A2cGrads {
        speaker: speaker_grads,
        actor: actor_grads,
        critic: critic_grads,
        policy_loss,
        value_loss,
    })
}

/// One A2C gradient step over a trajectory batch. Returns
/// (policy loss, value loss).
pub fn a2c_update(
    nets: &mut ParticleNets,
    speaker_opt: &mut Adam,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    batch: &EpisodeBatch,
    gamma: f64,
    entropy_weight: f64,
    value_weight: f64,
) -> Result<(f64, f64)> {
    let grads = a2c_grads(nets, batch, gamma, entropy_weight, value_weight)?;
    speaker_opt.step(&mut nets.speaker.mlp, &grads.speaker);
    actor_opt.step(&mut nets.actor.mlp, &grads.actor);
    critic_opt.step(&mut nets.critic, &grads.critic);
    Ok((grads.policy_loss, grads.value_loss))
}

/// Train one base speaker–actor pair by self-play; returns the nets and the
/// 100-episode greedy evaluation score.
pub(super) fn train_base_particle(config: &TrainConfig, attempt_seed: u64) -> Result<(Nets, f64)> {
    let mut init_rng = stream_rng(attempt_seed, "particle/init");
    let mut target_rng = stream_rng(attempt_seed, "particle/target");
    let mut reset_rng = stream_rng(attempt_seed, "particle/reset");
    let mut action_rng = stream_rng(attempt_seed, "particle/action");
    let mut eval_rng = stream_rng(attempt_seed, "particle/eval");

    let target = particle_reset(&mut target_rng, config.world_extent)?.target_pos;
    let mut nets = ParticleNets::new(&mut init_rng);
    let mut speaker_opt = Adam::new(&nets.speaker.mlp, config.model_lr);
    let mut actor_opt = Adam::new(&nets.actor.mlp, config.model_lr);
    let mut critic_opt = Adam::new(&nets.critic, config.model_lr);

    for _ in 0..config.batches {
        let batch = collect_episodes(
            &nets.speaker,
            &nets.actor,
            target,
            config.world_extent,
            config.batch_size,
            false,
            &mut reset_rng,
            &mut action_rng,
        )?;
        a2c_update(
            &mut nets,
            &mut speaker_opt,
            &mut actor_opt,
            &mut critic_opt,
            &batch,
            config.gamma,
            config.entropy_weight,
            config.value_weight,
        )?;
    }
    let score = evaluate_pair(
        &nets.speaker,
        &nets.actor,
        target,
        config.world_extent,
        GATE_EVAL_EPISODES,
        &mut eval_rng,
    )?;
    Ok((
        Nets::Particle {
            speaker: nets.speaker,
            actor: nets.actor,
            target_pos: target,
        },
        score,
    ))
}

/// P = (state, comm) pairs, U = comm vectors, both sampled uniformly from
/// the timesteps of base self-play episodes.
pub(super) fn generate_datasets_particle(
    speaker: &Speaker,
    actor: &Actor,
    target: (f64, f64),
    paired_count: usize,
    unpaired_count: usize,
    seed: u64,
) -> Result<(PairedDataset, UnpairedDataset)> {
    let mut reset_rng = stream_rng(seed, "particle-data/reset");
    let mut action_rng = stream_rng(seed, "particle-data/action");
    let mut sample_rng = stream_rng(seed, "particle-data/sample");

    let needed = paired_count + unpaired_count;
    let episodes = needed.div_ceil(EPISODE_LEN as usize) + 8;
    let batch = collect_episodes(
        speaker,
        actor,
        target,
        crate::envs::particle::DEFAULT_EXTENT,
        episodes,
        false,
        &mut reset_rng,
        &mut action_rng,
    )?;
    let pool = batch.states.nrows();
    if needed > pool {
        return Err(Error::InsufficientData(format!(
            "need {needed} samples but the episode pool holds {pool}"
        )));
    }
    let comm = speaker.forward(&batch.states)?;

    // Partial Fisher–Yates for a uniform sample without replacement.
    let mut indices: Vec<usize> = (0..pool).collect();
    for i in 0..needed {
        let j = i + rand::Rng::random_range(&mut sample_rng, 0..pool - i);
        indices.swap(i, j);
    }
    let mut p_inputs = Array2::zeros((paired_count, 2));
    let mut p_targets = Array2::zeros((paired_count, COMM_DIM));
    for (row, &idx) in indices[..paired_count].iter().enumerate() {
        p_inputs.row_mut(row).assign(&batch.states.row(idx));
        p_targets.row_mut(row).assign(&comm.row(idx));
    }
    let mut u_entries = Array2::zeros((unpaired_count, COMM_DIM));
    for (row, &idx) in indices[paired_count..needed].iter().enumerate() {
        u_entries.row_mut(row).assign(&comm.row(idx));
    }
    Ok((
        PairedDataset::new(p_inputs, p_targets, "particle")?,
        UnpairedDataset::new(u_entries, "particle"),
    ))
}

/// Train a new speaker–actor pair against the base convention.
pub(super) fn train_new_particle(
    method: Method,
    target: (f64, f64),
    paired: &PairedDataset,
    unpaired: &UnpairedDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let seed = config.seed;
    let mut init_rng = stream_rng(seed, "particle-new/init");
    let mut reset_rng = stream_rng(seed, "particle-new/reset");
    let mut action_rng = stream_rng(seed, "particle-new/action");
    let mut curve_rng = stream_rng(seed, "particle-new/curve-eval");

    let mut nets = ParticleNets::new(&mut init_rng);
    let mut speaker_opt = Adam::new(&nets.speaker.mlp, config.model_lr);
    let mut actor_opt = Adam::new(&nets.actor.mlp, config.model_lr);
    let mut critic_opt = Adam::new(&nets.critic, config.model_lr);

    let use_paired = config.lambda0 > 0.0 && !paired.is_empty();
    let use_adversary = method == Method::Asp && config.lambda1 > 0.0 && !unpaired.is_empty();
    let mut adversary_state = if use_adversary {
        let mut adv_rng = stream_rng(seed, "particle-new/adv-init");
        let adv = AdversaryNet::new(COMM_DIM, &config.adversary_hidden, &mut adv_rng);
        let opt = Adam::new(&adv.mlp, config.adversary_lr);
        let unpaired_rng = stream_rng(seed, "particle-new/unpaired");
        let fake_rng = stream_rng(seed, "particle-new/fake-rows");
        Some((adv, opt, unpaired_rng, fake_rng))
    } else {
        None
    };

    let mut curve = Vec::new();
    let mut last_adv_acc = f64::NAN;
    for batch_idx in 0..config.batches {
        let mut speaker_grads = MlpGrads::zeros_like(&nets.speaker.mlp);
        let mut actor_grads = MlpGrads::zeros_like(&nets.actor.mlp);
        let mut critic_grads = MlpGrads::zeros_like(&nets.critic);
        let mut touched_actor = false;
        let mut l_sp = f64::NAN;
        let mut l_p = f64::NAN;
        let mut l_u = f64::NAN;
        let mut batch_states: Option<Array2<f64>> = None;

        if method != Method::Pc {
            let batch = collect_episodes(
                &nets.speaker,
                &nets.actor,
                target,
                config.world_extent,
                config.batch_size,
                false,
                &mut reset_rng,
                &mut action_rng,
            )?;
            let grads = a2c_grads(
                &nets,
                &batch,
                config.gamma,
                config.entropy_weight,
                config.value_weight,
            )?;
            speaker_grads.add_scaled(&grads.speaker, 1.0);
            actor_grads.add_scaled(&grads.actor, 1.0);
            critic_grads.add_scaled(&grads.critic, 1.0);
            touched_actor = true;
            l_sp = grads.policy_loss + grads.value_loss;
            batch_states = Some(batch.states);
        }

        if use_paired {
            // The full paired set accompanies every batch.
            let cache = nets.speaker.mlp.forward_cached(&paired.inputs);
            let preds = cache.output();
            l_p = paired_loss(preds, &paired.targets)?;
            let d_preds = paired_loss_grad(preds, &paired.targets)?;
            let (grads, _) = nets.speaker.mlp.backward(&cache, &d_preds);
            speaker_grads.add_scaled(&grads, config.lambda0);
        }

        if let Some((adv, opt, unpaired_rng, fake_rng)) = adversary_state.as_mut() {
            let n = unpaired_rows_per_batch(config, paired.len());
            let mut real = Array2::zeros((n, COMM_DIM));
            for i in 0..n {
                let idx = rand::Rng::random_range(unpaired_rng, 0..unpaired.len());
                real.row_mut(i).assign(&unpaired.entries.row(idx));
            }
            // Fake rows: the new speaker's outputs on states it actually
            // visited this batch (or on paired inputs under PC-like cases).
            let source = batch_states.as_ref().unwrap_or(&paired.inputs);
            let mut fake_states = Array2::zeros((n, 2));
            for i in 0..n {
                let idx = rand::Rng::random_range(fake_rng, 0..source.nrows());
                fake_states.row_mut(i).assign(&source.row(idx));
            }
            let cache = nets.speaker.mlp.forward_cached(&fake_states);
            let step = adversarial_step(adv, opt, &real, cache.output(), config.update_ratio)?;
            l_u = step.generator_loss;
            last_adv_acc = step.adversary_accuracy;
            let (grads, _) = nets.speaker.mlp.backward(&cache, &step.model_output_grads);
            speaker_grads.add_scaled(&grads, config.lambda1);
        }

        if method != Method::Pc || use_paired {
            speaker_opt.step(&mut nets.speaker.mlp, &speaker_grads);
        }
        if touched_actor {
            actor_opt.step(&mut nets.actor.mlp, &actor_grads);
            critic_opt.step(&mut nets.critic, &critic_grads);
        }

        if batch_idx % config.curve_every == 0 {
            let eval_reward = evaluate_pair(
                &nets.speaker,
                &nets.actor,
                target,
                config.world_extent,
                CURVE_EVAL_EPISODES,
                &mut curve_rng,
            )?;
            curve.push(CurvePoint {
                step: batch_idx,
                l_sp,
                l_p,
                l_u,
                adversary_acc: last_adv_acc,
                eval_reward,
            });
        }
    }

    let final_eval = evaluate_pair(
        &nets.speaker,
        &nets.actor,
        target,
        config.world_extent,
        CURVE_EVAL_EPISODES,
        &mut curve_rng,
    )?;
    let mut warnings = Vec::new();
    if use_adversary && method != Method::Pc {
        if let Some(w) = failure_mode_warning(super::Domain::Particle, last_adv_acc, final_eval) {
            warnings.push(w);
        }
    }
    let adversaries = adversary_state.map(|(adv, _, _, _)| TrainedAdversaries { nets: vec![adv] });
    Ok(TrainOutcome {
        nets: Nets::Particle {
            speaker: nets.speaker,
            actor: nets.actor,
            target_pos: target,
        },
        curve,
        warnings,
        adversaries,
    })
}

/// Slice helper for tests: logits of a single state.
#[cfg(test)]
fn action_probs(nets: &ParticleNets, state: (f64, f64)) -> Vec<f64> {
    let s = ndarray::arr2(&[[state.0, state.1]]);
    let comm = nets.speaker.forward(&s).unwrap();
    nets.actor.forward_probs(&comm).unwrap().row(0).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Domain;

    fn tiny_batch(nets: &ParticleNets, rewarding_action: usize) -> EpisodeBatch {
        // One episode, constant state, fixed action, synthetic rewards.
        let steps = EPISODE_LEN as usize;
        let states = Array2::from_elem((steps, 2), 0.5);
        let actions = vec![rewarding_action; steps];
        let rewards = vec![vec![1.0; steps]];
        let _ = nets;
        EpisodeBatch {
            states,
            actions,
            rewards,
            episodes: 1,
        }
    }

    #[test]
    fn zero_advantage_gives_zero_policy_gradient() {
        let mut rng = stream_rng(41, "a2c");
        let mut nets = ParticleNets::new(&mut rng);
        // Make the critic output exactly the return for every state: with
        // gamma=0 the return is the immediate reward (1.0 everywhere), so a
        // constant-1 critic zeroes the advantage.
        let last = nets.critic.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(1.0);
        let batch = tiny_batch(&nets, 2);
        let grads = a2c_grads(&nets, &batch, 0.0, 0.0, 0.5).unwrap();
        for g in grads.actor.w.iter().flat_map(|w| w.iter()) {
            assert!(g.abs() < 1e-12, "actor grad {g}");
        }
        for g in grads.speaker.w.iter().flat_map(|w| w.iter()) {
            assert!(g.abs() < 1e-12, "speaker grad {g}");
        }
        // Value loss is exactly zero too.
        assert!(grads.value_loss.abs() < 1e-12);
    }

    #[test]
    fn rewarding_action_probability_increases() {
        let mut rng = stream_rng(42, "a2c-sign");
        let mut nets = ParticleNets::new(&mut rng);
        let mut s_opt = Adam::new(&nets.speaker.mlp, 1e-3);
        let mut a_opt = Adam::new(&nets.actor.mlp, 1e-3);
        let mut c_opt = Adam::new(&nets.critic, 1e-3);
        let before = action_probs(&nets, (0.5, 0.5))[3];
        // Action 3 always taken with high reward; critic starts near zero so
        // the advantage is positive.
        let batch = tiny_batch(&nets, 3);
        for _ in 0..20 {
            a2c_update(
                &mut nets, &mut s_opt, &mut a_opt, &mut c_opt, &batch, 0.9, 0.0, 0.5,
            )
            .unwrap();
        }
        let after = action_probs(&nets, (0.5, 0.5))[3];
        assert!(after > before, "p(a=3) went {before} -> {after}");
    }

    #[test]
    fn entropy_weight_zero_contributes_nothing() {
        let mut rng = stream_rng(43, "a2c-ent");
        let nets = ParticleNets::new(&mut rng);
        let batch = tiny_batch(&nets, 1);
        let g0 = a2c_grads(&nets, &batch, 0.9, 0.0, 0.5).unwrap();
        let g1 = a2c_grads(&nets, &batch, 0.9, 0.0, 0.5).unwrap();
        // Deterministic and identical without entropy.
        assert_eq!(g0.actor.w, g1.actor.w);
        // With entropy the gradients differ.
        let g2 = a2c_grads(&nets, &batch, 0.9, 0.1, 0.5).unwrap();
        let diff: f64 = g0
            .actor
            .w
            .iter()
            .zip(g2.actor.w.iter())
            .map(|(a, b)| (a - b).mapv(f64::abs).sum())
            .sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn dataset_generation_counts_and_determinism() {
        let mut rng = stream_rng(44, "data");
        let nets = ParticleNets::new(&mut rng);
        let (p, u) =
            generate_datasets_particle(&nets.speaker, &nets.actor, (1.0, 1.0), 4, 64, 7).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(u.len(), 64);
        assert_eq!(p.inputs.ncols(), 2);
        assert_eq!(p.targets.ncols(), COMM_DIM);
        assert_eq!(u.entries.ncols(), COMM_DIM);
        let (p2, u2) =
            generate_datasets_particle(&nets.speaker, &nets.actor, (1.0, 1.0), 4, 64, 7).unwrap();
        assert_eq!(p, p2);
        assert_eq!(u, u2);
        // Zero paired is fine.
        let (p0, u0) =
            generate_datasets_particle(&nets.speaker, &nets.actor, (1.0, 1.0), 0, 16, 7).unwrap();
        assert!(p0.is_empty());
        assert_eq!(u0.len(), 16);
    }

    #[test]
    fn pc_with_empty_p_leaves_model_at_initialization() {
        let cfg = TrainConfig {
            batches: 5,
            batch_size: 2,
            ..TrainConfig::desk(Domain::Particle, 77)
        };
        let paired = PairedDataset::new(
            Array2::zeros((0, 2)),
            Array2::zeros((0, COMM_DIM)),
            "particle",
        )
        .unwrap();
        let unpaired = UnpairedDataset::new(Array2::zeros((0, COMM_DIM)), "particle");
        let out = train_new_particle(Method::Pc, (1.0, 1.0), &paired, &unpaired, &cfg).unwrap();
        let mut init_rng = stream_rng(77, "particle-new/init");
        let fresh = ParticleNets::new(&mut init_rng);
        match out.nets {
            Nets::Particle { speaker, actor, .. } => {
                assert_eq!(speaker, fresh.speaker);
                assert_eq!(actor, fresh.actor);
            }
            _ => unreachable!(),
        }
    }
}
