//! Lever-game self-play (epsilon-greedy DQN on a CommNet with single-step
//! terminal episodes), dataset generation over f-block outputs, and
//! ASP/OSP/PC new-model training with one adversary per f-block layer.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::{
    adversarial_step, paired_loss, paired_loss_grad, PairedDataset, UnpairedDataset,
};
use crate::envs::lever::{all_deals, lever_deal, lever_score};
use crate::error::{Error, Result};
use crate::models::{AdversaryNet, CommNet, CommNetGrads, LEVER_AGENTS, NUM_LEVERS, NUM_LEVER_IDS};
use crate::nn::{softmax_rows, AdamFlat};
use crate::stream_rng;

use super::{
    failure_mode_warning, unpaired_rows_per_batch, CurvePoint, Method, Nets, ReplayBuffer,
    TrainConfig, TrainOutcome, TrainedAdversaries,
};

pub const COMMNET_HIDDEN: usize = 32;

/// One single-step episode: a deal, the simultaneous pulls, and the shared
/// team score. Episodes are terminal, so there is no successor state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub ids: [usize; LEVER_AGENTS],
    pub pulls: [usize; LEVER_AGENTS],
    pub reward: f64,
}

fn commnet_param_len(net: &CommNet) -> usize {
    net.embed.w.len()
        + net.embed.b.len()
        + net.f1.w.len()
        + net.f1.b.len()
        + net.f2.w.len()
        + net.f2.b.len()
        + net.head.w.len()
        + net.head.b.len()
}

fn commnet_step(opt: &mut AdamFlat, net: &mut CommNet, grads: &CommNetGrads) {
    let pairs = grads.as_pairs();
    let grad_slices: Vec<&[f64]> = pairs
        .iter()
        .flat_map(|(w, b)| [w.as_slice().unwrap(), b.as_slice().unwrap()])
        .collect();
    let params = net.params_mut();
    let mut param_slices: Vec<&mut [f64]> = Vec::with_capacity(8);
    for linear in params.linears {
        let (w, b) = (&mut linear.w, &mut linear.b);
        param_slices.push(w.as_slice_mut().unwrap());
        param_slices.push(b.as_slice_mut().unwrap());
    }
    opt.step(&mut param_slices, &grad_slices);
}

/// Greedy pulls for one deal.
pub fn greedy_pulls(net: &CommNet, ids: [usize; LEVER_AGENTS]) -> Result<[usize; LEVER_AGENTS]> {
    let cache = net.forward_cached(&ids)?;
    let mut pulls = [0usize; LEVER_AGENTS];
    for k in 0..LEVER_AGENTS {
        pulls[k] = argmax_row(&cache.q, k);
    }
    Ok(pulls)
}

fn argmax_row(q: &Array2<f64>, row: usize) -> usize {
    let r = q.row(row);
    r.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0
}

/// Fraction of all 720 ordered deals played in perfect order under the
/// greedy policy.
pub fn order_accuracy(net: &CommNet) -> Result<f64> {
    let deals = all_deals();
    let mut perfect = 0usize;
    // One batched pass over every deal.
    let flat: Vec<usize> = deals.iter().flatten().copied().collect();
    let cache = net.forward_cached(&flat)?;
    for (d, ids) in deals.iter().enumerate() {
        let mut pulls = [0usize; LEVER_AGENTS];
        for k in 0..LEVER_AGENTS {
            pulls[k] = argmax_row(&cache.q, d * LEVER_AGENTS + k);
        }
        if lever_score(*ids, pulls)? == 1.0 {
            perfect += 1;
        }
    }
    Ok(perfect as f64 / deals.len() as f64)
}

pub struct DqnGrads {
    pub grads: CommNetGrads,
    pub loss: f64,
}

/// TD gradients over a transition batch. Episodes are terminal, so the
/// target is the immediate reward (the general bootstrap
/// `r + gamma * max_a Q_target(s', a)` collapses; `_target_net` and `gamma`
/// stay in the signature for the non-terminal form).
pub fn dqn_grads(
    net: &CommNet,
    _target_net: &CommNet,
    batch: &[Transition],
    _gamma: f64,
) -> Result<DqnGrads> {
    if batch.is_empty() {
        return Err(Error::Contract("DQN update over an empty batch".into()));
    }
    let flat: Vec<usize> = batch.iter().flat_map(|t| t.ids).collect();
    let cache = net.forward_cached(&flat)?;
    let rows = flat.len();
    let mut d_q = Array2::zeros((rows, NUM_LEVERS));
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        for k in 0..LEVER_AGENTS {
            let row = i * LEVER_AGENTS + k;
            let predicted = cache.q[(row, t.pulls[k])];
            let residual = predicted - t.reward;
            loss += residual * residual;
            d_q[(row, t.pulls[k])] = 2.0 * residual / rows as f64;
        }
    }
    loss /= rows as f64;
    if !loss.is_finite() {
        return Err(Error::NumericalHealth("non-finite DQN loss".into()));
    }
    Ok(DqnGrads {
        grads: net.backward(&cache, &d_q, None, None, None),
        loss,
    })
}

/// One DQN gradient step; returns the TD loss.
pub fn dqn_update(
    net: &mut CommNet,
    target_net: &CommNet,
    opt: &mut AdamFlat,
    batch: &[Transition],
    gamma: f64,
) -> Result<f64> {
    let out = dqn_grads(net, target_net, batch, gamma)?;
    commnet_step(opt, net, &out.grads);
    Ok(out.loss)
}

fn collect_transitions(
    net: &CommNet,
    count: usize,
    epsilon: f64,
    deal_rng: &mut ChaCha8Rng,
    explore_rng: &mut ChaCha8Rng,
) -> Result<Vec<Transition>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let ids = lever_deal(deal_rng).agent_ids;
        let greedy = greedy_pulls(net, ids)?;
        let mut pulls = [0usize; LEVER_AGENTS];
        for k in 0..LEVER_AGENTS {
            pulls[k] = if explore_rng.random::<f64>() < epsilon {
                explore_rng.random_range(0..NUM_LEVERS)
            } else {
                greedy[k]
            };
        }
        let reward = lever_score(ids, pulls)?;
        out.push(Transition { ids, pulls, reward });
    }
    Ok(out)
}

pub(super) fn train_base_lever(config: &TrainConfig, attempt_seed: u64) -> Result<(Nets, f64)> {
    let mut init_rng = stream_rng(attempt_seed, "lever/init");
    let mut deal_rng = stream_rng(attempt_seed, "lever/deal");
    let mut explore_rng = stream_rng(attempt_seed, "lever/explore");
    let mut replay_rng = stream_rng(attempt_seed, "lever/replay");

    let mut net = CommNet::new(COMMNET_HIDDEN, &mut init_rng);
    let mut target = net.clone();
    let mut opt = AdamFlat::new(commnet_param_len(&net), config.model_lr);
    let mut buffer: ReplayBuffer<Transition> = ReplayBuffer::new(config.replay_capacity);

    for batch_idx in 0..config.batches {
        let eps = config.epsilon_at(batch_idx);
        for t in collect_transitions(
            &net,
            config.batch_size,
            eps,
            &mut deal_rng,
            &mut explore_rng,
        )? {
            buffer.push(t);
        }
        let batch = buffer.sample(config.batch_size, &mut replay_rng)?;
        dqn_update(&mut net, &target, &mut opt, &batch, config.gamma)?;
        if (batch_idx + 1) % config.target_refresh == 0 {
            target = net.clone();
        }
    }
    let accuracy = order_accuracy(&net)?;
    Ok((Nets::Lever { net }, accuracy))
}

/// Width of one paired target segment per agent: every communicated layer
/// output (embedding h0 plus both f-block outputs) and the one-hot pull.
pub const PAIRED_AGENT_WIDTH: usize = 3 * COMMNET_HIDDEN + NUM_LEVERS;

/// P rows are per deal: input = three concatenated id one-hots, target =
/// three concatenated per-agent segments (h0, h1, h2, one-hot pull). U rows
/// are per agent: concat(h1, h2).
pub(super) fn generate_datasets_lever(
    net: &CommNet,
    paired_count: usize,
    unpaired_count: usize,
    seed: u64,
) -> Result<(PairedDataset, UnpairedDataset)> {
    let mut deal_rng = stream_rng(seed, "lever-data/deal");

    let mut p_inputs = Array2::zeros((paired_count, LEVER_AGENTS * NUM_LEVER_IDS));
    let mut p_targets = Array2::zeros((paired_count, LEVER_AGENTS * PAIRED_AGENT_WIDTH));
    for d in 0..paired_count {
        let ids = lever_deal(&mut deal_rng).agent_ids;
        let cache = net.forward_cached(&ids)?;
        for k in 0..LEVER_AGENTS {
            p_inputs[(d, k * NUM_LEVER_IDS + ids[k])] = 1.0;
            let base = k * PAIRED_AGENT_WIDTH;
            for j in 0..COMMNET_HIDDEN {
                p_targets[(d, base + j)] = cache.h0[(k, j)];
                p_targets[(d, base + COMMNET_HIDDEN + j)] = cache.h1[(k, j)];
                p_targets[(d, base + 2 * COMMNET_HIDDEN + j)] = cache.h2[(k, j)];
            }
            let pull = argmax_row(&cache.q, k);
            p_targets[(d, base + 3 * COMMNET_HIDDEN + pull)] = 1.0;
        }
    }

    let u_deals = unpaired_count.div_ceil(LEVER_AGENTS);
    let mut u_entries = Array2::zeros((unpaired_count, 2 * COMMNET_HIDDEN));
    let mut row = 0;
    'outer: for _ in 0..u_deals {
        let ids = lever_deal(&mut deal_rng).agent_ids;
        let cache = net.forward_cached(&ids)?;
        for k in 0..LEVER_AGENTS {
            if row == unpaired_count {
                break 'outer;
            }
            for j in 0..COMMNET_HIDDEN {
                u_entries[(row, j)] = cache.h1[(k, j)];
                u_entries[(row, COMMNET_HIDDEN + j)] = cache.h2[(k, j)];
            }
            row += 1;
        }
    }
    Ok((
        PairedDataset::new(p_inputs, p_targets, "lever")?,
        UnpairedDataset::new(u_entries, "lever"),
    ))
}

fn decode_paired_deals(paired: &PairedDataset) -> Result<Vec<[usize; LEVER_AGENTS]>> {
    let mut deals = Vec::with_capacity(paired.len());
    for row in paired.inputs.rows() {
        let mut ids = [0usize; LEVER_AGENTS];
        for k in 0..LEVER_AGENTS {
            let block = row.slice(s![k * NUM_LEVER_IDS..(k + 1) * NUM_LEVER_IDS]);
            ids[k] = block
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .ok_or_else(|| Error::Contract("empty paired input row".into()))?;
        }
        deals.push(ids);
    }
    Ok(deals)
}

/// Softmax-Jacobian transpose applied to a probability-space gradient.
fn softmax_backward(probs: &Array2<f64>, d_probs: &Array2<f64>) -> Array2<f64> {
    let mut d_logits = Array2::zeros(probs.raw_dim());
    for i in 0..probs.nrows() {
        let dot: f64 = (0..probs.ncols())
            .map(|j| d_probs[(i, j)] * probs[(i, j)])
            .sum();
        for j in 0..probs.ncols() {
            d_logits[(i, j)] = probs[(i, j)] * (d_probs[(i, j)] - dot);
        }
    }
    d_logits
}

pub(super) fn train_new_lever(
    method: Method,
    paired: &PairedDataset,
    unpaired: &UnpairedDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let seed = config.seed;
    let mut init_rng = stream_rng(seed, "lever-new/init");
    let mut deal_rng = stream_rng(seed, "lever-new/deal");
    let mut explore_rng = stream_rng(seed, "lever-new/explore");
    let mut replay_rng = stream_rng(seed, "lever-new/replay");

    let mut net = CommNet::new(COMMNET_HIDDEN, &mut init_rng);
    let mut target = net.clone();
    let mut opt = AdamFlat::new(commnet_param_len(&net), config.model_lr);
    let mut buffer: ReplayBuffer<Transition> = ReplayBuffer::new(config.replay_capacity);

    let use_paired = config.lambda0 > 0.0 && !paired.is_empty();
    let paired_deals = if use_paired {
        decode_paired_deals(paired)?
    } else {
        Vec::new()
    };
    // Agent-row targets: (3P x (h0 | h1 | h2 | pull one-hot)).
    let paired_agent_targets = if use_paired {
        let mut t = Array2::zeros((paired.len() * LEVER_AGENTS, PAIRED_AGENT_WIDTH));
        for d in 0..paired.len() {
            for k in 0..LEVER_AGENTS {
                let src = paired
                    .targets
                    .slice(s![d, k * PAIRED_AGENT_WIDTH..(k + 1) * PAIRED_AGENT_WIDTH]);
                t.row_mut(d * LEVER_AGENTS + k).assign(&src);
            }
        }
        t
    } else {
        Array2::zeros((0, 0))
    };

    let use_adversary = method == Method::Asp && config.lambda1 > 0.0 && !unpaired.is_empty();
    // One adversary per f-block layer.
    let mut adversary_state = if use_adversary {
        let mut adv_rng = stream_rng(seed, "lever-new/adv-init");
        let adv1 = AdversaryNet::new(COMMNET_HIDDEN, &config.adversary_hidden, &mut adv_rng);
        let adv2 = AdversaryNet::new(COMMNET_HIDDEN, &config.adversary_hidden, &mut adv_rng);
        let opt1 = crate::nn::Adam::new(&adv1.mlp, config.adversary_lr);
        let opt2 = crate::nn::Adam::new(&adv2.mlp, config.adversary_lr);
        let unpaired_rng = stream_rng(seed, "lever-new/unpaired");
        let fake_rng = stream_rng(seed, "lever-new/fake-deals");
        Some((adv1, opt1, adv2, opt2, unpaired_rng, fake_rng))
    } else {
        None
    };

    let mut curve = Vec::new();
    let mut last_adv_acc = f64::NAN;
    for batch_idx in 0..config.batches {
        let mut grads = CommNetGrads::zeros_like(&net);
        let mut touched = false;
        let mut l_sp = f64::NAN;
        let mut l_p = f64::NAN;
        let mut l_u = f64::NAN;
        let mut batch_deals: Vec<[usize; LEVER_AGENTS]> = Vec::new();

        if method != Method::Pc {
            let eps = config.epsilon_at(batch_idx);
            let fresh = collect_transitions(
                &net,
                config.batch_size,
                eps,
                &mut deal_rng,
                &mut explore_rng,
            )?;
            batch_deals = fresh.iter().map(|t| t.ids).collect();
            for t in fresh {
                buffer.push(t);
            }
            let batch = buffer.sample(config.batch_size, &mut replay_rng)?;
            let dqn = dqn_grads(&net, &target, &batch, config.gamma)?;
            grads.add_scaled(&dqn.grads, 1.0);
            l_sp = dqn.loss;
            touched = true;
        }

        if use_paired {
            let flat: Vec<usize> = paired_deals.iter().flatten().copied().collect();
            let cache = net.forward_cached(&flat)?;
            let probs = softmax_rows(&cache.q);
            let preds = concatenate![
                Axis(1),
                cache.h0.clone(),
                cache.h1.clone(),
                cache.h2.clone(),
                probs.clone()
            ];
            l_p = paired_loss(&preds, &paired_agent_targets)?;
            let d_preds = paired_loss_grad(&preds, &paired_agent_targets)?;
            let d_h0 = d_preds.slice(s![.., ..COMMNET_HIDDEN]).to_owned();
            let d_h1 = d_preds
                .slice(s![.., COMMNET_HIDDEN..2 * COMMNET_HIDDEN])
                .to_owned();
            let d_h2 = d_preds
                .slice(s![.., 2 * COMMNET_HIDDEN..3 * COMMNET_HIDDEN])
                .to_owned();
            let d_probs = d_preds.slice(s![.., 3 * COMMNET_HIDDEN..]).to_owned();
            let d_q = softmax_backward(&probs, &d_probs);
            let g = net.backward(&cache, &d_q, Some(&d_h0), Some(&d_h1), Some(&d_h2));
            grads.add_scaled(&g, config.lambda0);
            touched = true;
        }

        if let Some((adv1, opt1, adv2, opt2, unpaired_rng, fake_rng)) = adversary_state.as_mut() {
            let n = unpaired_rows_per_batch(config, paired.len());
            let n_deals = n.div_ceil(LEVER_AGENTS);
            let n_rows = n_deals * LEVER_AGENTS;
            let mut real = Array2::zeros((n_rows, 2 * COMMNET_HIDDEN));
            for i in 0..n_rows {
                let idx = unpaired_rng.random_range(0..unpaired.len());
                real.row_mut(i).assign(&unpaired.entries.row(idx));
            }
            let real1 = real.slice(s![.., ..COMMNET_HIDDEN]).to_owned();
            let real2 = real.slice(s![.., COMMNET_HIDDEN..]).to_owned();
            // Fake rows come from deals the new net actually plays.
            let mut fake_flat = Vec::with_capacity(n_rows);
            for _ in 0..n_deals {
                let ids = if batch_deals.is_empty() {
                    lever_deal(fake_rng).agent_ids
                } else {
                    batch_deals[fake_rng.random_range(0..batch_deals.len())]
                };
                fake_flat.extend(ids);
            }
            let cache = net.forward_cached(&fake_flat)?;
            let step1 = adversarial_step(adv1, opt1, &real1, &cache.h1, config.update_ratio)?;
            let step2 = adversarial_step(adv2, opt2, &real2, &cache.h2, config.update_ratio)?;
            l_u = 0.5 * (step1.generator_loss + step2.generator_loss);
            last_adv_acc = 0.5 * (step1.adversary_accuracy + step2.adversary_accuracy);
            let zero_q = Array2::zeros(cache.q.raw_dim());
            let g = net.backward(
                &cache,
                &zero_q,
                None,
                Some(&step1.model_output_grads),
                Some(&step2.model_output_grads),
            );
            grads.add_scaled(&g, config.lambda1);
            touched = true;
        }

        if touched {
            commnet_step(&mut opt, &mut net, &grads);
        }
        if method != Method::Pc && (batch_idx + 1) % config.target_refresh == 0 {
            target = net.clone();
        }

        if batch_idx % config.curve_every == 0 {
            let eval = order_accuracy(&net)?;
            curve.push(CurvePoint {
                step: batch_idx,
                l_sp,
                l_p,
                l_u,
                adversary_acc: last_adv_acc,
                eval_reward: eval,
            });
        }
    }

    let final_accuracy = order_accuracy(&net)?;
    let mut warnings = Vec::new();
    if use_adversary && method != Method::Pc {
        if let Some(w) = failure_mode_warning(super::Domain::Lever, last_adv_acc, final_accuracy) {
            warnings.push(w);
        }
    }
    let adversaries = adversary_state.map(|(adv1, _, adv2, _, _, _)| TrainedAdversaries {
        nets: vec![adv1, adv2],
    });
    Ok(TrainOutcome {
        nets: Nets::Lever { net },
        curve,
        warnings,
        adversaries,
    })
}
