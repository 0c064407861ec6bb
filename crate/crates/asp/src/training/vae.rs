//! VAE self-play (ELBO with a pixel-MSE reconstruction term and a weighted
//! closed-form KL), dataset generation over encodings, and ASP/OSP/PC
//! new-model training.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::{
    adversarial_step, paired_loss, paired_loss_grad, PairedDataset, UnpairedDataset,
};
use crate::envs::mnist::synthetic_digits;
use crate::error::{Error, Result};
use crate::models::{AdversaryNet, VaeDecoder, VaeEncoder, IMAGE_DIM};
use crate::nn::{Adam, MlpGrads};
use crate::stream_rng;

use super::{
    failure_mode_warning, unpaired_rows_per_batch, CurvePoint, Method, Nets, TrainConfig,
    TrainOutcome, TrainedAdversaries,
};

const ENC_HIDDEN: [usize; 1] = [256];
const DEC_HIDDEN: [usize; 1] = [256];
const HOLDOUT: usize = 512;

pub struct VaeNets {
    pub encoder: VaeEncoder,
    pub decoder: VaeDecoder,
}

impl VaeNets {
    pub fn new(latent_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            encoder: VaeEncoder::new(latent_dim, &ENC_HIDDEN, rng),
            decoder: VaeDecoder::new(latent_dim, &DEC_HIDDEN, rng),
        }
    }
}

/// Standard normal draw via Box–Muller (keeps the dependency set small and
/// the stream layout explicit).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| standard_normal(rng))
}

/// Closed-form KL divergence of the diagonal Gaussian (mean, exp(log_var))
/// from the unit Gaussian, averaged over the batch:
/// `0.5 * mean_b sum_i (mu^2 + sigma^2 - 1 - ln sigma^2)`.
pub fn kl_divergence(mean: &Array2<f64>, log_var: &Array2<f64>) -> Result<f64> {
    if mean.raw_dim() != log_var.raw_dim() {
        return Err(Error::Contract("KL shape mismatch".into()));
    }
    let b = mean.nrows() as f64;
    let mut total = 0.0;
    for (m, lv) in mean.iter().zip(log_var.iter()) {
        total += m * m + lv.exp() - 1.0 - lv;
    }
    Ok(0.5 * total / b)
}

pub struct VaeGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub recon_loss: f64,
    pub kl_loss: f64,
}

/// ELBO gradients for one image batch without applying them.
pub fn vae_grads(
    nets: &VaeNets,
    images: &Array2<f64>,
    noise: &Array2<f64>,
    kl_weight: f64,
) -> Result<VaeGrads> {
    let latent = nets.encoder.latent_dim;
    let b = images.nrows();
    let enc_cache = nets.encoder.mlp.forward_cached(images);
    let raw = enc_cache.output();
    let mean = raw.slice(s![.., ..latent]).to_owned();
    let log_var = raw.slice(s![.., latent..]).to_owned();
    let sigma = log_var.mapv(|v| (0.5 * v).exp());
    let z = &mean + &(&sigma * noise);
    let dec_cache = nets.decoder.mlp.forward_cached(&z);
    let out = dec_cache.output();

    let recon_loss = (out - images).mapv(|d| d * d).mean().unwrap();
    let kl_loss = kl_divergence(&mean, &log_var)?;
    if !recon_loss.is_finite() || !kl_loss.is_finite() {
        return Err(Error::NumericalHealth("non-finite VAE loss".into()));
    }

    let d_out = (out - images).mapv(|d| 2.0 * d / (b * IMAGE_DIM) as f64);
    let (dec_grads, d_z) = nets.decoder.mlp.backward(&dec_cache, &d_out);

    let bf = b as f64;
    let d_mean = &d_z + &mean.mapv(|m| kl_weight * m / bf);
    let d_log_var = &(&d_z * noise) * &sigma.mapv(|s| 0.5 * s)
        + log_var.mapv(|lv| kl_weight * 0.5 * (lv.exp() - 1.0) / bf);
    let d_raw = concatenate![Axis(1), d_mean, d_log_var];
    let (enc_grads, _) = nets.encoder.mlp.backward(&enc_cache, &d_raw);
    Ok(VaeGrads {
        encoder: enc_grads,
        decoder: dec_grads,
        recon_loss,
        kl_loss,
    })
}

/// One gradient step on the ELBO. Returns (reconstruction loss, KL loss).
pub fn vae_update(
    nets: &mut VaeNets,
    enc_opt: &mut Adam,
    dec_opt: &mut Adam,
    images: &Array2<f64>,
    noise: &Array2<f64>,
    kl_weight: f64,
) -> Result<(f64, f64)> {
    let grads = vae_grads(nets, images, noise, kl_weight)?;
    enc_opt.step(&mut nets.encoder.mlp, &grads.encoder);
    dec_opt.step(&mut nets.decoder.mlp, &grads.decoder);
    Ok((grads.recon_loss, grads.kl_loss))
}

/// Reconstruction MSE through the encoder mean (no sampling noise).
pub fn reconstruction_mse(
    encoder: &VaeEncoder,
    decoder: &VaeDecoder,
    images: &Array2<f64>,
) -> Result<f64> {
    let (mean, _) = encoder.encode(images)?;
    let recon = decoder.decode(&mean)?;
    Ok((&recon - images).mapv(|d| d * d).mean().unwrap())
}

fn sample_rows(source: &Array2<f64>, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = Array2::zeros((n, source.ncols()));
    for i in 0..n {
        let idx = rng.random_range(0..source.nrows());
        out.row_mut(i).assign(&source.row(idx));
    }
    out
}

pub(super) fn train_base_vae(config: &TrainConfig, attempt_seed: u64) -> Result<(Nets, f64)> {
    let mut data_rng = stream_rng(attempt_seed, "vae/data");
    let mut init_rng = stream_rng(attempt_seed, "vae/init");
    let mut shuffle_rng = stream_rng(attempt_seed, "vae/shuffle");
    let mut noise_rng = stream_rng(attempt_seed, "vae/noise");

    let dataset = synthetic_digits(config.dataset_size + HOLDOUT, &mut data_rng);
    let train = dataset
        .images
        .slice(s![..config.dataset_size, ..])
        .to_owned();
    let holdout = dataset
        .images
        .slice(s![config.dataset_size.., ..])
        .to_owned();

    let mut nets = VaeNets::new(config.latent_dim, &mut init_rng);
    let mut enc_opt = Adam::new(&nets.encoder.mlp, config.model_lr);
    let mut dec_opt = Adam::new(&nets.decoder.mlp, config.model_lr);
    for _ in 0..config.batches {
        let images = sample_rows(&train, config.batch_size, &mut shuffle_rng);
        let noise = normal_matrix(config.batch_size, config.latent_dim, &mut noise_rng);
        vae_update(
            &mut nets,
            &mut enc_opt,
            &mut dec_opt,
            &images,
            &noise,
            config.kl_weight,
        )?;
    }
    let mse = reconstruction_mse(&nets.encoder, &nets.decoder, &holdout)?;
    Ok((
        Nets::Vae {
            encoder: nets.encoder,
            decoder: nets.decoder,
        },
        mse,
    ))
}

/// P rows: input = image, target = concat(encoding, reconstruction); the
/// first two legs supervise the encoder, the last two the decoder. U rows
/// are encodings only.
pub(super) fn generate_datasets_vae(
    encoder: &VaeEncoder,
    decoder: &VaeDecoder,
    paired_count: usize,
    unpaired_count: usize,
    seed: u64,
) -> Result<(PairedDataset, UnpairedDataset)> {
    let mut data_rng = stream_rng(seed, "vae-data/images");
    let dataset = synthetic_digits(paired_count + unpaired_count, &mut data_rng);
    let latent = encoder.latent_dim;

    let p_images = dataset.images.slice(s![..paired_count, ..]).to_owned();
    let (p_enc, _) = encoder.encode(&p_images)?;
    let p_recon = decoder.decode(&p_enc)?;
    let p_targets = concatenate![Axis(1), p_enc, p_recon];

    let u_images = dataset.images.slice(s![paired_count.., ..]).to_owned();
    let (u_enc, _) = encoder.encode(&u_images)?;
    debug_assert_eq!(u_enc.ncols(), latent);
    Ok((
        PairedDataset::new(p_images, p_targets, "vae")?,
        UnpairedDataset::new(u_enc, "vae"),
    ))
}

pub(super) fn train_new_vae(
    method: Method,
    paired: &PairedDataset,
    unpaired: &UnpairedDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let seed = config.seed;
    let latent = config.latent_dim;
    if !paired.is_empty() && paired.targets.ncols() != latent + IMAGE_DIM {
        return Err(Error::Contract(format!(
            "paired targets are {} wide, expected latent {latent} + image {IMAGE_DIM}",
            paired.targets.ncols()
        )));
    }
    let mut data_rng = stream_rng(seed, "vae-new/data");
    let mut init_rng = stream_rng(seed, "vae-new/init");
    let mut shuffle_rng = stream_rng(seed, "vae-new/shuffle");
    let mut noise_rng = stream_rng(seed, "vae-new/noise");

    let dataset = synthetic_digits(config.dataset_size + HOLDOUT, &mut data_rng);
    let train = dataset
        .images
        .slice(s![..config.dataset_size, ..])
        .to_owned();
    let holdout = dataset
        .images
        .slice(s![config.dataset_size.., ..])
        .to_owned();

    let mut nets = VaeNets::new(latent, &mut init_rng);
    let mut enc_opt = Adam::new(&nets.encoder.mlp, config.model_lr);
    let mut dec_opt = Adam::new(&nets.decoder.mlp, config.model_lr);

    let use_paired = config.lambda0 > 0.0 && !paired.is_empty();
    let (p_enc_targets, p_recon_targets) = if use_paired {
        (
            paired.targets.slice(s![.., ..latent]).to_owned(),
            paired.targets.slice(s![.., latent..]).to_owned(),
        )
    } else {
        (Array2::zeros((0, 0)), Array2::zeros((0, 0)))
    };

    let use_adversary = method == Method::Asp && config.lambda1 > 0.0 && !unpaired.is_empty();
    let mut adversary_state = if use_adversary {
        let mut adv_rng = stream_rng(seed, "vae-new/adv-init");
        let adv = AdversaryNet::new(latent, &config.adversary_hidden, &mut adv_rng);
        let opt = Adam::new(&adv.mlp, config.adversary_lr);
        let unpaired_rng = stream_rng(seed, "vae-new/unpaired");
        let fake_rng = stream_rng(seed, "vae-new/fake-rows");
        Some((adv, opt, unpaired_rng, fake_rng))
    } else {
        None
    };

    let mut curve = Vec::new();
    let mut last_adv_acc = f64::NAN;
    for batch_idx in 0..config.batches {
        let mut enc_grads = MlpGrads::zeros_like(&nets.encoder.mlp);
        let mut dec_grads = MlpGrads::zeros_like(&nets.decoder.mlp);
        let mut touched = false;
        let mut l_sp = f64::NAN;
        let mut l_p = f64::NAN;
        let mut l_u = f64::NAN;
        let mut batch_images: Option<Array2<f64>> = None;

        if method != Method::Pc {
            let images = sample_rows(&train, config.batch_size, &mut shuffle_rng);
            let noise = normal_matrix(config.batch_size, latent, &mut noise_rng);
            let grads = vae_grads(&nets, &images, &noise, config.kl_weight)?;
            enc_grads.add_scaled(&grads.encoder, 1.0);
            dec_grads.add_scaled(&grads.decoder, 1.0);
            l_sp = grads.recon_loss + config.kl_weight * grads.kl_loss;
            touched = true;
            batch_images = Some(images);
        }

        if use_paired {
            // Encoder leg: image -> encoding.
            let enc_cache = nets.encoder.mlp.forward_cached(&paired.inputs);
            let enc_mean = enc_cache.output().slice(s![.., ..latent]).to_owned();
            let l_enc = paired_loss(&enc_mean, &p_enc_targets)?;
            let d_mean = paired_loss_grad(&enc_mean, &p_enc_targets)?;
            let d_raw = concatenate![Axis(1), d_mean, Array2::zeros(d_mean.raw_dim())];
            let (g, _) = nets.encoder.mlp.backward(&enc_cache, &d_raw);
            enc_grads.add_scaled(&g, config.lambda0);

            // Decoder leg: encoding -> reconstruction.
            let dec_cache = nets.decoder.mlp.forward_cached(&p_enc_targets);
            let l_dec = paired_loss(dec_cache.output(), &p_recon_targets)?;
            let d_out = paired_loss_grad(dec_cache.output(), &p_recon_targets)?;
            let (g, _) = nets.decoder.mlp.backward(&dec_cache, &d_out);
            dec_grads.add_scaled(&g, config.lambda0);
            l_p = l_enc + l_dec;
            touched = true;
        }

        if let Some((adv, opt, unpaired_rng, fake_rng)) = adversary_state.as_mut() {
            let n = unpaired_rows_per_batch(config, paired.len());
            let real = sample_rows(&unpaired.entries, n, unpaired_rng);
            let source = batch_images.as_ref().unwrap_or(&train);
            let fake_images = sample_rows(source, n, fake_rng);
            let enc_cache = nets.encoder.mlp.forward_cached(&fake_images);
            let fake_mean = enc_cache.output().slice(s![.., ..latent]).to_owned();
            let step = adversarial_step(adv, opt, &real, &fake_mean, config.update_ratio)?;
            l_u = step.generator_loss;
            last_adv_acc = step.adversary_accuracy;
            let d_raw = concatenate![
                Axis(1),
                step.model_output_grads,
                Array2::zeros(step.model_output_grads.raw_dim())
            ];
            let (g, _) = nets.encoder.mlp.backward(&enc_cache, &d_raw);
            enc_grads.add_scaled(&g, config.lambda1);
            touched = true;
        }

        if touched {
            enc_opt.step(&mut nets.encoder.mlp, &enc_grads);
            dec_opt.step(&mut nets.decoder.mlp, &dec_grads);
        }

        if batch_idx % config.curve_every == 0 {
            let eval = reconstruction_mse(&nets.encoder, &nets.decoder, &holdout)?;
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

    let final_mse = reconstruction_mse(&nets.encoder, &nets.decoder, &holdout)?;
    let mut warnings = Vec::new();
    if use_adversary && method != Method::Pc {
        if let Some(w) = failure_mode_warning(super::Domain::Vae, last_adv_acc, final_mse) {
            warnings.push(w);
        }
    }
    let adversaries = adversary_state.map(|(adv, _, _, _)| TrainedAdversaries { nets: vec![adv] });
    Ok(TrainOutcome {
        nets: Nets::Vae {
            encoder: nets.encoder,
            decoder: nets.decoder,
        },
        curve,
        warnings,
        adversaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr2;

    #[test]
    fn kl_examples() {
        let mean = Array2::zeros((1, 4));
        let log_var = Array2::zeros((1, 4));
        assert_eq!(kl_divergence(&mean, &log_var).unwrap(), 0.0);

        let mean = arr2(&[[1.0, 0.0, 0.0]]);
        let log_var = Array2::zeros((1, 3));
        assert_relative_eq!(kl_divergence(&mean, &log_var).unwrap(), 0.5);

        // Batch averaging.
        let mean = arr2(&[[1.0, 0.0], [0.0, 0.0]]);
        let log_var = Array2::zeros((2, 2));
        assert_relative_eq!(kl_divergence(&mean, &log_var).unwrap(), 0.25);
        assert!(kl_divergence(&mean, &Array2::zeros((1, 2))).is_err());
    }

    #[test]
    fn perfect_reconstruction_gives_zero_loss() {
        // A decoder that reproduces its input cannot exist here, but a zero
        // image with a zero decoder output does: check the loss surface
        // directly via vae_grads on an all-equal batch.
        let mut rng = stream_rng(51, "vae-test");
        let nets = VaeNets::new(4, &mut rng);
        let images = Array2::zeros((2, IMAGE_DIM));
        let noise = Array2::zeros((2, 4));
        let grads = vae_grads(&nets, &images, &noise, 0.0).unwrap();
        // The decoder output is not zero, so recon > 0; but recon loss of an
        // output against itself is zero via the paired_loss identity:
        let (mean, _) = nets.encoder.encode(&images).unwrap();
        let recon = nets.decoder.decode(&mean).unwrap();
        assert_eq!(paired_loss(&recon, &recon).unwrap(), 0.0);
        assert!(grads.recon_loss > 0.0);
    }

    #[test]
    fn vae_gradients_match_finite_differences() {
        let mut rng = stream_rng(52, "vae-fd");
        let mut nets = VaeNets::new(3, &mut rng);
        let mut img_rng = stream_rng(52, "vae-fd-img");
        let images = Array2::from_shape_fn((4, IMAGE_DIM), |_| img_rng.random_range(0.0..1.0));
        let noise = normal_matrix(4, 3, &mut img_rng);
        let kl_w = 0.5;
        let grads = vae_grads(&nets, &images, &noise, kl_w).unwrap();
        let loss = |n: &VaeNets| -> f64 {
            let g = vae_grads(n, &images, &noise, kl_w).unwrap();
            g.recon_loss + kl_w * g.kl_loss
        };
        let h = 1e-5;
        for (layer, idx) in [(0usize, (5usize, 100usize)), (1, (2, 50))] {
            let orig = nets.encoder.mlp.layers[layer].w[idx];
            nets.encoder.mlp.layers[layer].w[idx] = orig + h;
            let up = loss(&nets);
            nets.encoder.mlp.layers[layer].w[idx] = orig - h;
            let down = loss(&nets);
            nets.encoder.mlp.layers[layer].w[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.encoder.w[layer][idx];
            assert!(
                (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-8),
                "encoder layer {layer}: fd {fd} vs {an}"
            );
        }
        let orig = nets.decoder.mlp.layers[0].w[(10, 1)];
        nets.decoder.mlp.layers[0].w[(10, 1)] = orig + h;
        let up = loss(&nets);
        nets.decoder.mlp.layers[0].w[(10, 1)] = orig - h;
        let down = loss(&nets);
        nets.decoder.mlp.layers[0].w[(10, 1)] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grads.decoder.w[0][(10, 1)];
        assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-8));
    }

    #[test]
    fn dataset_generation_shapes() {
        let mut rng = stream_rng(53, "vae-data");
        let nets = VaeNets::new(8, &mut rng);
        let (p, u) = generate_datasets_vae(&nets.encoder, &nets.decoder, 4, 32, 3).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.inputs.ncols(), IMAGE_DIM);
        assert_eq!(p.targets.ncols(), 8 + IMAGE_DIM);
        assert_eq!(u.len(), 32);
        assert_eq!(u.entries.ncols(), 8);
        let (p2, u2) = generate_datasets_vae(&nets.encoder, &nets.decoder, 4, 32, 3).unwrap();
        assert_eq!(p, p2);
        assert_eq!(u, u2);
    }
}
