//! Dev probe for the zero-paired VAE latent-matching gate.
//! Usage: tune <lambda1> <update_ratio> <adv_lr> <batches> [seed]

use asp::adversary::{batch_moments, AdversaryScores, PairedDataset};
use asp::envs::mnist::synthetic_digits;
use asp::stream_rng;
use asp::training::{generate_datasets, train_base, train_new, Domain, Method, Nets, TrainConfig};
use ndarray::Array2;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda1: f64 = args[1].parse().unwrap();
    let update_ratio: usize = args[2].parse().unwrap();
    let adv_lr: f64 = args[3].parse().unwrap();
    let batches: usize = args[4].parse().unwrap();
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(64);
    let kl: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let minu: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(8);
    let hidden: Vec<usize> = args
        .get(8)
        .map(|s| s.split('-').map(|p| p.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![64, 64]);

    let mut cfg = TrainConfig::desk(Domain::Vae, 61);
    cfg.kl_weight = kl;
    let base = train_base(&cfg).unwrap();
    println!("base quality (mse) = {:.5}", base.quality);
    let (paired, unpaired) = generate_datasets(&base, 32, 2048, 601).unwrap();

    let empty = PairedDataset::new(
        Array2::zeros((0, paired.inputs.ncols())),
        Array2::zeros((0, paired.targets.ncols())),
        "vae",
    )
    .unwrap();
    let (u_mean, u_var) = batch_moments(&unpaired.entries);
    let um: Vec<f64> = u_mean.iter().map(|v| v.abs()).collect();
    let uv: Vec<f64> = u_var.to_vec();
    println!(
        "base latent: max|mean|={:.3} var range [{:.3},{:.3}]",
        um.iter().cloned().fold(0.0, f64::max),
        uv.iter().cloned().fold(f64::INFINITY, f64::min),
        uv.iter().cloned().fold(0.0, f64::max),
    );

    let mut cfg0 = TrainConfig::desk(Domain::Vae, seed);
    cfg0.kl_weight = kl;
    cfg0.min_unpaired_per_batch = minu;
    cfg0.paired_count = 0;
    cfg0.lambda1 = lambda1;
    cfg0.update_ratio = update_ratio;
    cfg0.adversary_lr = adv_lr;
    cfg0.batches = batches;
    cfg0.adversary_hidden = hidden.clone();
    let t = Instant::now();
    let outcome0 = train_new(Method::Asp, &base, &empty, &unpaired, &cfg0).unwrap();
    let adversary = &outcome0.adversaries.as_ref().unwrap().nets[0];

    let (
        Nets::Vae {
            encoder: base_enc, ..
        },
        Nets::Vae {
            encoder: new_enc, ..
        },
    ) = (&base.nets, &outcome0.nets)
    else {
        panic!("expected VAE nets");
    };
    let mut rng = stream_rng(65, "acceptance/vae-holdout");
    let held = synthetic_digits(512, &mut rng).images;
    let (real_latents, _) = base_enc.encode(&held).unwrap();
    let (fake_latents, _) = new_enc.encode(&held).unwrap();
    let real_scores = adversary.forward_scores(&real_latents).unwrap();
    let fake_scores = adversary.forward_scores(&fake_latents).unwrap();
    let scores = AdversaryScores::new(real_scores, fake_scores).unwrap();

    let (u_mean, u_var) = batch_moments(&unpaired.entries);
    let (n_mean, n_var) = batch_moments(&fake_latents);
    let mut max_dm = 0.0f64;
    let mut max_dv = 0.0f64;
    let mut bad = 0;
    for d in 0..u_mean.len() {
        max_dm = max_dm.max((u_mean[d] - n_mean[d]).abs());
        let dv = (u_var[d] - n_var[d]).abs();
        max_dv = max_dv.max(dv);
        if dv > 0.2 || (u_mean[d] - n_mean[d]).abs() > 0.2 {
            bad += 1;
        }
    }
    let fmt = |v: &ndarray::Array1<f64>| -> String {
        v.iter()
            .map(|x| format!("{x:.2}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    println!("u_var = [{}]", fmt(&u_var));
    println!("n_var = [{}]", fmt(&n_var));
    println!("bad dims (>0.2): {bad}/{}", u_mean.len());
    if let Some(last) = outcome0.curve.last() {
        println!("new model holdout mse = {:.4}", last.eval_reward);
    }
    println!(
        "vae0 l1={lambda1} ur={update_ratio} alr={adv_lr} nb={batches} seed={seed} hid={hidden:?} -> \
         acc={:.3} max|dmean|={max_dm:.3} max|dvar|={max_dv:.3} in {:?}",
        scores.accuracy(),
        t.elapsed()
    );
}
