//! Dev probe for lever method ordering.
//! Usage: tune2 <method> <paired> <batches> <lambda1> <seed>

use asp::evaluation::{evaluate_lever_mixed, TrialMeta};
use asp::harness::runner::{load_nets, save_nets};
use asp::models::TrainMeta;
use asp::training::{generate_datasets, train_base, train_new, Domain, Method, TrainConfig};
use std::path::PathBuf;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let method = match args[1].as_str() {
        "asp" => Method::Asp,
        "osp" => Method::Osp,
        _ => Method::Pc,
    };
    let paired: usize = args[2].parse().unwrap();
    let batches: usize = args[3].parse().unwrap();
    let lambda1: f64 = args[4].parse().unwrap();
    let seed: u64 = args[5].parse().unwrap();

    let cache = PathBuf::from(format!("/tmp/tune-base-lever-{seed}"));
    let mut cfg = TrainConfig::desk(Domain::Lever, seed);
    let base = if cache.join("ok").exists() {
        let nets = load_nets(&cache, "base", Domain::Lever).unwrap();
        asp::training::BaseModelBundle {
            domain: Domain::Lever,
            nets,
            quality: 1.0,
            seed,
        }
    } else {
        let b = train_base(&cfg).unwrap();
        std::fs::create_dir_all(&cache).unwrap();
        let meta = TrainMeta {
            seed,
            steps: 0,
            domain: "lever".into(),
        };
        save_nets(&cache, "base", &b.nets, &meta).unwrap();
        std::fs::write(cache.join("ok"), "ok").unwrap();
        b
    };

    let (p, unpaired) = generate_datasets(&base, paired, 2048, seed + 500).unwrap();

    cfg.seed = seed * 7919 + 13;
    cfg.batches = batches;
    cfg.lambda1 = lambda1;
    cfg.paired_count = paired;
    let t = Instant::now();
    let outcome = train_new(method, &base, &p, &unpaired, &cfg).unwrap();
    let meta = TrialMeta {
        trial_id: 0,
        base_seed: seed,
        method,
        paired_count: paired,
        unpaired_count: unpaired.len(),
    };
    let record = evaluate_lever_mixed(&outcome.nets, &base.nets, 1500, &meta, seed + 900).unwrap();
    println!(
        "lever {} p={paired} nb={batches} l1={lambda1} seed={seed} -> mixed={:.4} in {:?}",
        method.name(),
        record.mixed_score,
        t.elapsed()
    );
}
