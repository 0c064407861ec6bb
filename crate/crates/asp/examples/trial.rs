use asp::harness::{runner::run_trial, ExperimentConfig, Preset};
use asp::training::Domain;
use std::time::Instant;

fn main() {
    let domain = match std::env::args().nth(1).as_deref() {
        Some("vae") => Domain::Vae,
        Some("lever") => Domain::Lever,
        _ => Domain::Particle,
    };
    let seed: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let mut cfg = ExperimentConfig::preset(Preset::Desk, domain, seed);
    cfg.trials = 1;
    cfg.output_dir =
        std::path::PathBuf::from(format!("target/example-trial-{}-{}", domain.name(), seed));
    let t = Instant::now();
    match run_trial(&cfg, 0) {
        Ok(records) => {
            for r in &records {
                println!(
                    "{} p={} mixed={:.4} dirs={:?}",
                    r.method.name(),
                    r.paired_count,
                    r.mixed_score,
                    r.direction_scores
                );
            }
            println!("trial done in {:?}", t.elapsed());
        }
        Err(e) => println!("FAIL after {:?}: {e}", t.elapsed()),
    }
}
