use asp::training::{train_base, Domain, TrainConfig};
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
    let cfg = TrainConfig::desk(domain, seed);
    let t = Instant::now();
    match train_base(&cfg) {
        Ok(bundle) => println!("ok quality={} in {:?}", bundle.quality, t.elapsed()),
        Err(e) => println!("FAIL after {:?}: {e}", t.elapsed()),
    }
}
