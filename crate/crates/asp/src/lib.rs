//! Adversarial self-play (ASP) for adopting social conventions.
//!
//! A social convention is an arbitrary but shared choice among equally good
//! joint policies: which side of the road to drive on, which communication
//! vector means "move north". This crate trains new agents to adopt the
//! convention of a pre-existing "base" team by combining three signals:
//!
//! - **self-play**: the new agents learn to solve the task with each other,
//! - **paired data** `P`: a handful of input→output exemplars of the base
//!   convention, used as a supervised loss,
//! - **unpaired data** `U`: base-convention outputs with no inputs, used
//!   through an adversary that the new model must fool.
//!
//! The combined objective is
//! `L = L_sp + lambda0 * L_p + lambda1 * L_u` (see [`adversary`]).
//!
//! The crate also quantifies *why* the adversarial term helps: with `S`
//! states and `A` actions, matching the convention's action marginal prunes
//! the policy space from `A^S` candidates down to a multinomial coefficient
//! (see [`policyspace`], which validates the closed form against exhaustive
//! enumeration).
//!
//! Three experimental domains are built in: a particle-world
//! speaker/listener pair, an MNIST-style variational autoencoder, and the
//! CommNet lever-pulling game. The [`harness`] module (and the `asp` CLI)
//! runs the full trial protocol: fresh base model per trial, paired-count
//! sweeps, mixed-team evaluation, medians/quartiles, and Friedman tests.
//!
//! ```
//! use asp::core::discounted_return;
//!
//! let g = discounted_return(&[1.0, 1.0], 0.5).unwrap();
//! assert_eq!(g, 1.5);
//! ```

pub mod adversary;
pub mod core;
pub mod docs;
pub mod envs;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod models;
pub mod nn;
pub mod policyspace;
pub mod training;

pub use error::{Error, Result};

/// Deterministic stream derivation: one master seed, many named RNG streams.
///
/// Distinct concerns (environment resets, parameter init, adversary
/// batching, ...) draw from independent streams so that enabling or
/// disabling one loss term cannot desynchronise the others.
pub fn stream_seed(master: u64, stream: &str) -> u64 {
    // FNV-1a over the stream name, mixed with the master seed via splitmix64.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stream.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// ChaCha RNG for a named stream under a master seed.
pub fn stream_rng(master: u64, stream: &str) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(stream_seed(master, stream))
}
