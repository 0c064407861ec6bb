//! Speaker–listener particle world: an actor moves on an unbounded 2-d
//! plane toward a target that stays fixed for an entire trial.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Episode length in timesteps.
pub const EPISODE_LEN: u32 = 40;
/// Default half-width of the spawn region.
pub const DEFAULT_EXTENT: f64 = 5.0;
/// Distance at or under which the full reward of 10 is paid.
pub const REWARD_RADIUS: f64 = 1.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleWorldState {
    pub actor_pos: (f64, f64),
    pub target_pos: (f64, f64),
    pub timestep: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParticleAction {
    North,
    South,
    East,
    West,
    Stay,
}

impl ParticleAction {
    pub const ALL: [ParticleAction; 5] = [
        ParticleAction::North,
        ParticleAction::South,
        ParticleAction::East,
        ParticleAction::West,
        ParticleAction::Stay,
    ];

    pub fn from_index(idx: usize) -> Result<Self> {
        Self::ALL
            .get(idx)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("action index {idx} outside 0..5")))
    }

    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|a| a == self).unwrap()
    }

    fn delta(&self) -> (f64, f64) {
        match self {
            ParticleAction::North => (0.0, 1.0),
            ParticleAction::South => (0.0, -1.0),
            ParticleAction::East => (1.0, 0.0),
            ParticleAction::West => (-1.0, 0.0),
            ParticleAction::Stay => (0.0, 0.0),
        }
    }
}

fn uniform_pos(rng: &mut ChaCha8Rng, extent: f64) -> (f64, f64) {
    (
        rng.random_range(-extent..=extent),
        rng.random_range(-extent..=extent),
    )
}

/// Draw a fresh actor spawn while keeping the caller-provided target.
/// `particle_reset` draws both; trial code draws the target once with its
/// own stream and then respawns the actor each episode via this split.
pub fn particle_reset_with_target(
    rng: &mut ChaCha8Rng,
    extent: f64,
    target_pos: (f64, f64),
) -> Result<ParticleWorldState> {
    if !(extent > 0.0) {
        return Err(Error::InvalidInput(format!(
            "world extent {extent} must be > 0"
        )));
    }
    Ok(ParticleWorldState {
        actor_pos: uniform_pos(rng, extent),
        target_pos,
        timestep: 0,
    })
}

/// Draw actor and target uniformly from `[-extent, extent]^2`.
pub fn particle_reset(rng: &mut ChaCha8Rng, extent: f64) -> Result<ParticleWorldState> {
    if !(extent > 0.0) {
        return Err(Error::InvalidInput(format!(
            "world extent {extent} must be > 0"
        )));
    }
    let actor_pos = uniform_pos(rng, extent);
    let target_pos = uniform_pos(rng, extent);
    Ok(ParticleWorldState {
        actor_pos,
        target_pos,
        timestep: 0,
    })
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Reward for an actor position: 10 inside the radius, inverse distance
/// outside (the close branch shields the singularity at distance 0).
pub fn particle_reward(actor: (f64, f64), target: (f64, f64)) -> f64 {
    let d = distance(actor, target);
    if d <= REWARD_RADIUS {
        10.0
    } else {
        1.0 / d
    }
}

/// Advance one timestep. The target never moves.
pub fn particle_step(
    state: &ParticleWorldState,
    action: ParticleAction,
) -> Result<(ParticleWorldState, f64)> {
    if state.timestep >= EPISODE_LEN {
        return Err(Error::EpisodeComplete);
    }
    let (dx, dy) = action.delta();
    let next = ParticleWorldState {
        actor_pos: (state.actor_pos.0 + dx, state.actor_pos.1 + dy),
        target_pos: state.target_pos,
        timestep: state.timestep + 1,
    };
    let reward = particle_reward(next.actor_pos, next.target_pos);
    Ok((next, reward))
}
