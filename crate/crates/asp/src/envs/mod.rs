//! The three experimental domains: the particle speaker–listener world, the
//! three-agent lever game, and image ingestion for the VAE domain.

pub mod lever;
pub mod mnist;
pub mod particle;

pub use lever::{lever_deal, lever_score, LeverGameState};
pub use mnist::{load_idx_images, load_idx_labels, synthetic_digits, ImageDataset};
pub use particle::{particle_reset, particle_step, ParticleAction, ParticleWorldState};
