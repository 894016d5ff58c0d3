//! Scene-text super-resolution: data pipeline, network, losses, metrics,
//! recognition-accuracy harness and training loop.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod record;
pub mod train;

pub use config::{load_config, ModelConfig, TrainConfig};
pub use error::{Error, Result};
pub use image::ImageTensor;
pub use losses::{GradientField, LossParts};
pub use metrics::{MetricsReport, SubsetMetrics};
pub use model::{CentralAlign, Srb, Tsrn};
pub use record::{Direction, Source, Subset, TextPairRecord};

use rand::SeedableRng;

/// The crate-wide deterministic RNG.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}
