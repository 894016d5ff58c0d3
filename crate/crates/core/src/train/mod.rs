//! Optimizer, training loop and ablation presets.

pub mod adam;
pub mod presets;
pub mod trainer;

pub use adam::Adam;
pub use presets::{ablation_presets, AblationPreset};
pub use trainer::{read_loss_log, train, LossRecord, TrainOutcome, Trainer, CHECKPOINT_FILE, LOSS_LOG_FILE};
