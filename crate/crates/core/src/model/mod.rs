//! The super-resolution network and its checkpoint format.

pub mod align;
pub mod checkpoint;
pub mod srb;
pub mod tsrn;

pub use align::{bilinear_sample, target_control_points, CentralAlign, LocalizationNet, TpsGrid};
pub use checkpoint::{load_model, read_checkpoint, save_checkpoint, Checkpoint};
pub use srb::Srb;
pub use tsrn::Tsrn;
