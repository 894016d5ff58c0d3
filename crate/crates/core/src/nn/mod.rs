//! Minimal layer toolkit on top of candle tensors.

pub mod layers;
pub mod lstm;
pub mod params;
pub mod unfold;

pub use layers::{pixel_shuffle, BatchNorm2d, Conv2d, Linear, PRelu};
pub use lstm::BiLstm;
pub use params::{Init, Param, ParamBuilder, ParamKind, ParamStore};
pub use unfold::unfold;
