//! Difficulty allocation and height bucketing of captured crops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Source, Subset};

/// SR-RAW captures with a longer LR focal length than this are `medium`.
pub const MEDIUM_FOCAL_THRESHOLD_MM: f64 = 50.0;

/// Assigns a test pair to its difficulty tier.
///
/// RealSR crops are `easy`; SR-RAW crops whose LR focal length exceeds 50 mm are
/// `medium`; all remaining SR-RAW crops are `hard`.
pub fn allocate_subset(source: Source, focal_lr_mm: f64) -> Result<Subset> {
    if !(focal_lr_mm.is_finite() && focal_lr_mm > 0.0) {
        return Err(Error::InvalidInput(format!(
            "focal length must be positive, got {focal_lr_mm}"
        )));
    }
    match source {
        Source::RealSr => Ok(Subset::Easy),
        Source::SrRaw if focal_lr_mm > MEDIUM_FOCAL_THRESHOLD_MM => Ok(Subset::Medium),
        Source::SrRaw => Ok(Subset::Hard),
        Source::Synthetic => Err(Error::InvalidInput(
            "only RealSR and SR-RAW captures are allocated to subsets".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightBucket {
    /// Shorter than 8 px.
    Discard,
    /// 8 to 15 px, resized to 16 px.
    LrGroup,
    /// 16 to 32 px, resized to 32 px.
    HrGroup,
    /// Taller than 32 px; not used for pairs.
    Oversize,
}

impl HeightBucket {
    /// Height the crop is resized to, if it is kept.
    pub fn target_height(self) -> Option<usize> {
        match self {
            HeightBucket::LrGroup => Some(16),
            HeightBucket::HrGroup => Some(32),
            HeightBucket::Discard | HeightBucket::Oversize => None,
        }
    }
}

/// Lower-inclusive buckets: `[1, 8)`, `[8, 16)`, `[16, 32]`, `(32, inf)`.
/// A zero height is treated like any other too-small crop.
pub fn bucket_by_height(height_px: usize) -> HeightBucket {
    match height_px {
        0..=7 => HeightBucket::Discard,
        8..=15 => HeightBucket::LrGroup,
        16..=32 => HeightBucket::HrGroup,
        _ => HeightBucket::Oversize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_subset(Source::RealSr, 50.0).unwrap(), Subset::Easy);
        assert_eq!(allocate_subset(Source::SrRaw, 100.0).unwrap(), Subset::Medium);
        assert_eq!(allocate_subset(Source::SrRaw, 35.0).unwrap(), Subset::Hard);
        assert_eq!(allocate_subset(Source::SrRaw, 50.0).unwrap(), Subset::Hard);
        assert!(allocate_subset(Source::Synthetic, 50.0).is_err());
        assert!(allocate_subset(Source::SrRaw, 0.0).is_err());
        assert!(allocate_subset(Source::SrRaw, f64::NAN).is_err());
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(bucket_by_height(7), HeightBucket::Discard);
        assert_eq!(bucket_by_height(8), HeightBucket::LrGroup);
        assert_eq!(bucket_by_height(15), HeightBucket::LrGroup);
        assert_eq!(bucket_by_height(16), HeightBucket::HrGroup);
        assert_eq!(bucket_by_height(20), HeightBucket::HrGroup);
        assert_eq!(bucket_by_height(32), HeightBucket::HrGroup);
        assert_eq!(bucket_by_height(33), HeightBucket::Oversize);
        assert_eq!(bucket_by_height(1700), HeightBucket::Oversize);
        assert_eq!(HeightBucket::LrGroup.target_height(), Some(16));
        assert_eq!(HeightBucket::Oversize.target_height(), None);
    }
}
