use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Canonical LR size `(height, width)`.
pub const LR_SHAPE: (usize, usize) = (16, 64);
/// Canonical HR size `(height, width)`.
pub const HR_SHAPE: (usize, usize) = (32, 128);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Easy,
    Medium,
    Hard,
    Train,
}

impl Subset {
    pub const TEST: [Subset; 3] = [Subset::Easy, Subset::Medium, Subset::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Easy => "easy",
            Subset::Medium => "medium",
            Subset::Hard => "hard",
            Subset::Train => "train",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Subset::Easy),
            "medium" => Ok(Subset::Medium),
            "hard" => Ok(Subset::Hard),
            "train" => Ok(Subset::Train),
            other => Err(Error::InvalidInput(format!("unknown subset `{other}`"))),
        }
    }
}

/// Where a pair was captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "RealSR")]
    RealSr,
    #[serde(rename = "SR-RAW")]
    SrRaw,
    #[serde(rename = "synthetic")]
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Horizontal,
    VerticalPlus,
    VerticalMinus,
    TopDown,
    Curve,
    Ignored,
}

/// One normalized LR/HR pair with its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPairRecord {
    pub lr: ImageTensor,
    pub hr: ImageTensor,
    pub text: String,
    pub subset: Subset,
    pub source: Source,
    pub focal_lr_mm: f64,
    pub focal_hr_mm: f64,
    pub direction: Direction,
}

impl TextPairRecord {
    pub fn validate(&self) -> Result<()> {
        let (_, lh, lw) = self.lr.dims();
        let (_, hh, hw) = self.hr.dims();
        if hh != 2 * lh || hw != 2 * lw {
            return Err(Error::Shape(format!(
                "HR {hh}x{hw} is not twice LR {lh}x{lw}"
            )));
        }
        if !(self.focal_lr_mm > 0.0 && self.focal_hr_mm > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.focal_hr_mm < self.focal_lr_mm {
            return Err(Error::InvalidInput(format!(
                "HR focal length {} < LR focal length {}",
                self.focal_hr_mm, self.focal_lr_mm
            )));
        }
        Ok(())
    }
}
