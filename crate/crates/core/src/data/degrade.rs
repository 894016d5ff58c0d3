//! Resizing to the canonical pair shapes, synthetic degradation and
//! misalignment augmentation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::record::{HR_SHAPE, LR_SHAPE};

/// Fraction of each LR side kept by [`misalign_augment`].
pub const MISALIGN_CROP_FRACTION: f64 = 0.9;

/// Bicubic resize of a raw crop pair to 16x64 (LR) and 32x128 (HR).
pub fn normalize_pair(lr_raw: &ImageTensor, hr_raw: &ImageTensor) -> Result<(ImageTensor, ImageTensor)> {
    for (name, img) in [("lr", lr_raw), ("hr", hr_raw)] {
        if img.channels() != 3 {
            return Err(Error::Shape(format!(
                "{name} image must be RGB, got {} channels",
                img.channels()
            )));
        }
    }
    Ok((
        lr_raw.resize_bicubic(LR_SHAPE.0, LR_SHAPE.1)?,
        hr_raw.resize_bicubic(HR_SHAPE.0, HR_SHAPE.1)?,
    ))
}

/// Bicubic x0.5 downsample of a canonical HR image.
pub fn make_synthetic_lr(hr: &ImageTensor) -> Result<ImageTensor> {
    if (hr.height(), hr.width()) != HR_SHAPE {
        return Err(Error::Shape(format!(
            "synthetic LR expects a {}x{} HR image, got {}x{}",
            HR_SHAPE.0,
            HR_SHAPE.1,
            hr.height(),
            hr.width()
        )));
    }
    hr.resize_bicubic(LR_SHAPE.0, LR_SHAPE.1)
}

/// Bicubic x2 upsample, the baseline every SR output is compared against.
pub fn upscale_bicubic(lr: &ImageTensor) -> Result<ImageTensor> {
    lr.resize_bicubic(2 * lr.height(), 2 * lr.width())
}

/// Size `(h, w)` of the sliding crop window for an `height x width` image.
pub fn misalign_window(height: usize, width: usize) -> (usize, usize) {
    let side = |n: usize| ((n as f64 * MISALIGN_CROP_FRACTION).round() as usize).clamp(1, n);
    (side(height), side(width))
}

/// Crops the 90% x 90% window at a uniformly random offset and resizes it
/// back to the input shape. The HR side is never touched.
pub fn misalign_augment<R: Rng + ?Sized>(lr: &ImageTensor, rng: &mut R) -> Result<ImageTensor> {
    let (ch, cw) = misalign_window(lr.height(), lr.width());
    let y = rng.gen_range(0..=lr.height() - ch);
    let x = rng.gen_range(0..=lr.width() - cw);
    misalign_augment_at(lr, y, x)
}

/// [`misalign_augment`] with the window's top-left corner fixed at `(y, x)`.
pub fn misalign_augment_at(lr: &ImageTensor, y: usize, x: usize) -> Result<ImageTensor> {
    let (ch, cw) = misalign_window(lr.height(), lr.width());
    lr.crop(y, x, ch, cw)?.resize_bicubic(lr.height(), lr.width())
}
