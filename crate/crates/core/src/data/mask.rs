use ndarray::Array3;

use crate::error::Result;
use crate::image::ImageTensor;

/// Binary text mask of an RGB image.
///
/// Pixels are split by whether their gray level exceeds the image mean. The
/// side with fewer pixels is taken to be text and set to 1. On an exact tie the
/// brighter side wins; a constant image yields an all-zero mask.
pub fn make_binary_mask(img: &ImageTensor) -> Result<ImageTensor> {
    let gray = img.to_grayscale()?;
    let (_, h, w) = gray.dims();
    let n = (h * w) as f64;
    let mean = gray.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let above = |v: f32| (v as f64) > mean;
    let n_above = gray.data().iter().filter(|&&v| above(v)).count();
    let n_below = h * w - n_above;
    let text_is_bright = n_above <= n_below;

    let mut mask = Array3::<f32>::zeros((1, h, w));
    if n_above > 0 {
        for (m, &v) in mask.iter_mut().zip(gray.data()) {
            if above(v) == text_is_bright {
                *m = 1.0;
            }
        }
    }
    ImageTensor::new(mask)
}

/// RGB image with its mask appended as a fourth channel.
pub fn with_mask(img: &ImageTensor) -> Result<ImageTensor> {
    img.concat_channels(&make_binary_mask(img)?)
}
