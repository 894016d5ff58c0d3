//! Channel-first float images in `[0, 1]`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;
use image::{ImageBuffer, Luma};
use ndarray::{s, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights.
pub const GRAY_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// A `[C, H, W]` float image. `C` is 1 (gray or mask), 3 (RGB) or 4 (RGB + mask).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
}

impl ImageTensor {
    /// Wraps an array, rejecting unsupported channel counts, empty images and
    /// values that are non-finite or outside `[0, 1]`.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        check_dims(c, h, w)?;
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidInput(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self { data })
    }

    /// Like [`ImageTensor::new`] but clamps into `[0, 1]`. Non-finite values are still rejected.
    pub fn new_clamped(mut data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        check_dims(c, h, w)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite pixel value".into()));
        }
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(Self { data })
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let data = Array3::from_shape_vec((channels, height, width), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(Array3::from_elem((channels, height, width), value))
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// `(channels, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_array(self) -> Array3<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[[c, y, x]]
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), c)
    }

    /// The RGB part of an RGB or RGBM image.
    pub fn rgb(&self) -> Result<ImageTensor> {
        match self.channels() {
            3 => Ok(self.clone()),
            4 => Ok(Self {
                data: self.data.slice(s![0..3, .., ..]).to_owned(),
            }),
            c => Err(Error::Shape(format!("expected 3 or 4 channels, got {c}"))),
        }
    }

    /// Per-pixel luma `0.299 R + 0.587 G + 0.114 B`.
    pub fn to_grayscale(&self) -> Result<ImageTensor> {
        if self.channels() != 3 {
            return Err(Error::Shape(format!(
                "grayscale conversion needs 3 channels, got {}",
                self.channels()
            )));
        }
        let (_, h, w) = self.dims();
        let mut gray = Array3::<f32>::zeros((1, h, w));
        for y in 0..h {
            for x in 0..w {
                let v = GRAY_WEIGHTS[0] * self.data[[0, y, x]]
                    + GRAY_WEIGHTS[1] * self.data[[1, y, x]]
                    + GRAY_WEIGHTS[2] * self.data[[2, y, x]];
                gray[[0, y, x]] = v.clamp(0.0, 1.0);
            }
        }
        Ok(Self { data: gray })
    }

    /// Stacks the channels of `self` and `other` (same spatial size).
    pub fn concat_channels(&self, other: &ImageTensor) -> Result<ImageTensor> {
        if self.height() != other.height() || self.width() != other.width() {
            return Err(Error::Shape(format!(
                "cannot concat {:?} with {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let data = ndarray::concatenate(Axis(0), &[self.data.view(), other.data.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data)
    }

    /// Bicubic (Catmull-Rom) resize of every channel, antialiased when shrinking.
    pub fn resize_bicubic(&self, height: usize, width: usize) -> Result<ImageTensor> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "cannot resize to {height}x{width}"
            )));
        }
        let (c, h, w) = self.dims();
        let mut out = Array3::<f32>::zeros((c, height, width));
        for ch in 0..c {
            let plane: Vec<f32> = self.channel(ch).iter().copied().collect();
            let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
                ImageBuffer::from_raw(w as u32, h as u32, plane)
                    .expect("plane length matches dimensions");
            let resized =
                image::imageops::resize(&buf, width as u32, height as u32, FilterType::CatmullRom);
            for (dst, src) in out
                .index_axis_mut(Axis(0), ch)
                .iter_mut()
                .zip(resized.into_raw())
            {
                *dst = src;
            }
        }
        Self::new_clamped(out)
    }

    /// Copies the window `[y, y + h) x [x, x + w)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<ImageTensor> {
        if h == 0 || w == 0 || y + h > self.height() || x + w > self.width() {
            return Err(Error::InvalidInput(format!(
                "crop {h}x{w} at ({y}, {x}) outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        Ok(Self {
            data: self.data.slice(s![.., y..y + h, x..x + w]).to_owned(),
        })
    }

    /// Loads an 8-bit PNG (or any format `image` decodes) as RGB scaled by 1/255.
    /// Files carrying an alpha channel are rejected.
    pub fn load_rgb(path: impl AsRef<Path>) -> Result<ImageTensor> {
        let path = path.as_ref();
        let img = image::open(path)?;
        if img.color().has_alpha() {
            return Err(Error::InvalidInput(format!(
                "{}: expected an RGB image, found {:?}",
                path.display(),
                img.color()
            )));
        }
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn from_rgb8(img: &image::RgbImage) -> ImageTensor {
        let (w, h) = img.dimensions();
        let mut data = Array3::<f32>::zeros((3, h as usize, w as usize));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = px.0[c] as f32 / 255.0;
            }
        }
        Self { data }
    }

    /// Quantizes to 8 bits. Gray images become single-channel, RGBM drops the mask.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (c, h, w) = self.dims();
        let q = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        if c == 1 {
            let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
                Luma([q(self.data[[0, y as usize, x as usize]])])
            });
            img.save(path)?;
        } else {
            let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([
                    q(self.data[[0, y, x]]),
                    q(self.data[[1, y, x]]),
                    q(self.data[[2, y, x]]),
                ])
            });
            img.save(path)?;
        }
        Ok(())
    }

    /// `[C, H, W]` tensor on `device`.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let (c, h, w) = self.dims();
        let values: Vec<f32> = self.data.iter().copied().collect();
        Ok(Tensor::from_vec(values, (c, h, w), device)?.to_dtype(dtype)?)
    }

    /// Reads a `[C, H, W]` tensor, clamping into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<ImageTensor> {
        let (c, h, w) = t.dims3()?;
        let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let data = Array3::from_shape_vec((c, h, w), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new_clamped(data)
    }
}

/// Stacks same-shape images into a `[B, C, H, W]` tensor.
pub fn stack_batch(images: &[ImageTensor], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    let dims = first.dims();
    let mut values = Vec::with_capacity(images.len() * dims.0 * dims.1 * dims.2);
    for img in images {
        if img.dims() != dims {
            return Err(Error::Shape(format!(
                "batch mixes {:?} and {:?}",
                dims,
                img.dims()
            )));
        }
        values.extend(img.data.iter().copied());
    }
    Ok(Tensor::from_vec(values, (images.len(), dims.0, dims.1, dims.2), device)?.to_dtype(dtype)?)
}

/// Splits a `[B, C, H, W]` tensor into images.
pub fn unstack_batch(t: &Tensor) -> Result<Vec<ImageTensor>> {
    let (b, _, _, _) = t.dims4()?;
    (0..b).map(|i| ImageTensor::from_tensor(&t.get(i)?)).collect()
}

fn check_dims(c: usize, h: usize, w: usize) -> Result<()> {
    if !matches!(c, 1 | 3 | 4) {
        return Err(Error::Shape(format!(
            "unsupported channel count {c}, expected 1, 3 or 4"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidInput(format!("degenerate image {h}x{w}")));
    }
    Ok(())
}
