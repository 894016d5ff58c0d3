//! Pixel loss, image gradient fields and the gradient profile loss.
//!
//! The gradient operator is a forward difference with the trailing column
//! (for `gx`) or row (for `gy`) set to zero, so a field has the same shape as
//! its image. The gradient profile loss is the mean absolute difference of two
//! fields, averaged over channels, pixels and both components:
//!
//! ```text
//! L_gp = (sum |gx_hr - gx_sr| + sum |gy_hr - gy_sr|) / (2 C H W)
//! ```
//!
//! Each quantity exists twice: on `f64` arrays, where values are checked
//! exactly and the gradient is written out by hand, and on candle tensors,
//! where autodiff drives training.

use candle_core::Tensor;
use ndarray::{Array3, Zip};
use serde::Serialize;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Per-channel forward differences of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    /// `gx[c, i, j] = img[c, i, j + 1] - img[c, i, j]`, zero in the last column.
    pub gx: Array3<f64>,
    /// `gy[c, i, j] = img[c, i + 1, j] - img[c, i, j]`, zero in the last row.
    pub gy: Array3<f64>,
}

pub fn gradient_field(img: &ImageTensor) -> GradientField {
    gradient_field_f64(&img.data().mapv(f64::from))
}

pub fn gradient_field_f64(img: &Array3<f64>) -> GradientField {
    let (c, h, w) = img.dim();
    let mut gx = Array3::zeros((c, h, w));
    let mut gy = Array3::zeros((c, h, w));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                if j + 1 < w {
                    gx[[ch, i, j]] = img[[ch, i, j + 1]] - img[[ch, i, j]];
                }
                if i + 1 < h {
                    gy[[ch, i, j]] = img[[ch, i + 1, j]] - img[[ch, i, j]];
                }
            }
        }
    }
    GradientField { gx, gy }
}

fn check_shapes(sr: &Array3<f64>, hr: &Array3<f64>) -> Result<()> {
    if sr.dim() != hr.dim() {
        return Err(Error::Shape(format!(
            "sr {:?} vs hr {:?}",
            sr.dim(),
            hr.dim()
        )));
    }
    Ok(())
}

pub fn gradient_profile_loss(sr: &ImageTensor, hr: &ImageTensor) -> Result<f64> {
    gradient_profile_loss_f64(&sr.data().mapv(f64::from), &hr.data().mapv(f64::from))
}

pub fn gradient_profile_loss_f64(sr: &Array3<f64>, hr: &Array3<f64>) -> Result<f64> {
    check_shapes(sr, hr)?;
    let gs = gradient_field_f64(sr);
    let gh = gradient_field_f64(hr);
    let sum_abs = |a: &Array3<f64>, b: &Array3<f64>| {
        Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y).abs())
    };
    let total = sum_abs(&gh.gx, &gs.gx) + sum_abs(&gh.gy, &gs.gy);
    Ok(total / (2 * sr.len()) as f64)
}

pub fn mse_f64(sr: &Array3<f64>, hr: &Array3<f64>) -> Result<f64> {
    check_shapes(sr, hr)?;
    let s = Zip::from(sr).and(hr).fold(0.0, |acc, x, y| acc + (x - y) * (x - y));
    Ok(s / sr.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParts {
    pub pixel: f64,
    pub gp: f64,
    pub total: f64,
}

/// `weight_pixel_loss * mse + weight_gp_loss * L_gp`.
pub fn total_loss(sr: &ImageTensor, hr: &ImageTensor, cfg: &TrainConfig) -> Result<LossParts> {
    total_loss_f64(&sr.data().mapv(f64::from), &hr.data().mapv(f64::from), cfg)
}

pub fn total_loss_f64(sr: &Array3<f64>, hr: &Array3<f64>, cfg: &TrainConfig) -> Result<LossParts> {
    let pixel = mse_f64(sr, hr)?;
    let gp = gradient_profile_loss_f64(sr, hr)?;
    Ok(LossParts {
        pixel,
        gp,
        total: cfg.weight_pixel_loss * pixel + cfg.weight_gp_loss * gp,
    })
}

/// Hand-derived gradient of [`total_loss_f64`] with respect to `sr`.
/// Where a gradient difference is exactly zero the subgradient 0 is used.
pub fn total_loss_grad_f64(sr: &Array3<f64>, hr: &Array3<f64>, cfg: &TrainConfig) -> Result<Array3<f64>> {
    check_shapes(sr, hr)?;
    let n = sr.len() as f64;
    let (c, h, w) = sr.dim();
    let mut grad = Zip::from(sr)
        .and(hr)
        .map_collect(|s, t| cfg.weight_pixel_loss * 2.0 * (s - t) / n);
    let gp_scale = cfg.weight_gp_loss / (2.0 * n);
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                if j + 1 < w {
                    // e = (hr[j+1] - hr[j]) - (sr[j+1] - sr[j])
                    let e = (hr[[ch, i, j + 1]] - hr[[ch, i, j]])
                        - (sr[[ch, i, j + 1]] - sr[[ch, i, j]]);
                    let s = gp_scale * sign(e);
                    grad[[ch, i, j + 1]] -= s;
                    grad[[ch, i, j]] += s;
                }
                if i + 1 < h {
                    let e = (hr[[ch, i + 1, j]] - hr[[ch, i, j]])
                        - (sr[[ch, i + 1, j]] - sr[[ch, i, j]]);
                    let s = gp_scale * sign(e);
                    grad[[ch, i + 1, j]] -= s;
                    grad[[ch, i, j]] += s;
                }
            }
        }
    }
    Ok(grad)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_tensor_shapes(sr: &Tensor, hr: &Tensor) -> Result<()> {
    if sr.dims() != hr.dims() {
        return Err(Error::Shape(format!(
            "sr {:?} vs hr {:?}",
            sr.dims(),
            hr.dims()
        )));
    }
    if sr.rank() < 2 {
        return Err(Error::Shape(format!("expected at least 2 dims, got {:?}", sr.dims())));
    }
    Ok(())
}

/// Forward differences along the last two axes of a tensor, zero-padded at the end.
pub fn gradient_field_tensor(img: &Tensor) -> Result<(Tensor, Tensor)> {
    let rank = img.rank();
    let (h_axis, w_axis) = (rank - 2, rank - 1);
    let diff = |axis: usize| -> Result<Tensor> {
        let n = img.dim(axis)?;
        if n < 2 {
            return Ok(img.zeros_like()?);
        }
        let d = (img.narrow(axis, 1, n - 1)? - img.narrow(axis, 0, n - 1)?)?;
        let pad = img.narrow(axis, 0, 1)?.zeros_like()?;
        Ok(Tensor::cat(&[&d, &pad], axis)?)
    };
    Ok((diff(w_axis)?, diff(h_axis)?))
}

/// Differentiable gradient profile loss over tensors of any matching shape
/// (typically `[B, 3, H, W]`).
pub fn gradient_profile_loss_tensor(sr: &Tensor, hr: &Tensor) -> Result<Tensor> {
    check_tensor_shapes(sr, hr)?;
    // The difference operator is linear, so diff the residual once.
    let residual = (hr - sr)?;
    let rank = residual.rank();
    let mut total = residual.zeros_like()?.sum_all()?;
    for axis in [rank - 1, rank - 2] {
        let n = residual.dim(axis)?;
        if n < 2 {
            continue;
        }
        let d = (residual.narrow(axis, 1, n - 1)? - residual.narrow(axis, 0, n - 1)?)?;
        total = (total + d.abs()?.sum_all()?)?;
    }
    Ok((total / (2 * residual.elem_count()) as f64)?)
}

pub fn mse_tensor(sr: &Tensor, hr: &Tensor) -> Result<Tensor> {
    check_tensor_shapes(sr, hr)?;
    Ok((sr - hr)?.sqr()?.mean_all()?)
}

/// Differentiable weighted loss plus its parts read back as `f64`.
pub fn total_loss_tensor(sr: &Tensor, hr: &Tensor, cfg: &TrainConfig) -> Result<(Tensor, LossParts)> {
    let pixel = mse_tensor(sr, hr)?;
    let gp = gradient_profile_loss_tensor(sr, hr)?;
    let total = ((&pixel * cfg.weight_pixel_loss)? + (&gp * cfg.weight_gp_loss)?)?;
    let read = |t: &Tensor| -> Result<f64> {
        Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
    };
    let parts = LossParts {
        pixel: read(&pixel)?,
        gp: read(&gp)?,
        total: read(&total)?,
    };
    Ok((total, parts))
}
