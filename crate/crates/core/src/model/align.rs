//! Central alignment: a localization network predicts thin-plate-spline
//! control points and the input is resampled through the resulting warp.

use candle_core::{DType, Device, Tensor, D};
use nalgebra::DMatrix;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Init, Linear, ParamBuilder};
use crate::record::LR_SHAPE;

/// Inset of the fiducial rows and columns from the image border, as a
/// fraction of the normalized `[-1, 1]` span.
pub const TPS_MARGIN: f64 = 0.05;

const LOC_WIDTHS: [usize; 6] = [32, 64, 128, 256, 256, 256];
const LOC_HIDDEN: usize = 512;

/// Regular fiducial layout: `k / 2` points evenly spaced along a top row and
/// the same along a bottom row. Returned as `(x, y)` pairs in `[-1, 1]`.
pub fn target_control_points(k: usize) -> Vec<[f64; 2]> {
    let per_row = k / 2;
    let lo = -1.0 + 2.0 * TPS_MARGIN;
    let hi = 1.0 - 2.0 * TPS_MARGIN;
    let xs: Vec<f64> = (0..per_row)
        .map(|i| {
            if per_row == 1 {
                0.0
            } else {
                lo + (hi - lo) * i as f64 / (per_row - 1) as f64
            }
        })
        .collect();
    let mut pts: Vec<[f64; 2]> = xs.iter().map(|&x| [x, lo]).collect();
    pts.extend(xs.iter().map(|&x| [x, hi]));
    pts
}

fn tps_kernel(d2: f64) -> f64 {
    if d2 == 0.0 {
        0.0
    } else {
        0.5 * d2 * d2.ln()
    }
}

/// Output sampling grid in normalized coordinates, row-major, corners at +-1.
pub fn output_grid(h: usize, w: usize) -> Vec<[f64; 2]> {
    let coord = |i: usize, n: usize| {
        if n == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        }
    };
    let mut grid = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            grid.push([coord(x, w), coord(y, h)]);
        }
    }
    grid
}

/// Precomputed TPS solve for a fixed control-point layout and output size.
///
/// For predicted source points `P` (`[K, 2]`), the source coordinate of output
/// pixel `p` is `mapping[p] . P`.
#[derive(Debug, Clone)]
pub struct TpsGrid {
    pub height: usize,
    pub width: usize,
    pub target: Vec<[f64; 2]>,
    /// `[H * W, K]`, row-major.
    pub mapping: Vec<f64>,
}

impl TpsGrid {
    pub fn new(k: usize, height: usize, width: usize) -> Result<Self> {
        if k < 4 || k % 2 != 0 {
            return Err(Error::ConfigInvalid {
                field: "tps_points",
                msg: format!("need an even count of at least 4, got {k}"),
            });
        }
        let target = target_control_points(k);
        let n = k + 3;
        let mut l = DMatrix::<f64>::zeros(n, n);
        for i in 0..k {
            for j in 0..k {
                let dx = target[i][0] - target[j][0];
                let dy = target[i][1] - target[j][1];
                l[(i, j)] = tps_kernel(dx * dx + dy * dy);
            }
            l[(i, k)] = 1.0;
            l[(i, k + 1)] = target[i][0];
            l[(i, k + 2)] = target[i][1];
            l[(k, i)] = 1.0;
            l[(k + 1, i)] = target[i][0];
            l[(k + 2, i)] = target[i][1];
        }
        let inv = l
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular TPS system".into()))?;

        let grid = output_grid(height, width);
        let mut mapping = Vec::with_capacity(grid.len() * k);
        let mut repr = vec![0.0; n];
        for p in &grid {
            for (j, t) in target.iter().enumerate() {
                let dx = p[0] - t[0];
                let dy = p[1] - t[1];
                repr[j] = tps_kernel(dx * dx + dy * dy);
            }
            repr[k] = 1.0;
            repr[k + 1] = p[0];
            repr[k + 2] = p[1];
            for c in 0..k {
                mapping.push((0..n).map(|r| repr[r] * inv[(r, c)]).sum());
            }
        }
        Ok(Self {
            height,
            width,
            target,
            mapping,
        })
    }

    pub fn num_points(&self) -> usize {
        self.target.len()
    }

    pub fn mapping_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let hw = self.height * self.width;
        Ok(Tensor::from_vec(self.mapping.clone(), (hw, self.num_points()), device)?.to_dtype(dtype)?)
    }

    /// `[B, K, 2]` control points -> `[B, H * W, 2]` source coordinates.
    pub fn source_coords(&self, mapping: &Tensor, points: &Tensor) -> Result<Tensor> {
        Ok(mapping.broadcast_matmul(points)?)
    }
}

/// Bilinear sampling of `x` (`[B, C, H, W]`) at normalized source coordinates
/// `coords` (`[B, H_out * W_out, 2]`, `(x, y)` order, corners at +-1).
/// Coordinates outside the image are clamped to the border.
pub fn bilinear_sample(x: &Tensor, coords: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (cb, n, two) = coords.dims3()?;
    if cb != b || two != 2 || n != out_h * out_w {
        return Err(Error::Shape(format!(
            "sampling coords {:?} do not fit batch {b} and output {out_h}x{out_w}",
            coords.dims()
        )));
    }
    let to_pixels = |t: Tensor, size: usize| -> Result<Tensor> {
        let max = (size - 1) as f64;
        Ok(((t + 1.0)? * (max / 2.0))?.clamp(0.0, max)?)
    };
    let px = to_pixels(coords.narrow(2, 0, 1)?.squeeze(2)?, w)?;
    let py = to_pixels(coords.narrow(2, 1, 1)?.squeeze(2)?, h)?;

    // Lower corner, detached; capped so the upper corner stays inside.
    let x0 = px.detach().floor()?.clamp(0.0, w.saturating_sub(2) as f64)?;
    let y0 = py.detach().floor()?.clamp(0.0, h.saturating_sub(2) as f64)?;
    let wx = (&px - &x0)?;
    let wy = (&py - &y0)?;
    let x1_step = if w > 1 { 1.0 } else { 0.0 };
    let y1_step = if h > 1 { 1.0 } else { 0.0 };

    let flat = x.reshape((b, c, h * w))?;
    let gather = |yy: &Tensor, xx: &Tensor| -> Result<Tensor> {
        let idx = ((yy * w as f64)? + xx)?
            .to_dtype(DType::U32)?
            .unsqueeze(1)?
            .broadcast_as((b, c, n))?
            .contiguous()?;
        Ok(flat.gather(&idx, 2)?)
    };
    let x1 = (&x0 + x1_step)?;
    let y1 = (&y0 + y1_step)?;
    let v00 = gather(&y0, &x0)?;
    let v01 = gather(&y0, &x1)?;
    let v10 = gather(&y1, &x0)?;
    let v11 = gather(&y1, &x1)?;

    let wx = wx.unsqueeze(1)?;
    let wy = wy.unsqueeze(1)?;
    let one_wx = wx.affine(-1.0, 1.0)?;
    let one_wy = wy.affine(-1.0, 1.0)?;
    let top = (v00.broadcast_mul(&one_wx)? + v01.broadcast_mul(&wx)?)?;
    let bottom = (v10.broadcast_mul(&one_wx)? + v11.broadcast_mul(&wx)?)?;
    let out = (top.broadcast_mul(&one_wy)? + bottom.broadcast_mul(&wy)?)?;
    Ok(out.reshape((b, c, out_h, out_w))?)
}

#[derive(Debug, Clone)]
struct LocBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
}

/// Conv stack plus two fully connected layers regressing `K` control points.
#[derive(Debug, Clone)]
pub struct LocalizationNet {
    blocks: Vec<LocBlock>,
    fc1: Linear,
    fc2: Linear,
    k: usize,
}

impl LocalizationNet {
    pub fn new(pb: &ParamBuilder, in_channels: usize, k: usize) -> Result<Self> {
        let mut blocks = Vec::with_capacity(LOC_WIDTHS.len());
        let mut prev = in_channels;
        for (i, &width) in LOC_WIDTHS.iter().enumerate() {
            let p = pb.pp(format!("conv{i}"));
            blocks.push(LocBlock {
                conv: Conv2d::same(&p.pp("conv"), prev, width, 3)?,
                bn: BatchNorm2d::new(&p.pp("bn"), width)?,
            });
            prev = width;
        }
        // The final spatial extent is 1x2 for a 16x64 input.
        let flat = prev * 2;
        let fc1 = Linear::new(&pb.pp("fc1"), flat, LOC_HIDDEN)?;
        let target: Vec<f64> = target_control_points(k).into_iter().flatten().collect();
        let fc2 = Linear::with_init(
            &pb.pp("fc2"),
            LOC_HIDDEN,
            2 * k,
            Init::Const(0.0),
            Init::Values(target),
        )?;
        Ok(Self {
            blocks,
            fc1,
            fc2,
            k,
        })
    }

    /// `[B, C, 16, 64] -> [B, K, 2]`.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let b = x.dim(0)?;
        let mut y = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            y = block.bn.forward(&block.conv.forward(&y)?, train)?.relu()?;
            y = match i {
                0..=3 => y.max_pool2d(2)?,
                4 => y.max_pool2d_with_stride((1, 2), (1, 2))?,
                _ => y,
            };
        }
        let y = self.fc1.forward(&y.flatten_from(1)?)?.relu()?;
        Ok(self.fc2.forward(&y)?.reshape((b, self.k, 2))?)
    }
}

/// Learned TPS rectification of the LR input.
#[derive(Debug, Clone)]
pub struct CentralAlign {
    loc: LocalizationNet,
    grid: TpsGrid,
    mapping: Tensor,
}

impl CentralAlign {
    pub fn new(pb: &ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        let (h, w) = LR_SHAPE;
        let grid = TpsGrid::new(cfg.tps_points, h, w)?;
        let mapping = grid.mapping_tensor(pb.dtype(), pb.device())?;
        Ok(Self {
            loc: LocalizationNet::new(&pb.pp("loc"), cfg.input_channels(), cfg.tps_points)?,
            grid,
            mapping,
        })
    }

    pub fn grid(&self) -> &TpsGrid {
        &self.grid
    }

    /// Predicted source control points `[B, K, 2]`.
    pub fn control_points(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let pts = self.loc.forward(x, train)?;
        let values = pts.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "localization network predicted non-finite control points".into(),
            ));
        }
        Ok(pts)
    }

    /// Warps `x` through the TPS defined by `points`.
    pub fn warp(&self, x: &Tensor, points: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let coords = self.grid.source_coords(&self.mapping, points)?;
        bilinear_sample(x, &coords, self.grid.height, self.grid.width)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let pts = self.control_points(x, train)?;
        self.warp(x, &pts)
    }

    /// Target layout as a `[1, K, 2]` tensor.
    pub fn identity_points(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let flat: Vec<f64> = self.grid.target.iter().flatten().copied().collect();
        Ok(Tensor::from_vec(flat, (1, self.grid.num_points(), 2), device)?.to_dtype(dtype)?)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if (h, w) != (self.grid.height, self.grid.width) {
            return Err(Error::Shape(format!(
                "alignment expects {}x{} input, got {h}x{w}",
                self.grid.height, self.grid.width
            )));
        }
        if !matches!(c, 3 | 4) {
            return Err(Error::Shape(format!("alignment expects 3 or 4 channels, got {c}")));
        }
        Ok(())
    }
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok((a - b)?
        .abs()?
        .flatten_all()?
        .max(D::Minus1)?
        .to_dtype(DType::F64)?
        .to_scalar::<f64>()?)
}
