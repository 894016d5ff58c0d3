use candle_core::{Tensor, Var, D};

use crate::error::Result;
use crate::nn::params::{Init, ParamBuilder};
use crate::nn::unfold::unfold;

fn fan_in_uniform(fan_in: usize) -> Init {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Init::Uniform {
        lo: -bound,
        hi: bound,
    }
}

/// Square-kernel, stride-1 convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl Conv2d {
    /// Weights uniform in `+-1/sqrt(fan_in)`, bias zero.
    pub fn new(pb: &ParamBuilder, in_ch: usize, out_ch: usize, kernel: usize, padding: usize) -> Result<Self> {
        let weight = pb.get(
            (out_ch, in_ch, kernel, kernel),
            "weight",
            fan_in_uniform(in_ch * kernel * kernel),
        )?;
        let bias = pb.get(out_ch, "bias", Init::Const(0.0))?;
        Ok(Self {
            weight,
            bias,
            padding,
        })
    }

    /// Same-size convolution (`padding = kernel / 2`).
    pub fn same(pb: &ParamBuilder, in_ch: usize, out_ch: usize, kernel: usize) -> Result<Self> {
        Self::new(pb, in_ch, out_ch, kernel, kernel / 2)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (out_ch, in_ch, k, _) = self.weight.dims4()?;
        let (b, _, h, w) = x.dims4()?;
        let (oh, ow) = (h + 2 * self.padding + 1 - k, w + 2 * self.padding + 1 - k);
        let cols = if k == 1 && self.padding == 0 {
            x.reshape((b, in_ch, h * w))?
        } else {
            unfold(x, k, self.padding)?
        };
        let y = self
            .weight
            .reshape((1, out_ch, in_ch * k * k))?
            .broadcast_matmul(&cols)?
            .reshape((b, out_ch, oh, ow))?;
        Ok(y.broadcast_add(&self.bias.reshape((1, out_ch, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(pb: &ParamBuilder, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_init(pb, in_dim, out_dim, fan_in_uniform(in_dim), Init::Const(0.0))
    }

    pub fn with_init(pb: &ParamBuilder, in_dim: usize, out_dim: usize, weight: Init, bias: Init) -> Result<Self> {
        Ok(Self {
            weight: pb.get((out_dim, in_dim), "weight", weight)?,
            bias: pb.get(out_dim, "bias", bias)?,
        })
    }

    /// `[N, in] -> [N, out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Batch normalization over `[B, C, H, W]` with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.get(channels, "weight", Init::Const(1.0))?,
            bias: pb.get(channels, "bias", Init::Const(0.0))?,
            running_mean: pb.buffer(channels, "running_mean", Init::Const(0.0))?,
            running_var: pb.buffer(channels, "running_var", Init::Const(1.0))?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// In training mode the batch statistics normalize the input and are
    /// folded into the running averages (unbiased variance); otherwise the
    /// running averages are used.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (mean, var) = if train {
            let flat = x.transpose(0, 1)?.reshape((c, b * h * w))?;
            let mean = flat.mean(D::Minus1)?;
            let centered = flat.broadcast_sub(&mean.unsqueeze(1)?)?;
            let var = centered.sqr()?.mean(D::Minus1)?;
            let n = (b * h * w) as f64;
            let unbiased = if n > 1.0 {
                (var.detach() * (n / (n - 1.0)))?
            } else {
                var.detach()
            };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach() * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().clone(),
                self.running_var.as_tensor().clone(),
            )
        };
        let shape = (1, c, 1, 1);
        let scale = (self.weight.clone() / (var + self.eps)?.sqrt()?)?;
        let shift = (&self.bias - (&mean * &scale)?)?;
        Ok(x
            .broadcast_mul(&scale.reshape(shape)?)?
            .broadcast_add(&shift.reshape(shape)?)?)
    }
}

/// Parametric ReLU with one shared slope, initialized to 0.25.
#[derive(Debug, Clone)]
pub struct PRelu {
    alpha: Tensor,
}

impl PRelu {
    pub fn new(pb: &ParamBuilder) -> Result<Self> {
        Ok(Self {
            alpha: pb.get(1, "alpha", Init::Const(0.25))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let neg = x.neg()?.relu()?.broadcast_mul(&self.alpha)?;
        Ok((x.relu()? - neg)?)
    }
}

/// Rearranges `[B, C r^2, H, W]` into `[B, C, H r, W r]`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let out_c = c / (r * r);
    Ok(x
        .reshape((b, out_c, r, r, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((b, out_c, h * r, w * r))?)
}
