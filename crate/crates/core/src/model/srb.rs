use candle_core::Tensor;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, BiLstm, Conv2d, PRelu, ParamBuilder};

/// Sequential residual block.
///
/// `conv3x3 -> BN -> PReLU -> conv3x3 -> BN -> conv1x1`, then a bidirectional
/// LSTM across each row (sequence length `W`, one step per column, the `C`
/// channels as step features), then another across each column, and finally
/// the residual addition of the block input. Each LSTM direction has
/// `hidden_units` cells, so the concatenated output has `2 * hidden_units = C`
/// channels.
#[derive(Debug, Clone)]
pub struct Srb {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    act: PRelu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    proj: Conv2d,
    horizontal: BiLstm,
    vertical: BiLstm,
    channels: usize,
}

impl Srb {
    pub fn new(pb: &ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.feature_channels;
        if c != 2 * cfg.hidden_units {
            return Err(Error::ConfigInvalid {
                field: "feature_channels",
                msg: format!(
                    "SRB needs feature_channels = 2 x hidden_units, got {c} and {}",
                    cfg.hidden_units
                ),
            });
        }
        Ok(Self {
            conv1: Conv2d::same(&pb.pp("conv1"), c, c, 3)?,
            bn1: BatchNorm2d::new(&pb.pp("bn1"), c)?,
            act: PRelu::new(&pb.pp("prelu"))?,
            conv2: Conv2d::same(&pb.pp("conv2"), c, c, 3)?,
            bn2: BatchNorm2d::new(&pb.pp("bn2"), c)?,
            proj: Conv2d::same(&pb.pp("conv3"), c, c, 1)?,
            horizontal: BiLstm::new(&pb.pp("lstm_h"), c, cfg.hidden_units)?,
            vertical: BiLstm::new(&pb.pp("lstm_v"), c, cfg.hidden_units)?,
            channels: c,
        })
    }

    /// `[B, C, H, W] -> [B, C, H, W]`.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "SRB built for {} channels, got {c}",
                self.channels
            )));
        }
        let y = self.conv1.forward(x)?;
        let y = self.act.forward(&self.bn1.forward(&y, train)?)?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, train)?;
        let y = self.proj.forward(&y)?;
        let y = self.recurrence(&y, true)?;
        Ok((x + y)?)
    }

    /// The row pass followed, when `vertical` is set, by the column pass.
    pub fn recurrence(&self, x: &Tensor, vertical: bool) -> Result<Tensor> {
        let y = self.horizontal.forward_rows(x)?;
        if vertical {
            self.vertical.forward_columns(&y)
        } else {
            Ok(y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    fn small_cfg() -> ModelConfig {
        ModelConfig::default().with_hidden_units(4)
    }

    #[test]
    fn shape_is_preserved() {
        let store = ParamStore::new(0, DType::F32, Device::Cpu);
        let srb = Srb::new(&store.root(), &ModelConfig::default()).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 64, 16, 64), &Device::Cpu).unwrap();
        assert_eq!(srb.forward(&x, false).unwrap().dims(), &[2, 64, 16, 64]);
        assert_eq!(srb.forward(&x, true).unwrap().dims(), &[2, 64, 16, 64]);
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let store = ParamStore::new(0, DType::F32, Device::Cpu);
        let cfg = ModelConfig {
            feature_channels: 48,
            ..ModelConfig::default()
        };
        assert!(matches!(
            Srb::new(&store.root(), &cfg),
            Err(Error::ConfigInvalid { field: "feature_channels", .. })
        ));
        let srb = Srb::new(&store.root().pp("ok"), &small_cfg()).unwrap();
        let x = Tensor::zeros((1, 6, 4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(srb.forward(&x, false).is_err());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        // All biases start at zero, so every stage maps zero to zero.
        let store = ParamStore::new(5, DType::F64, Device::Cpu);
        let srb = Srb::new(&store.root(), &small_cfg()).unwrap();
        let x = Tensor::zeros((2, 8, 4, 6), DType::F64, &Device::Cpu).unwrap();
        let y = srb.forward(&x, false).unwrap();
        let max = y.abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(max, 0.0);
    }

    #[test]
    fn row_pass_is_row_permutation_equivariant() {
        // Brute force over every transposition of two rows of a 4x4 map: with
        // the column pass off, permuting input rows permutes output rows; with
        // it on, information flows between rows and the property breaks.
        let store = ParamStore::new(6, DType::F64, Device::Cpu);
        let srb = Srb::new(&store.root(), &small_cfg()).unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 8, 4, 4), &Device::Cpu).unwrap();
        let swap = |t: &Tensor, a: usize, b: usize| {
            let mut rows: Vec<Tensor> = (0..4).map(|r| t.narrow(2, r, 1).unwrap()).collect();
            rows.swap(a, b);
            Tensor::cat(&rows, 2).unwrap()
        };
        let max_diff = |a: &Tensor, b: &Tensor| {
            (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
        };
        let base_h = srb.recurrence(&x, false).unwrap();
        let base_hv = srb.recurrence(&x, true).unwrap();
        for a in 0..4 {
            for b in a + 1..4 {
                let xs = swap(&x, a, b);
                let h = srb.recurrence(&xs, false).unwrap();
                assert!(max_diff(&h, &swap(&base_h, a, b)) < 1e-13);
                let hv = srb.recurrence(&xs, true).unwrap();
                assert!(max_diff(&hv, &swap(&base_hv, a, b)) > 1e-6);
            }
        }
    }
}
