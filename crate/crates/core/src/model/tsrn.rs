use candle_core::{DType, Device, Tensor};

use crate::config::ModelConfig;
use crate::data::mask::with_mask;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::align::CentralAlign;
use crate::model::srb::Srb;
use crate::nn::{pixel_shuffle, BatchNorm2d, Conv2d, PRelu, ParamStore};
use crate::record::LR_SHAPE;

/// The full super-resolution network.
///
/// `align -> conv9x9 + PReLU -> SRB x n -> conv3x3 + BN -> + shallow ->
/// conv (C -> 4C) + pixel shuffle + PReLU -> conv9x9 -> (tanh + 1) / 2`.
#[derive(Debug, Clone)]
pub struct Tsrn {
    cfg: ModelConfig,
    store: ParamStore,
    align: Option<CentralAlign>,
    head: Conv2d,
    head_act: PRelu,
    blocks: Vec<Srb>,
    tail_conv: Conv2d,
    tail_bn: BatchNorm2d,
    up_conv: Conv2d,
    up_act: PRelu,
    out_conv: Conv2d,
}

impl Tsrn {
    /// Builds a freshly initialized model; equal seeds give equal weights.
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(seed, dtype, device.clone());
        let root = store.root();
        let c = cfg.feature_channels;
        let cin = cfg.input_channels();
        let align = if cfg.use_alignment {
            Some(CentralAlign::new(&root.pp("align"), cfg)?)
        } else {
            None
        };
        let head = Conv2d::same(&root.pp("head.conv"), cin, c, 9)?;
        let head_act = PRelu::new(&root.pp("head.prelu"))?;
        let blocks = (0..cfg.num_srb)
            .map(|i| Srb::new(&root.pp(format!("srb.{i}")), cfg))
            .collect::<Result<Vec<_>>>()?;
        let tail_conv = Conv2d::same(&root.pp("tail.conv"), c, c, 3)?;
        let tail_bn = BatchNorm2d::new(&root.pp("tail.bn"), c)?;
        let r = cfg.scale;
        let up_conv = Conv2d::same(&root.pp("up.conv"), c, c * r * r, 3)?;
        let up_act = PRelu::new(&root.pp("up.prelu"))?;
        let out_conv = Conv2d::same(&root.pp("out.conv"), c, 3, 9)?;
        Ok(Self {
            cfg: *cfg,
            store,
            align,
            head,
            head_act,
            blocks,
            tail_conv,
            tail_bn,
            up_conv,
            up_act,
            out_conv,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable_params()
    }

    pub fn align(&self) -> Option<&CentralAlign> {
        self.align.as_ref()
    }

    /// `[B, Cin, 16, 64] -> [B, 3, 32, 128]` with values in `[0, 1]`.
    /// `train` selects batch statistics in the normalization layers.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let cin = self.cfg.input_channels();
        if c != cin {
            return Err(Error::Shape(format!(
                "model expects {cin} input channels (use_mask = {}), got {c}",
                self.cfg.use_mask
            )));
        }
        if self.align.is_some() && (h, w) != LR_SHAPE {
            return Err(Error::Shape(format!(
                "alignment needs {}x{} input, got {h}x{w}",
                LR_SHAPE.0, LR_SHAPE.1
            )));
        }
        let x = match &self.align {
            Some(a) => a.forward(x, train)?,
            None => x.clone(),
        };
        let shallow = self.head_act.forward(&self.head.forward(&x)?)?;
        let mut y = shallow.clone();
        for block in &self.blocks {
            y = block.forward(&y, train)?;
        }
        let y = self.tail_bn.forward(&self.tail_conv.forward(&y)?, train)?;
        let y = (y + shallow)?;
        let y = pixel_shuffle(&self.up_conv.forward(&y)?, self.cfg.scale)?;
        let y = self.up_act.forward(&y)?;
        let y = self.out_conv.forward(&y)?;
        Ok(((y.tanh()? + 1.0)? * 0.5)?)
    }

    /// Appends the mask channel when the config asks for it.
    pub fn prepare_input(&self, lr: &ImageTensor) -> Result<ImageTensor> {
        if lr.channels() != 3 {
            return Err(Error::Shape(format!(
                "expected an RGB image, got {} channels",
                lr.channels()
            )));
        }
        if self.cfg.use_mask {
            with_mask(lr)
        } else {
            Ok(lr.clone())
        }
    }

    /// Super-resolves one normalized RGB LR image in evaluation mode.
    pub fn super_resolve(&self, lr: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.super_resolve_batch(std::slice::from_ref(lr))?.remove(0))
    }

    pub fn super_resolve_batch(&self, lrs: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
        let inputs = lrs
            .iter()
            .map(|lr| self.prepare_input(lr))
            .collect::<Result<Vec<_>>>()?;
        let x = crate::image::stack_batch(&inputs, self.dtype(), self.device())?;
        crate::image::unstack_batch(&self.forward(&x, false)?)
    }
}
