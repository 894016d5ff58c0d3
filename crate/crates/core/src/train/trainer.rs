use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::data::manifest::{iterate_batches, load_dataset, BatchOptions};
use crate::error::{Error, Result};
use crate::image::{stack_batch, ImageTensor};
use crate::losses::{total_loss_tensor, LossParts};
use crate::model::checkpoint::{read_checkpoint, save_checkpoint};
use crate::model::Tsrn;
use crate::train::adam::Adam;

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const LOSS_LOG_FILE: &str = "loss_log.jsonl";

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: u64,
    pub pixel: f64,
    pub gp: f64,
    pub total: f64,
}

/// A model plus its optimizer state.
#[derive(Debug)]
pub struct Trainer {
    model: Tsrn,
    optim: Adam,
    cfg: TrainConfig,
    epoch: u64,
}

impl Trainer {
    pub fn new(model: Tsrn, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optim = Adam::new(model.params().trainable(), cfg.learning_rate, cfg.optimizer_momentum)?;
        Ok(Self {
            model,
            optim,
            cfg,
            epoch: 0,
        })
    }

    /// Fresh model seeded from `cfg.seed`.
    pub fn from_configs(model_cfg: &ModelConfig, cfg: TrainConfig, dtype: DType, device: &Device) -> Result<Self> {
        Self::new(Tsrn::new(model_cfg, cfg.seed, dtype, device)?, cfg)
    }

    /// Restores model weights, optimizer moments and counters.
    pub fn resume(path: impl AsRef<Path>, cfg: TrainConfig, device: &Device) -> Result<Self> {
        let ckpt = read_checkpoint(path, device)?;
        let model = ckpt.build_model(device)?;
        let mut t = Self::new(model, cfg)?;
        t.optim.load_state(&ckpt.extra, ckpt.step)?;
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    pub fn model(&self) -> &Tsrn {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.optim.step_count()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.optim.lr = lr;
    }

    /// Loss of the model on `(x, y)` without updating weights. `train`
    /// selects batch statistics, which also refreshes the running averages.
    pub fn loss(&self, x: &Tensor, y: &Tensor, train: bool) -> Result<LossParts> {
        let sr = self.model.forward(x, train)?;
        Ok(total_loss_tensor(&sr, y, &self.cfg)?.1)
    }

    /// One optimizer step on a batch. A non-finite loss aborts before the
    /// update with [`Error::Numerical`].
    pub fn train_step(&mut self, x: &Tensor, y: &Tensor) -> Result<LossParts> {
        let sr = self.model.forward(x, true)?;
        let (loss, parts) = total_loss_tensor(&sr, y, &self.cfg)?;
        if !parts.total.is_finite() {
            return Err(Error::Numerical(format!(
                "loss is {} (pixel {}, gp {})",
                parts.total, parts.pixel, parts.gp
            )));
        }
        let grads = loss.backward()?;
        self.optim.step(&grads)?;
        Ok(parts)
    }

    /// [`Trainer::train_step`] on images; `lr` must already carry the mask
    /// channel when the model expects one.
    pub fn train_step_images(&mut self, lr: &[ImageTensor], hr: &[ImageTensor]) -> Result<LossParts> {
        let (x, y) = self.batch_tensors(lr, hr)?;
        self.train_step(&x, &y)
    }

    pub fn batch_tensors(&self, lr: &[ImageTensor], hr: &[ImageTensor]) -> Result<(Tensor, Tensor)> {
        let dtype = self.model.dtype();
        let device = self.model.device();
        Ok((stack_batch(lr, dtype, device)?, stack_batch(hr, dtype, device)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.model, self.step_count(), self.epoch, &self.optim.state())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub steps: u64,
    pub epochs: u64,
    pub last: Option<LossParts>,
}

fn batch_options(model_cfg: &ModelConfig, cfg: &TrainConfig, epoch: u64) -> BatchOptions {
    BatchOptions {
        batch_size: cfg.batch_size,
        shuffle: true,
        seed: cfg.seed.wrapping_add(epoch),
        use_mask: model_cfg.use_mask,
        synthetic_lr: cfg.synthetic_lr,
        misalign: cfg.misalign_augment,
        augment_seed: cfg.seed ^ epoch.wrapping_mul(0xD1B5_4A32_D192_ED03),
    }
}

/// Trains on a manifest, writing `checkpoint.safetensors` after every epoch
/// and one [`LossRecord`] per step to `loss_log.jsonl` under `out_dir`.
///
/// With `resume`, an existing checkpoint in `out_dir` restores the weights,
/// optimizer state and counters; an interrupted epoch restarts from its
/// first batch. Stops after `cfg.epochs` epochs or `cfg.max_steps` steps.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    manifest: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    resume: bool,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    let manifest = load_dataset(manifest)?;
    if manifest.is_empty() {
        return Err(Error::InvalidInput("training manifest has no usable rows".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOSS_LOG_FILE);
    let device = Device::Cpu;

    let resuming = resume && ckpt_path.exists();
    let mut trainer = if resuming {
        let t = Trainer::resume(&ckpt_path, *cfg, &device)?;
        if t.model().config() != model_cfg {
            return Err(Error::Checkpoint(format!(
                "{} was trained with {:?}, asked to continue with {:?}",
                ckpt_path.display(),
                t.model().config(),
                model_cfg
            )));
        }
        log::info!("resuming at step {} (epoch {})", t.step_count(), t.epoch());
        t
    } else {
        Trainer::from_configs(model_cfg, *cfg, DType::F32, &device)?
    };
    let log_file = if resuming {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);

    let max_steps = cfg.max_steps as u64;
    let reached = |t: &Trainer| max_steps > 0 && t.step_count() >= max_steps;
    let mut last = None;
    while trainer.epoch < cfg.epochs as u64 && !reached(&trainer) {
        let opts = batch_options(model_cfg, cfg, trainer.epoch);
        let mut completed = true;
        for batch in iterate_batches(&manifest, opts) {
            if reached(&trainer) {
                completed = false;
                break;
            }
            let batch = batch?;
            let step = trainer.step_count() + 1;
            let parts = trainer
                .train_step_images(&batch.lr, &batch.hr)
                .map_err(|e| match e {
                    Error::Numerical(msg) => {
                        log::error!("step {step}: {msg}");
                        Error::NonFiniteLoss {
                            step: step as usize,
                            batch_ids: batch.ids(&manifest),
                        }
                    }
                    other => other,
                })?;
            let rec = LossRecord {
                step,
                epoch: trainer.epoch,
                pixel: parts.pixel,
                gp: parts.gp,
                total: parts.total,
            };
            serde_json::to_writer(&mut log, &rec)?;
            writeln!(log).map_err(|e| Error::io(&log_path, e))?;
            log::debug!("step {step}: total {:.6} pixel {:.6} gp {:.6}", parts.total, parts.pixel, parts.gp);
            last = Some(parts);
        }
        if completed {
            trainer.epoch += 1;
            log::info!("epoch {} done at step {}", trainer.epoch, trainer.step_count());
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        trainer.save(&ckpt_path)?;
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainOutcome {
        checkpoint: ckpt_path,
        loss_log: log_path,
        steps: trainer.step_count(),
        epochs: trainer.epoch,
        last,
    })
}

pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::write_toy_dataset;
    use crate::model::align::max_abs_diff;
    use crate::record::Subset;

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_srb: 1,
            use_alignment: false,
            ..ModelConfig::default().with_hidden_units(4)
        }
    }

    fn quick(cfg: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            ..cfg
        }
    }

    #[test]
    fn small_step_decreases_the_batch_loss() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_toy_dataset(dir.path(), 4, 1, &[Subset::Train]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-5,
            ..TrainConfig::default()
        };
        let mut t = Trainer::from_configs(&tiny(), cfg, DType::F64, &Device::Cpu).unwrap();
        let opts = BatchOptions {
            use_mask: true,
            ..BatchOptions::new(4)
        };
        let batch = crate::data::manifest::load_batch(&m, &[0, 1, 2, 3], &opts).unwrap();
        let (x, y) = t.batch_tensors(&batch.lr, &batch.hr).unwrap();
        let before = t.loss(&x, &y, true).unwrap().total;
        t.train_step(&x, &y).unwrap();
        let after = t.loss(&x, &y, true).unwrap().total;
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn gp_weight_changes_the_log() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(dir.path(), 4, 2, &[Subset::Train]).unwrap();
        let manifest = dir.path().join("manifest.jsonl");
        let run = |gp: f64, name: &str| {
            let cfg = quick(TrainConfig {
                weight_gp_loss: gp,
                ..TrainConfig::default()
            });
            let out = train(&tiny(), &cfg, &manifest, dir.path().join(name), false).unwrap();
            read_loss_log(out.loss_log).unwrap()
        };
        let with = run(1e-4, "with");
        let without = run(0.0, "without");
        assert_eq!(with.len(), 2);
        assert_ne!(with, without);
        assert!(without.iter().all(|r| r.total == r.pixel));
    }

    #[test]
    fn resume_continues_where_it_stopped() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(dir.path(), 4, 3, &[Subset::Train]).unwrap();
        let manifest = dir.path().join("manifest.jsonl");
        let out = dir.path().join("run");
        let base = TrainConfig {
            epochs: 100,
            batch_size: 4,
            max_steps: 6,
            ..TrainConfig::default()
        };
        let first = train(&tiny(), &base, &manifest, &out, false).unwrap();
        assert_eq!(first.steps, 6);
        let cfg = TrainConfig { max_steps: 8, ..base };
        let second = train(&tiny(), &cfg, &manifest, &out, true).unwrap();
        assert_eq!(second.steps, 8);
        let log = read_loss_log(second.loss_log).unwrap();
        assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=8).collect::<Vec<_>>());
        let (before, after) = (log[5].total, log[6].total);
        assert!((after - before).abs() <= 0.05 * before, "{before} -> {after}");

        // An uninterrupted run logs the same losses and reaches the same weights.
        let straight = train(&tiny(), &cfg, &manifest, dir.path().join("straight"), false).unwrap();
        let straight_log = read_loss_log(&straight.loss_log).unwrap();
        for (r, s) in log.iter().zip(&straight_log) {
            assert!((r.total - s.total).abs() <= 1e-6 * s.total.max(1e-12), "{r:?} vs {s:?}");
        }
        let a = read_checkpoint(&second.checkpoint, &Device::Cpu).unwrap().build_model(&Device::Cpu).unwrap();
        let b = read_checkpoint(&straight.checkpoint, &Device::Cpu).unwrap().build_model(&Device::Cpu).unwrap();
        let x = Tensor::rand(0f32, 1.0, (1, 4, 16, 64), &Device::Cpu).unwrap();
        assert!(max_abs_diff(&a.forward(&x, false).unwrap(), &b.forward(&x, false).unwrap()).unwrap() < 1e-6);

        let other = ModelConfig { num_srb: 2, ..tiny() };
        assert!(matches!(train(&other, &cfg, &manifest, &out, true), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn nan_loss_names_the_batch() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(dir.path(), 2, 4, &[Subset::Train]).unwrap();
        let cfg = TrainConfig {
            weight_pixel_loss: f64::MAX,
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        // f64::MAX overflows to inf in f32 arithmetic; inf * 0-gradient terms give NaN.
        let err = train(&tiny(), &cfg, dir.path().join("manifest.jsonl"), dir.path().join("o"), false).unwrap_err();
        match err {
            Error::NonFiniteLoss { step, batch_ids } => {
                assert_eq!(step, 1);
                assert_eq!(batch_ids.len(), 2);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
