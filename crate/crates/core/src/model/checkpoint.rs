//! Single-file checkpoints: safetensors weights plus JSON metadata.
//!
//! Model tensors are stored under `model.<path>`; any extra state (optimizer
//! moments) under its own prefix. The header metadata carries the model
//! config so that a checkpoint never loads into a differently shaped network.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::tsrn::Tsrn;

pub const FORMAT_TAG: &str = "textsr-checkpoint-v1";
const MODEL_PREFIX: &str = "model.";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub epoch: u64,
    pub model: BTreeMap<String, Tensor>,
    /// Everything outside the `model.` namespace, keys kept as stored.
    pub extra: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Copies the weights into `model`, refusing a config mismatch.
    pub fn apply_to(&self, model: &Tsrn) -> Result<()> {
        if model.config() != &self.config {
            return Err(Error::Checkpoint(format!(
                "config mismatch: checkpoint has {:?}, model has {:?}",
                self.config,
                model.config()
            )));
        }
        model.params().load_tensors(&self.model)
    }

    /// Rebuilds the model described by the checkpoint.
    pub fn build_model(&self, device: &Device) -> Result<Tsrn> {
        let dtype = self
            .model
            .values()
            .next()
            .map(|t| t.dtype())
            .ok_or_else(|| Error::Checkpoint("checkpoint holds no model tensors".into()))?;
        let model = Tsrn::new(&self.config, 0, dtype, device)?;
        self.apply_to(&model)?;
        Ok(model)
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Tsrn,
    step: u64,
    epoch: u64,
    extra: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let path = path.as_ref();
    let mut tensors: Vec<(String, Tensor)> = model
        .params()
        .tensors()
        .into_iter()
        .map(|(k, v)| (format!("{MODEL_PREFIX}{k}"), v))
        .collect();
    for (k, v) in extra {
        if k.starts_with(MODEL_PREFIX) {
            return Err(Error::Checkpoint(format!("extra tensor `{k}` uses the model prefix")));
        }
        tensors.push((k.clone(), v.contiguous()?));
    }
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), FORMAT_TAG.to_string());
    meta.insert("model_config".to_string(), serde_json::to_string(&model.config())?);
    meta.insert("step".to_string(), step.to_string());
    meta.insert("epoch".to_string(), epoch.to_string());
    let bytes = safetensors::serialize(tensors, Some(meta))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>, device: &Device) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) =
        SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no metadata", path.display())))?;
    let field = |key: &str| {
        meta.get(key)
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing `{key}`", path.display())))
    };
    if field("format")? != FORMAT_TAG {
        return Err(Error::Checkpoint(format!(
            "{}: unknown format `{}`",
            path.display(),
            field("format")?
        )));
    }
    let config: ModelConfig = serde_json::from_str(field("model_config")?)?;
    let parse_u64 = |key: &str| -> Result<u64> {
        field(key)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("{}: bad `{key}`", path.display())))
    };
    let step = parse_u64("step")?;
    let epoch = parse_u64("epoch")?;
    let all = candle_core::safetensors::load_buffer(&bytes, device)?;
    let mut model = BTreeMap::new();
    let mut extra = BTreeMap::new();
    for (k, v) in all {
        match k.strip_prefix(MODEL_PREFIX) {
            Some(name) => {
                model.insert(name.to_string(), v);
            }
            None => {
                extra.insert(k, v);
            }
        }
    }
    Ok(Checkpoint {
        config,
        step,
        epoch,
        model,
        extra,
    })
}

/// Loads a model, optionally insisting on a particular config.
pub fn load_model(path: impl AsRef<Path>, expected: Option<&ModelConfig>, device: &Device) -> Result<Tsrn> {
    let ckpt = read_checkpoint(path, device)?;
    if let Some(cfg) = expected {
        if cfg != &ckpt.config {
            return Err(Error::Checkpoint(format!(
                "config mismatch: checkpoint has {:?}, expected {:?}",
                ckpt.config, cfg
            )));
        }
    }
    ckpt.build_model(device)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::align::max_abs_diff;
    use candle_core::DType;

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_srb: 1,
            ..ModelConfig::default().with_hidden_units(4)
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let m = Tsrn::new(&tiny(), 3, DType::F32, &Device::Cpu).unwrap();
        // One training-mode pass moves the running statistics off their init.
        let x = Tensor::rand(0f32, 1.0, (2, 4, 16, 64), &Device::Cpu).unwrap();
        m.forward(&x, true).unwrap();
        let mut extra = BTreeMap::new();
        extra.insert("optim.m.x".to_string(), Tensor::ones(3, DType::F32, &Device::Cpu).unwrap());
        save_checkpoint(&path, &m, 17, 2, &extra).unwrap();

        let ck = read_checkpoint(&path, &Device::Cpu).unwrap();
        assert_eq!((ck.step, ck.epoch), (17, 2));
        assert_eq!(ck.extra.len(), 1);
        let loaded = ck.build_model(&Device::Cpu).unwrap();
        let a = m.forward(&x, false).unwrap();
        let b = loaded.forward(&x, false).unwrap();
        assert_eq!(max_abs_diff(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn refuses_config_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let m = Tsrn::new(&tiny(), 3, DType::F32, &Device::Cpu).unwrap();
        save_checkpoint(&path, &m, 0, 0, &BTreeMap::new()).unwrap();
        let other = ModelConfig { use_mask: false, ..tiny() };
        assert!(matches!(
            load_model(&path, Some(&other), &Device::Cpu),
            Err(Error::Checkpoint(_))
        ));
        let ck = read_checkpoint(&path, &Device::Cpu).unwrap();
        let wrong = Tsrn::new(&other, 0, DType::F32, &Device::Cpu).unwrap();
        assert!(ck.apply_to(&wrong).is_err());
        assert!(load_model(&path, Some(&tiny()), &Device::Cpu).is_ok());
    }

    #[test]
    fn garbage_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(read_checkpoint(&path, &Device::Cpu).is_err());
        assert!(read_checkpoint(dir.path().join("missing"), &Device::Cpu).is_err());
    }
}
