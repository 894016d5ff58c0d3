//! Named, seeded parameter storage.
//!
//! Every weight is a candle [`Var`] registered under a dotted path such as
//! `srb.0.conv1.weight`. Initial values come from a ChaCha RNG owned by the
//! store, so two stores built with the same seed hold identical weights.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics; saved with the weights but not optimized.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Const(f64),
    Uniform { lo: f64, hi: f64 },
    Values(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
    pub kind: ParamKind,
}

#[derive(Debug)]
struct Inner {
    params: Vec<Param>,
    rng: ChaCha8Rng,
}

/// Shared handle to the parameters of one model.
#[derive(Debug, Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                params: Vec::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> ParamBuilder {
        ParamBuilder {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    /// All parameters in registration order.
    pub fn params(&self) -> Vec<Param> {
        self.inner.lock().expect("param store poisoned").params.clone()
    }

    pub fn trainable(&self) -> Vec<Param> {
        self.params()
            .into_iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .collect()
    }

    pub fn num_trainable_params(&self) -> usize {
        self.trainable().iter().map(|p| p.var.elem_count()).sum()
    }

    /// Snapshot of every value keyed by name.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.params()
            .into_iter()
            .map(|p| (p.name, p.var.as_tensor().copy().expect("copy of a live tensor")))
            .collect()
    }

    /// Overwrites every registered value from `tensors`; names and shapes must match exactly.
    pub fn load_tensors(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let params = self.params();
        for p in &params {
            let t = tensors
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", p.name)))?;
            if t.dims() != p.var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, model expects {:?}",
                    p.name,
                    t.dims(),
                    p.var.dims()
                )));
            }
            p.var.set(&t.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        if let Some(extra) = tensors.keys().find(|k| !params.iter().any(|p| &p.name == *k)) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(())
    }

    fn register(&self, name: String, shape: Shape, init: Init, kind: ParamKind) -> Result<Var> {
        let mut inner = self.inner.lock().expect("param store poisoned");
        if inner.params.iter().any(|p| p.name == name) {
            return Err(Error::Checkpoint(format!("parameter `{name}` registered twice")));
        }
        let n = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Const(v) => vec![v; n],
            Init::Uniform { lo, hi } => (0..n).map(|_| inner.rng.gen_range(lo..hi)).collect(),
            Init::Values(v) => {
                if v.len() != n {
                    return Err(Error::Shape(format!(
                        "{name}: {} init values for {n} elements",
                        v.len()
                    )));
                }
                v
            }
        };
        let tensor = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&tensor)?;
        inner.params.push(Param {
            name,
            var: var.clone(),
            kind,
        });
        Ok(var)
    }
}

/// A view of the store under a name prefix.
#[derive(Debug, Clone)]
pub struct ParamBuilder {
    store: ParamStore,
    prefix: String,
}

impl ParamBuilder {
    pub fn pp(&self, name: impl std::fmt::Display) -> ParamBuilder {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        ParamBuilder {
            store: self.store.clone(),
            prefix,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Registers a trainable tensor and returns a handle sharing its storage.
    pub fn get(&self, shape: impl Into<Shape>, name: &str, init: Init) -> Result<Tensor> {
        let var = self
            .store
            .register(self.path(name), shape.into(), init, ParamKind::Trainable)?;
        Ok(var.as_tensor().clone())
    }

    pub fn buffer(&self, shape: impl Into<Shape>, name: &str, init: Init) -> Result<Var> {
        self.store
            .register(self.path(name), shape.into(), init, ParamKind::Buffer)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}
