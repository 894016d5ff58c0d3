use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::Param;

/// Adam with bias correction and checkpointable moments.
#[derive(Debug)]
pub struct Adam {
    params: Vec<Param>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
}

impl Adam {
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: Vec<Param>, lr: f64, beta1: f64) -> Result<Self> {
        let zeros = |p: &Param| p.var.as_tensor().zeros_like();
        let m = params.iter().map(zeros).collect::<candle_core::Result<Vec<_>>>()?;
        let v = params.iter().map(zeros).collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self {
            params,
            m,
            v,
            lr,
            beta1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = grads.get(p.var.as_tensor()) else {
                continue;
            };
            // Gradients can still reference the forward graph.
            let g = &g.detach();
            *m = ((&*m * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            *v = ((&*v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&*m / bc1)?;
            let v_hat = (&*v / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            p.var.set(&(p.var.as_tensor() - (update * self.lr)?)?)?;
        }
        Ok(())
    }

    /// Moments keyed `optim.m.<param>` and `optim.v.<param>`.
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for ((p, m), v) in self.params.iter().zip(&self.m).zip(&self.v) {
            out.insert(format!("optim.m.{}", p.name), m.clone());
            out.insert(format!("optim.v.{}", p.name), v.clone());
        }
        out
    }

    pub fn load_state(&mut self, state: &BTreeMap<String, Tensor>, step: u64) -> Result<()> {
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            for (slot, kind) in [(m, "m"), (v, "v")] {
                let key = format!("optim.{kind}.{}", p.name);
                let t = state
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor `{key}`")))?;
                if t.dims() != slot.dims() {
                    return Err(Error::Checkpoint(format!("optimizer tensor `{key}` has the wrong shape")));
                }
                *slot = t.to_dtype(slot.dtype())?.to_device(slot.device())?;
            }
        }
        self.step = step;
        Ok(())
    }
}
