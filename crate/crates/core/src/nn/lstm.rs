use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::params::{Init, ParamBuilder};

/// One direction of an LSTM layer. Gate order is input, forget, cell, output.
#[derive(Debug, Clone)]
struct LstmDirection {
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
    hidden: usize,
}

impl LstmDirection {
    fn new(pb: &ParamBuilder, input: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let init = Init::Uniform {
            lo: -bound,
            hi: bound,
        };
        Ok(Self {
            w_ih: pb.get((4 * hidden, input), "w_ih", init.clone())?,
            w_hh: pb.get((4 * hidden, hidden), "w_hh", init)?,
            bias: pb.get(4 * hidden, "bias", Init::Const(0.0))?,
            hidden,
        })
    }

    /// `[N, T, input] -> [N, T, hidden]`, scanning backwards when `reverse`.
    fn forward(&self, x: &Tensor, reverse: bool) -> Result<Tensor> {
        let (n, t, input) = x.dims3()?;
        let projected = x
            .reshape((n * t, input))?
            .matmul(&self.w_ih.t()?)?
            .broadcast_add(&self.bias)?
            .reshape((n, t, 4 * self.hidden))?;
        let w_hh_t = self.w_hh.t()?;
        let mut h = Tensor::zeros((n, self.hidden), x.dtype(), x.device())?;
        let mut c = h.clone();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(t);
        let steps: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..t).rev())
        } else {
            Box::new(0..t)
        };
        for step in steps {
            let gates = (projected.narrow(1, step, 1)?.squeeze(1)? + h.matmul(&w_hh_t)?)?;
            let chunks = gates.chunk(4, D::Minus1)?;
            let i = candle_nn::ops::sigmoid(&chunks[0])?;
            let f = candle_nn::ops::sigmoid(&chunks[1])?;
            let g = chunks[2].tanh()?;
            let o = candle_nn::ops::sigmoid(&chunks[3])?;
            c = ((f * &c)? + (i * g)?)?;
            h = (o * c.tanh()?)?;
            outputs.push(h.clone());
        }
        if reverse {
            outputs.reverse();
        }
        Ok(Tensor::stack(&outputs, 1)?)
    }
}

/// Bidirectional LSTM whose forward and backward outputs are concatenated.
#[derive(Debug, Clone)]
pub struct BiLstm {
    forward: LstmDirection,
    backward: LstmDirection,
}

impl BiLstm {
    pub fn new(pb: &ParamBuilder, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            forward: LstmDirection::new(&pb.pp("fwd"), input, hidden)?,
            backward: LstmDirection::new(&pb.pp("bwd"), input, hidden)?,
        })
    }

    pub fn output_size(&self) -> usize {
        2 * self.forward.hidden
    }

    /// `[N, T, input] -> [N, T, 2 hidden]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.forward.forward(x, false)?;
        let b = self.backward.forward(x, true)?;
        Ok(Tensor::cat(&[f, b], 2)?)
    }

    /// Runs along every row of a `[B, C, H, W]` map: `H` sequences of length
    /// `W` per image with `C`-dimensional steps. Output is `[B, 2 hidden, H, W]`.
    pub fn forward_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        self.check_channels(c)?;
        let seq = x.permute((0, 2, 3, 1))?.reshape((b * h, w, c))?;
        let out = self.forward(&seq)?;
        Ok(out
            .reshape((b, h, w, self.output_size()))?
            .permute((0, 3, 1, 2))?
            .contiguous()?)
    }

    /// Runs along every column: `W` sequences of length `H`.
    pub fn forward_columns(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        self.check_channels(c)?;
        let seq = x.permute((0, 3, 2, 1))?.reshape((b * w, h, c))?;
        let out = self.forward(&seq)?;
        Ok(out
            .reshape((b, w, h, self.output_size()))?
            .permute((0, 3, 2, 1))?
            .contiguous()?)
    }

    fn check_channels(&self, c: usize) -> Result<()> {
        let expected = self.forward.w_ih.dim(1)?;
        if c != expected {
            return Err(Error::Shape(format!(
                "recurrence expects {expected} channels per step, got {c}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use candle_core::{DType, Device, IndexOp};

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn matches_scalar_recurrence() {
        // Reference LSTM written with plain loops over the stored weights.
        let store = ParamStore::new(9, DType::F64, Device::Cpu);
        let lstm = BiLstm::new(&store.root().pp("l"), 3, 2).unwrap();
        let x = Tensor::new(
            &[[[0.1f64, -0.2, 0.3], [0.5, 0.0, -0.4], [0.2, 0.9, 0.1], [-0.7, 0.3, 0.6]]],
            &Device::Cpu,
        )
        .unwrap();
        let out = lstm.forward(&x).unwrap();
        assert_eq!(out.dims(), &[1, 4, 4]);

        let p = store.tensors();
        let xs: Vec<Vec<f64>> = x.i(0).unwrap().to_vec2().unwrap();
        for (dir, reverse, col0) in [("fwd", false, 0usize), ("bwd", true, 2)] {
            let w_ih: Vec<Vec<f64>> = p[&format!("l.{dir}.w_ih")].to_vec2().unwrap();
            let w_hh: Vec<Vec<f64>> = p[&format!("l.{dir}.w_hh")].to_vec2().unwrap();
            let bias: Vec<f64> = p[&format!("l.{dir}.bias")].to_vec1().unwrap();
            let (mut h, mut c) = (vec![0.0; 2], vec![0.0; 2]);
            let order: Vec<usize> = if reverse { (0..4).rev().collect() } else { (0..4).collect() };
            for t in order {
                let mut gates = vec![0.0; 8];
                for (k, g) in gates.iter_mut().enumerate() {
                    *g = bias[k]
                        + (0..3).map(|j| w_ih[k][j] * xs[t][j]).sum::<f64>()
                        + (0..2).map(|j| w_hh[k][j] * h[j]).sum::<f64>();
                }
                for u in 0..2 {
                    let (i, f, g, o) = (sigmoid(gates[u]), sigmoid(gates[2 + u]), gates[4 + u].tanh(), sigmoid(gates[6 + u]));
                    c[u] = f * c[u] + i * g;
                    h[u] = o * c[u].tanh();
                }
                let got: Vec<f64> = out.i((0, t)).unwrap().to_vec1().unwrap();
                for u in 0..2 {
                    assert!((got[col0 + u] - h[u]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rows_and_columns_keep_layout() {
        let store = ParamStore::new(1, DType::F32, Device::Cpu);
        let lstm = BiLstm::new(&store.root(), 6, 3).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 6, 4, 5), &Device::Cpu).unwrap();
        assert_eq!(lstm.forward_rows(&x).unwrap().dims(), &[2, 6, 4, 5]);
        assert_eq!(lstm.forward_columns(&x).unwrap().dims(), &[2, 6, 4, 5]);
        let bad = Tensor::zeros((1, 4, 4, 5), DType::F32, &Device::Cpu).unwrap();
        assert!(lstm.forward_rows(&bad).is_err());
    }

    #[test]
    fn row_pass_only_sees_its_own_row() {
        let store = ParamStore::new(2, DType::F64, Device::Cpu);
        let lstm = BiLstm::new(&store.root(), 4, 2).unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 4, 3, 5), &Device::Cpu).unwrap();
        let y = lstm.forward_rows(&x).unwrap();
        // Row 1 computed alone equals row 1 of the full pass.
        let row = lstm.forward_rows(&x.narrow(2, 1, 1).unwrap()).unwrap();
        let diff = (y.narrow(2, 1, 1).unwrap() - row).unwrap().abs().unwrap().max_all().unwrap();
        assert!(diff.to_scalar::<f64>().unwrap() < 1e-14);
    }
}
