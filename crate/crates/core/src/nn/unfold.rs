//! im2col / col2im as autograd-aware custom ops.
//!
//! A stride-1 convolution becomes `weight [Cout, C k k] x unfold(x) [B, C k k, H W]`,
//! so both the forward pass and the two gradients run through matrix products.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
}

impl Geometry {
    fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.k
    }

    fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.k
    }

    fn cols_shape(&self) -> Shape {
        Shape::from((self.b, self.c * self.k * self.k, self.out_h() * self.out_w()))
    }

    /// Visits every `(input offset, column offset, run length)` copy segment.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let rows = self.c * self.k * self.k;
        for b in 0..self.b {
            for c in 0..self.c {
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let r = (c * self.k + ky) * self.k + kx;
                        let col_base = (b * rows + r) * oh * ow;
                        // Output columns whose source column lies inside the image.
                        let ox_lo = self.pad.saturating_sub(kx);
                        let ox_hi = (self.w + self.pad).saturating_sub(kx).min(ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = oy + ky;
                            if iy < self.pad || iy - self.pad >= self.h {
                                continue;
                            }
                            let iy = iy - self.pad;
                            let ix = ox_lo + kx - self.pad;
                            let src = ((b * self.c + c) * self.h + iy) * self.w + ix;
                            f(src, col_base + oy * ow + ox_lo, ox_hi - ox_lo);
                        }
                    }
                }
            }
        }
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout, op: &str) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => Err(candle_core::Error::Msg(format!("{op} needs a contiguous input"))),
    }
}

struct Unfold(Geometry);

impl CustomOp1 for Unfold {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let shape = g.cols_shape();
        fn run<T: Copy + Default>(g: &Geometry, x: &[T], n: usize) -> Vec<T> {
            let mut out = vec![T::default(); n];
            g.for_each_run(|src, dst, len| out[dst..dst + len].copy_from_slice(&x[src..src + len]));
            out
        }
        let n = shape.elem_count();
        let out = match storage {
            CpuStorage::F32(x) => CpuStorage::F32(run(&g, contiguous(x, layout, "unfold")?, n)),
            CpuStorage::F64(x) => CpuStorage::F64(run(&g, contiguous(x, layout, "unfold")?, n)),
            other => {
                return Err(candle_core::Error::UnsupportedDTypeForOp(other.dtype(), "unfold"));
            }
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Fold(self.0))?))
    }
}

struct Fold(Geometry);

impl CustomOp1 for Fold {
    fn name(&self) -> &'static str {
        "fold"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let shape = Shape::from((g.b, g.c, g.h, g.w));
        fn run<T: Copy + Default + std::ops::AddAssign>(g: &Geometry, cols: &[T], n: usize) -> Vec<T> {
            let mut out = vec![T::default(); n];
            g.for_each_run(|src, dst, len| {
                for (o, v) in out[src..src + len].iter_mut().zip(&cols[dst..dst + len]) {
                    *o += *v;
                }
            });
            out
        }
        let n = shape.elem_count();
        let out = match storage {
            CpuStorage::F32(x) => CpuStorage::F32(run(&g, contiguous(x, layout, "fold")?, n)),
            CpuStorage::F64(x) => CpuStorage::F64(run(&g, contiguous(x, layout, "fold")?, n)),
            other => {
                return Err(candle_core::Error::UnsupportedDTypeForOp(other.dtype(), "fold"));
            }
        };
        Ok((out, shape))
    }
}

/// `[B, C, H, W] -> [B, C k k, H' W']` patches of a stride-1 `k x k` window
/// with zero padding `pad`. Row `(c k + ky) k + kx` matches the flattened
/// `[Cout, C, k, k]` weight layout.
pub fn unfold(x: &Tensor, k: usize, pad: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let g = Geometry { b, c, h, w, k, pad };
    Ok(x.contiguous()?.apply_op1(Unfold(g))?)
}
