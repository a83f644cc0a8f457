//! Small tensor helpers shared by the attention and backbone code.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// `x @ w (+ b)` for `x` of shape `(..., in)` and `w` of shape `(in, out)`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let y = x.broadcast_matmul(w)?;
    Ok(match b {
        Some(b) => y.broadcast_add(b)?,
        None => y,
    })
}

/// Affine-free layer normalization over the last dimension.
pub fn layer_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// Numerically stable softmax over the last dimension. The max shift is
/// detached; softmax is invariant to it.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&sum)?)
}

/// Host-side Gaussian initialization so weights depend only on the seed.
pub fn randn<R: Rng>(
    rng: &mut R,
    shape: &[usize],
    std: f64,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32)
        .collect();
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

pub fn zeros(shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::zeros(shape, dtype, device)?)
}

/// A model parameter. Gradients flow into it only while it is marked
/// trainable; otherwise forward passes see a detached view of the same
/// storage.
#[derive(Debug, Clone)]
pub struct Param {
    var: Var,
    trainable: Arc<AtomicBool>,
}

impl Param {
    pub fn new(t: Tensor) -> Result<Self> {
        Ok(Self {
            var: Var::from_tensor(&t)?,
            trainable: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn t(&self) -> Tensor {
        if self.is_trainable() {
            self.var.as_tensor().clone()
        } else {
            self.var.as_tensor().detach()
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable.load(Ordering::Relaxed)
    }

    pub fn set_trainable(&self, on: bool) {
        self.trainable.store(on, Ordering::Relaxed);
    }

    pub fn var(&self) -> &Var {
        &self.var
    }

    pub fn set(&self, t: &Tensor) -> Result<()> {
        self.var.set(t)?;
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        self.var.dims()
    }

    pub fn to_vec_f32(&self) -> Result<Vec<f32>> {
        Ok(self
            .var
            .as_tensor()
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1()?)
    }
}
