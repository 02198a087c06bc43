//! Multi-head scaled-dot-product attention.

use candle_core::{Tensor, D};
use candle_nn::ops::softmax;

use super::layers::Linear;
use super::params::Params;
use crate::{invalid_input, Result};

/// Standard multi-head attention with separate query and key/value inputs.
/// Non-causal: every query attends over every key.
pub struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
    d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(p: &mut Params, name: &str, d_model: usize, heads: usize) -> Result<Self> {
        if d_model % heads != 0 {
            return Err(invalid_input!("d_model {d_model} not divisible by {heads} heads"));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(p, &format!("{name}.wq"), d_model, d_model, true)?,
            wk: Linear::new(p, &format!("{name}.wk"), d_model, d_model, true)?,
            wv: Linear::new(p, &format!("{name}.wv"), d_model, d_model, true)?,
            wo: Linear::new(p, &format!("{name}.wo"), d_model, d_model, true)?,
            heads,
            d_model,
        })
    }

    /// `q_in`: `[B, Tq, D]`, `kv_in`: `[B, Tk, D]` -> `[B, Tq, D]`.
    pub fn forward(&self, q_in: &Tensor, kv_in: &Tensor) -> Result<Tensor> {
        Ok(self.forward_masked(q_in, kv_in, None)?.0)
    }

    /// As [`forward`](Self::forward), additionally returning the attention
    /// weights `[B, heads, Tq, Tk]`.
    pub fn forward_with_weights(
        &self,
        q_in: &Tensor,
        kv_in: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        self.forward_masked(q_in, kv_in, None)
    }

    /// Masked variant: `key_mask` is `[B, Tk]` with 1 on valid keys; masked
    /// keys receive zero attention weight.
    pub fn forward_masked(
        &self,
        q_in: &Tensor,
        kv_in: &Tensor,
        key_mask: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let (b, tq, d) = q_in.dims3()?;
        let (bk, tk, dk) = kv_in.dims3()?;
        if b != bk || d != self.d_model || dk != self.d_model {
            return Err(crate::shape_mismatch!(
                "attention inputs [{b},{tq},{d}] vs [{bk},{tk},{dk}], d_model {}",
                self.d_model
            ));
        }
        let dh = self.d_model / self.heads;
        let split = |t: &Tensor, len: usize| -> Result<Tensor> {
            // [B, T, D] -> [B, heads, T, dh]
            Ok(t.reshape((b, len, self.heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(&self.wq.forward(q_in)?, tq)?;
        let k = split(&self.wk.forward(kv_in)?, tk)?;
        let v = split(&self.wv.forward(kv_in)?, tk)?;
        let mut scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (dh as f64).sqrt())?;
        if let Some(mask) = key_mask {
            if mask.dims() != [b, tk] {
                return Err(crate::shape_mismatch!(
                    "key mask {:?} vs keys [{b}, {tk}]",
                    mask.dims()
                ));
            }
            // Valid keys add exactly -0.0; masked keys sink far enough that
            // their softmax weight underflows to zero.
            let penalty = mask.affine(-1.0, 1.0)?.affine(1e9, 0.0)?.neg()?;
            scores = scores.broadcast_add(&penalty.reshape((b, 1, 1, tk))?)?;
        }
        let weights = softmax(&scores, D::Minus1)?;
        let ctx = weights.matmul(&v)?; // [B, heads, Tq, dh]
        let merged = ctx.transpose(1, 2)?.contiguous()?.reshape((b, tq, self.d_model))?;
        Ok((self.wo.forward(&merged)?, weights))
    }
}
