//! Feed-forward transformer blocks: self-attention plus a two-layer
//! convolutional feed-forward, each wrapped in residual + layer norm.

use candle_core::Tensor;
use rand_chacha::ChaCha20Rng;

use super::attention::MultiHeadAttention;
use super::layers::{dropout, Conv1d, LayerNorm};
use super::params::Params;
use crate::Result;

pub struct FftBlock {
    attn: MultiHeadAttention,
    conv1: Conv1d,
    conv2: Conv1d,
    ln1: LayerNorm,
    ln2: LayerNorm,
    dropout_p: f64,
}

impl FftBlock {
    pub fn new(
        p: &mut Params,
        name: &str,
        d_model: usize,
        heads: usize,
        conv_filter: usize,
        conv_kernel: usize,
        dropout_p: f64,
    ) -> Result<Self> {
        Ok(FftBlock {
            attn: MultiHeadAttention::new(p, &format!("{name}.attn"), d_model, heads)?,
            conv1: Conv1d::new(p, &format!("{name}.conv1"), d_model, conv_filter, conv_kernel, 1)?,
            conv2: Conv1d::new(p, &format!("{name}.conv2"), conv_filter, d_model, conv_kernel, 1)?,
            ln1: LayerNorm::new(p, &format!("{name}.ln1"), d_model)?,
            ln2: LayerNorm::new(p, &format!("{name}.ln2"), d_model)?,
            dropout_p,
        })
    }

    pub fn forward(&self, x: &Tensor, training: bool, r: &mut ChaCha20Rng) -> Result<Tensor> {
        self.forward_masked(x, None, training, r)
    }

    /// `mask`: `[B, T]` with 1 on valid frames. Masked positions neither
    /// receive attention nor leak into the convolutions, so a sequence's
    /// valid features do not depend on how far it was padded.
    pub fn forward_masked(
        &self,
        x: &Tensor,
        mask: Option<&Tensor>,
        training: bool,
        r: &mut ChaCha20Rng,
    ) -> Result<Tensor> {
        let apply_mask = |t: &Tensor| -> Result<Tensor> {
            match mask {
                Some(m) => Ok(t.broadcast_mul(&m.unsqueeze(candle_core::D::Minus1)?)?),
                None => Ok(t.clone()),
            }
        };
        let (a, _) = self.attn.forward_masked(x, x, mask)?;
        let x = self.ln1.forward(&(x + dropout(&a, self.dropout_p, training, r)?)?)?;
        // Mask both convolution inputs: the first because padded rows carry
        // embedding/position garbage, the second because conv1's bias makes
        // padded rows nonzero again. With both masked, taps that reach past
        // the sequence read exactly the zero padding an unpadded forward
        // would read.
        let h = self.conv1.forward(&apply_mask(&x)?)?.relu()?;
        let f = self.conv2.forward(&apply_mask(&h)?)?;
        let f = apply_mask(&f)?;
        let x = self.ln2.forward(&(&x + dropout(&f, self.dropout_p, training, r)?)?)?;
        Ok(x)
    }
}

/// A stack of identical FFT blocks.
pub struct FftStack {
    blocks: Vec<FftBlock>,
}

impl FftStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: &mut Params,
        name: &str,
        depth: usize,
        d_model: usize,
        heads: usize,
        conv_filter: usize,
        conv_kernel: usize,
        dropout_p: f64,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| {
                FftBlock::new(
                    p,
                    &format!("{name}.block{i}"),
                    d_model,
                    heads,
                    conv_filter,
                    conv_kernel,
                    dropout_p,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FftStack { blocks })
    }

    pub fn forward(&self, x: &Tensor, training: bool, r: &mut ChaCha20Rng) -> Result<Tensor> {
        self.forward_masked(x, None, training, r)
    }

    pub fn forward_masked(
        &self,
        x: &Tensor,
        mask: Option<&Tensor>,
        training: bool,
        r: &mut ChaCha20Rng,
    ) -> Result<Tensor> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward_masked(&h, mask, training, r)?;
        }
        Ok(h)
    }
}
