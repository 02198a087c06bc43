//! Core layers: linear, embedding, layer norm, shifted-matmul convolution,
//! and explicitly seeded dropout.

use candle_core::{Tensor, Var, D};
use rand_chacha::ChaCha20Rng;

use super::params::{Init, Params};
use crate::{invalid_input, rng, Result};

/// Fully connected layer, `y = x W^T + b`.
pub struct Linear {
    w: Var,
    b: Option<Var>,
}

impl Linear {
    pub fn new(p: &mut Params, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let std = (1.0 / d_in as f64).sqrt();
        let b = if bias { Some(Init::Zeros) } else { None };
        Self::with_init(p, name, d_in, d_out, Init::Normal(std), b)
    }

    /// Explicit initializers, for layers whose starting point is part of the
    /// model contract (identity gains, zeroed heads).
    pub fn with_init(
        p: &mut Params,
        name: &str,
        d_in: usize,
        d_out: usize,
        w_init: Init,
        b_init: Option<Init>,
    ) -> Result<Self> {
        let w = p.var(format!("{name}.w"), &[d_out, d_in], w_init)?;
        let b = match b_init {
            Some(init) => Some(p.var(format!("{name}.b"), &[d_out], init)?),
            None => None,
        };
        Ok(Linear { w, b })
    }

    /// Zero-initialized variant for diffusion output heads: the network's
    /// first prediction is exactly zero.
    pub fn new_zeros(p: &mut Params, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let w = p.var(format!("{name}.w"), &[d_out, d_in], Init::Zeros)?;
        let b = Some(p.var(format!("{name}.b"), &[d_out], Init::Zeros)?);
        Ok(Linear { w, b })
    }

    /// `x`: `[.., d_in]` with any number of leading dims.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.w.as_tensor().t()?)?;
        match &self.b {
            Some(b) => Ok(y.broadcast_add(b.as_tensor())?),
            None => Ok(y),
        }
    }
}

/// Lookup table mapping integer ids to vectors.
pub struct Embedding {
    table: Var,
    dim: usize,
}

impl Embedding {
    pub fn new(p: &mut Params, name: &str, vocab: usize, dim: usize) -> Result<Self> {
        let table = p.var(format!("{name}.table"), &[vocab, dim], Init::Normal(0.02))?;
        Ok(Embedding { table, dim })
    }

    /// `ids`: integer tensor `[..]`; returns `[.., dim]`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let dims = ids.dims().to_vec();
        let flat = ids.flatten_all()?;
        let picked = self.table.as_tensor().index_select(&flat, 0)?;
        let mut out_shape = dims;
        out_shape.push(self.dim);
        Ok(picked.reshape(out_shape)?)
    }
}

/// Layer normalization over the last dimension with learnable scale/shift.
pub struct LayerNorm {
    g: Var,
    b: Var,
    eps: f64,
}

impl LayerNorm {
    pub fn new(p: &mut Params, name: &str, dim: usize) -> Result<Self> {
        let g = p.var(format!("{name}.g"), &[dim], Init::Const(1.0))?;
        let b = p.var(format!("{name}.b"), &[dim], Init::Zeros)?;
        Ok(LayerNorm { g, b, eps: 1e-5 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&var.affine(1.0, self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(self.g.as_tensor())?.broadcast_add(self.b.as_tensor())?)
    }
}

/// Shift a `[B, T, C]` tensor along time: `out[t] = x[t + offset]`, zero
/// outside the valid range.
pub fn shift_time(x: &Tensor, offset: isize) -> Result<Tensor> {
    let (_b, t, _c) = x.dims3()?;
    let m = offset.unsigned_abs();
    if m == 0 {
        return Ok(x.clone());
    }
    if m >= t {
        return Ok(x.zeros_like()?);
    }
    let kept = t - m;
    let out = if offset > 0 {
        x.narrow(1, m, kept)?.pad_with_zeros(1, 0, m)?
    } else {
        x.narrow(1, 0, kept)?.pad_with_zeros(1, m, 0)?
    };
    Ok(out)
}

/// Circular shift along time: `out[t] = x[(t + offset) mod T]`.
pub fn rotate_time(x: &Tensor, offset: isize) -> Result<Tensor> {
    let (_b, t, _c) = x.dims3()?;
    let m = offset.rem_euclid(t as isize) as usize;
    if m == 0 {
        return Ok(x.clone());
    }
    let head = x.narrow(1, m, t - m)?;
    let tail = x.narrow(1, 0, m)?;
    Ok(Tensor::cat(&[&head, &tail], 1)?)
}

/// Out-of-range handling for convolution taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Positions outside the sequence read as zero.
    Zero,
    /// Positions wrap around; makes the layer exactly equivariant to tiling
    /// a sequence, which the style encoder's pooling contract relies on.
    Circular,
}

/// 1-D convolution over `[B, T, C]`, same-length output, odd kernel,
/// optional dilation. Evaluated as a sum of time-shifted matmuls.
pub struct Conv1d {
    /// `[k, c_in, c_out]`.
    w: Var,
    b: Var,
    kernel: usize,
    dilation: usize,
    pad: PadMode,
}

impl Conv1d {
    pub fn new(
        p: &mut Params,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        Self::with_pad(p, name, c_in, c_out, kernel, dilation, PadMode::Zero)
    }

    pub fn with_pad(
        p: &mut Params,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        pad: PadMode,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(invalid_input!("conv kernel must be odd, got {kernel}"));
        }
        if dilation == 0 {
            return Err(invalid_input!("conv dilation must be positive"));
        }
        let std = (1.0 / (kernel * c_in) as f64).sqrt();
        let w = p.var(format!("{name}.w"), &[kernel, c_in, c_out], Init::Normal(std))?;
        let b = p.var(format!("{name}.b"), &[c_out], Init::Zeros)?;
        Ok(Conv1d { w, b, kernel, dilation, pad })
    }

    /// Receptive field in frames: `(k - 1) * dilation + 1`.
    pub fn receptive_field(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let half = (self.kernel / 2) as isize;
        let mut acc: Option<Tensor> = None;
        for tap in 0..self.kernel {
            let offset = (tap as isize - half) * self.dilation as isize;
            let shifted = match self.pad {
                PadMode::Zero => shift_time(x, offset)?,
                PadMode::Circular => rotate_time(x, offset)?,
            };
            let w_tap = self.w.as_tensor().narrow(0, tap, 1)?.squeeze(0)?;
            let y = shifted.broadcast_matmul(&w_tap)?;
            acc = Some(match acc {
                Some(a) => (a + y)?,
                None => y,
            });
        }
        Ok(acc.expect("kernel >= 1").broadcast_add(self.b.as_tensor())?)
    }
}

thread_local! {
    static DROPOUT_EVENTS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// How many times dropout has actually masked on this thread. Inference
/// paths are expected to leave this unchanged; tests assert exactly that.
pub fn dropout_events() -> u64 {
    DROPOUT_EVENTS.with(|c| c.get())
}

/// Inverted dropout with an explicit generator; identity when not training.
pub fn dropout(x: &Tensor, p: f64, training: bool, r: &mut ChaCha20Rng) -> Result<Tensor> {
    if !training || p <= 0.0 {
        return Ok(x.clone());
    }
    if p >= 1.0 {
        return Err(invalid_input!("dropout probability {p} must be < 1"));
    }
    DROPOUT_EVENTS.with(|c| c.set(c.get() + 1));
    let n = x.elem_count();
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let mask: Vec<f64> =
        (0..n).map(|_| if rng::bernoulli(r, keep) { scale } else { 0.0 }).collect();
    let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}
