//! Sinusoidal position and diffusion-step encodings.

use candle_core::{DType, Device, Tensor};

use crate::{invalid_input, Result};

/// Transformer positional encoding `[len, dim]`.
///
/// `pe[i, 2j] = sin(p / 10000^(2j/dim))`, `pe[i, 2j+1] = cos(...)` with
/// `p = i * position_scale`. The scale lets a sequence sampled on a coarser
/// grid (e.g. one step per 4 frames) address the same positional range as
/// its frame-rate counterpart.
pub fn sinusoidal_pe(
    len: usize,
    dim: usize,
    position_scale: f64,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    if dim % 2 != 0 {
        return Err(invalid_input!("positional encoding dim {dim} must be even"));
    }
    let mut data = vec![0.0f64; len * dim];
    for i in 0..len {
        let p = i as f64 * position_scale;
        for j in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * j as f64 / dim as f64);
            data[i * dim + 2 * j] = (p * freq).sin();
            data[i * dim + 2 * j + 1] = (p * freq).cos();
        }
    }
    Ok(Tensor::from_vec(data, (len, dim), device)?.to_dtype(dtype)?)
}

/// Diffusion-step embedding `[dim]`: half sine, half cosine, geometric
/// frequency ladder over the half-dim.
pub fn timestep_embedding(t: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    if dim % 2 != 0 {
        return Err(invalid_input!("timestep embedding dim {dim} must be even"));
    }
    let half = dim / 2;
    let mut data = vec![0.0f64; dim];
    for j in 0..half {
        let denom = if half > 1 { (half - 1) as f64 } else { 1.0 };
        let freq = 1.0 / 10000f64.powf(j as f64 / denom);
        data[j] = (t as f64 * freq).sin();
        data[half + j] = (t as f64 * freq).cos();
    }
    Ok(Tensor::from_vec(data, dim, device)?.to_dtype(dtype)?)
}
