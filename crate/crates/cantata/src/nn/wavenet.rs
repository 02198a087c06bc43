//! Dilated gated convolution stack used by the diffusion denoisers.
//!
//! The shape follows the classic audio-generation recipe: a linear input
//! projection, layers of dilated convolutions with tanh/sigmoid gates fed by
//! a conditioner projection and a shared diffusion-step embedding, residual
//! and skip paths scaled to keep activation variance flat, and a
//! zero-initialized output head so the untrained network predicts exactly
//! zero.

use candle_core::{Tensor, D};
use candle_nn::ops::sigmoid;

use super::layers::{Conv1d, Linear};
use super::params::Params;
use super::pe::timestep_embedding;
use crate::{invalid_input, Result};

#[derive(Debug, Clone, Copy)]
pub struct WaveNetConfig {
    pub in_dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Dilation of layer `i` is `2^(i % dilation_cycle)`.
    pub dilation_cycle: u32,
    pub out_dim: usize,
    pub t_emb_dim: usize,
}

struct WnLayer {
    conv: Conv1d,
    cond: Linear,
    t_proj: Linear,
    res: Linear,
    skip: Linear,
}

pub struct WaveNet {
    cfg: WaveNetConfig,
    in_proj: Linear,
    t_fc1: Linear,
    t_fc2: Linear,
    layers: Vec<WnLayer>,
    skip_fc: Linear,
    out_fc: Linear,
}

impl WaveNet {
    pub fn new(p: &mut Params, name: &str, cfg: WaveNetConfig) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 {
            return Err(invalid_input!("denoiser needs at least one layer and channel"));
        }
        let h = cfg.hidden;
        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let dil = 1usize << (i as u32 % cfg.dilation_cycle);
            layers.push(WnLayer {
                conv: Conv1d::new(p, &format!("{name}.l{i}.conv"), h, 2 * h, 3, dil)?,
                cond: Linear::new(p, &format!("{name}.l{i}.cond"), cfg.cond_dim, 2 * h, true)?,
                t_proj: Linear::new(p, &format!("{name}.l{i}.t"), h, h, true)?,
                res: Linear::new(p, &format!("{name}.l{i}.res"), h, h, true)?,
                skip: Linear::new(p, &format!("{name}.l{i}.skip"), h, h, true)?,
            });
        }
        Ok(WaveNet {
            cfg,
            in_proj: Linear::new(p, &format!("{name}.in"), cfg.in_dim, h, true)?,
            t_fc1: Linear::new(p, &format!("{name}.t1"), cfg.t_emb_dim, h, true)?,
            t_fc2: Linear::new(p, &format!("{name}.t2"), h, h, true)?,
            layers,
            skip_fc: Linear::new(p, &format!("{name}.skip"), h, h, true)?,
            out_fc: Linear::new_zeros(p, &format!("{name}.out"), h, cfg.out_dim)?,
        })
    }

    /// Receptive field in frames.
    pub fn receptive_field(&self) -> usize {
        let span: usize = self.layers.iter().map(|l| l.conv.receptive_field() - 1).sum();
        span + 1
    }

    /// `x`: `[B, T, in_dim]`, `cond`: `[B, T, cond_dim]`, `t`: diffusion
    /// step. Returns `[B, T, out_dim]`.
    pub fn forward(&self, x: &Tensor, cond: &Tensor, t: usize) -> Result<Tensor> {
        let (_b, tx, dx) = x.dims3()?;
        let (_bc, tc, dc) = cond.dims3()?;
        if dx != self.cfg.in_dim || dc != self.cfg.cond_dim || tx != tc {
            return Err(crate::shape_mismatch!(
                "denoiser got x [.., {tx}, {dx}], cond [.., {tc}, {dc}], config {:?}",
                self.cfg
            ));
        }
        let temb = timestep_embedding(t, self.cfg.t_emb_dim, x.dtype(), x.device())?
            .reshape((1, self.cfg.t_emb_dim))?;
        let temb = self.t_fc2.forward(&self.t_fc1.forward(&temb)?.silu()?)?.silu()?;
        let mut h = self.in_proj.forward(x)?.relu()?;
        let mut skip_sum: Option<Tensor> = None;
        let sqrt_half = 0.5f64.sqrt();
        for layer in &self.layers {
            let gated_in = h.broadcast_add(&layer.t_proj.forward(&temb)?)?;
            let z = (layer.conv.forward(&gated_in)? + layer.cond.forward(cond)?)?;
            let za = z.narrow(D::Minus1, 0, self.cfg.hidden)?;
            let zb = z.narrow(D::Minus1, self.cfg.hidden, self.cfg.hidden)?;
            let g = (za.tanh()? * sigmoid(&zb)?)?;
            h = ((h + layer.res.forward(&g)?)? * sqrt_half)?;
            let s = layer.skip.forward(&g)?;
            skip_sum = Some(match skip_sum {
                Some(acc) => (acc + s)?,
                None => s,
            });
        }
        let skip = (skip_sum.expect("layers >= 1") / (self.layers.len() as f64).sqrt())?;
        Ok(self.out_fc.forward(&self.skip_fc.forward(&skip.relu()?)?.relu()?)?)
    }
}
