//! Uncertainty-modeled layer normalization.
//!
//! A style-conditional layer norm whose gain and bias are perturbed, during
//! training only, by Gaussian noise scaled by the batch variance of the
//! predicted gain and bias themselves. Styles that disagree across the batch
//! receive proportionally larger perturbations, which discourages the
//! downstream network from overfitting any single style direction.
//!
//! In eval mode, or when the per-call gate declines, the operator is the
//! identity on its input.

use candle_core::{Tensor, D};
use rand_chacha::ChaCha20Rng;

use crate::nn::{Init, Linear, Params};
use crate::style::STYLE_DIM;
use crate::{rng, Result};

thread_local! {
    static PERTURBATION_EVENTS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// How many times the perturbed norm has actually fired on this thread.
/// Eval-mode forwards never advance it; tests assert exactly that.
pub fn perturbation_events() -> u64 {
    PERTURBATION_EVENTS.with(|c| c.get())
}

/// Probability that a training forward applies the perturbed norm at all.
pub const UMLN_GATE_P: f64 = 0.5;
/// Added to the per-position standard deviation before dividing.
pub const UMLN_EPS: f64 = 1e-5;

pub struct Umln {
    scale_map: Linear,
    bias_map: Linear,
    pub gate_p: f64,
    pub eps: f64,
}

impl Umln {
    /// `channels` is the width of the activations to be normalized. The gain
    /// map starts as bias 1 so the operator is near-identity scaling at init.
    pub fn new(p: &mut Params, name: &str, channels: usize) -> Result<Self> {
        let std = (1.0 / STYLE_DIM as f64).sqrt();
        Ok(Umln {
            scale_map: Linear::with_init(
                p,
                &format!("{name}.scale"),
                STYLE_DIM,
                channels,
                Init::Normal(std),
                Some(Init::Const(1.0)),
            )?,
            bias_map: Linear::new(p, &format!("{name}.bias"), STYLE_DIM, channels, true)?,
            gate_p: UMLN_GATE_P,
            eps: UMLN_EPS,
        })
    }

    /// Style-predicted gain and bias, `[B, C]` from styles `[B, 256]`.
    pub fn style_scale_bias(&self, styles: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.scale_map.forward(styles)?, self.bias_map.forward(styles)?))
    }

    /// Training forward. `x`: `[B, T, C]`, `styles`: `[B, 256]`. Draws the
    /// gate and the per-channel noise from `r`; eval mode returns `x`
    /// unchanged without consuming randomness.
    pub fn forward(
        &self,
        x: &Tensor,
        styles: &Tensor,
        training: bool,
        r: &mut ChaCha20Rng,
    ) -> Result<Tensor> {
        if !training {
            return Ok(x.clone());
        }
        if !rng::bernoulli(r, self.gate_p) {
            return Ok(x.clone());
        }
        PERTURBATION_EVENTS.with(|c| c.set(c.get() + 1));
        let (_b, _t, c) = x.dims3()?;
        let eps_gamma = rng::normal_vec(r, c);
        let eps_beta = rng::normal_vec(r, c);
        self.forward_with_eps(x, styles, &eps_gamma, &eps_beta)
    }

    /// Deterministic core: normalize over the channel axis at every `(b, t)`
    /// position, then apply the uncertainty-perturbed gain and bias
    ///
    /// `gamma_um = gamma(s) + eps_gamma * Var_B[gamma(s)]`
    /// `beta_um  = beta(s)  + eps_beta  * Var_B[beta(s)]`
    ///
    /// where the variance is the biased batch variance per channel (zero for
    /// a single-sample batch) and the noise vectors are shared across the
    /// batch.
    pub fn forward_with_eps(
        &self,
        x: &Tensor,
        styles: &Tensor,
        eps_gamma: &[f64],
        eps_beta: &[f64],
    ) -> Result<Tensor> {
        let (b, _t, c) = x.dims3()?;
        let (sb, sdim) = styles.dims2()?;
        if sb != b || sdim != STYLE_DIM {
            return Err(crate::shape_mismatch!(
                "styles [{sb}, {sdim}] for activations with batch {b}"
            ));
        }
        if eps_gamma.len() != c || eps_beta.len() != c {
            return Err(crate::shape_mismatch!(
                "noise lengths {} / {} for {c} channels",
                eps_gamma.len(),
                eps_beta.len()
            ));
        }
        let (gamma, beta) = self.style_scale_bias(styles)?; // [B, C]
        let gamma_var = batch_variance(&gamma)?; // [C]
        let beta_var = batch_variance(&beta)?;
        let dev = x.device();
        let dtype = x.dtype();
        let eg = Tensor::from_vec(eps_gamma.to_vec(), c, dev)?.to_dtype(dtype)?;
        let eb = Tensor::from_vec(eps_beta.to_vec(), c, dev)?.to_dtype(dtype)?;
        let gamma_um = gamma.broadcast_add(&eg.broadcast_mul(&gamma_var)?)?; // [B, C]
        let beta_um = beta.broadcast_add(&eb.broadcast_mul(&beta_var)?)?;

        let mu = x.mean_keepdim(D::Minus1)?; // [B, T, 1]
        let centered = x.broadcast_sub(&mu)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let delta = var.sqrt()?;
        let normalized = centered.broadcast_div(&(delta + self.eps)?)?;
        let out = normalized
            .broadcast_mul(&gamma_um.unsqueeze(1)?)?
            .broadcast_add(&beta_um.unsqueeze(1)?)?;
        Ok(out)
    }
}

/// Biased variance over the batch axis of `[B, C]`, per channel. Exactly
/// zero when `B == 1`.
fn batch_variance(x: &Tensor) -> Result<Tensor> {
    let (b, c) = x.dims2()?;
    if b == 1 {
        return Ok(Tensor::zeros(c, x.dtype(), x.device())?);
    }
    let mean = x.mean_keepdim(0)?;
    Ok(x.broadcast_sub(&mean)?.sqr()?.mean(0)?)
}
