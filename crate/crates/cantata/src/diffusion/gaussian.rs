//! Gaussian diffusion: forward corruption, the weighted noise-prediction
//! loss, and ancestral sampling.

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha20Rng;

use super::schedule::GaussianSchedule;
use crate::{rng, Error, Result};

/// Closed-form forward marginal:
/// `x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps`.
pub fn gaussian_forward(
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &GaussianSchedule,
) -> Result<Tensor> {
    if x0.shape() != eps.shape() {
        return Err(crate::shape_mismatch!(
            "x0 {:?} vs eps {:?}",
            x0.shape(),
            eps.shape()
        ));
    }
    let abar = sched.alpha_bar(t)?;
    let signal = (x0 * abar.sqrt())?;
    let noise = (eps * (1.0 - abar).sqrt())?;
    Ok((signal + noise)?)
}

/// Noise-prediction loss.
///
/// `weighted = true` evaluates the schedule-weighted objective: the squared
/// L2 norm of `eps - eps_pred` over all non-batch dimensions, scaled by
/// [`GaussianSchedule::loss_weight`], then averaged over the batch (dim 0).
/// `weighted = false` is the common simplified objective: a plain mean of
/// squared error over every element.
pub fn gaussian_loss(
    eps: &Tensor,
    eps_pred: &Tensor,
    t: usize,
    sched: &GaussianSchedule,
    weighted: bool,
) -> Result<Tensor> {
    if eps.shape() != eps_pred.shape() {
        return Err(crate::shape_mismatch!(
            "eps {:?} vs eps_pred {:?}",
            eps.shape(),
            eps_pred.shape()
        ));
    }
    let sq = (eps - eps_pred)?.sqr()?;
    if weighted {
        let batch = sq.dim(0)?;
        let per_sample = sq.reshape((batch, sq.elem_count() / batch))?.sum(1)?;
        Ok((per_sample.mean(0)? * sched.loss_weight(t)?)?)
    } else {
        Ok(sq.mean_all()?)
    }
}

/// True if the tensor contains any NaN.
pub fn has_nan(t: &Tensor) -> Result<bool> {
    let nan_count = t.ne(t)?.to_dtype(DType::F32)?.sum_all()?.to_scalar::<f32>()?;
    Ok(nan_count > 0.0)
}

/// Ancestral reverse sampling from a fresh `x_T ~ N(0, I)` draw.
///
/// `eps_predictor(x_t, t)` supplies the model's noise estimate; conditioning
/// lives inside the closure. Returns the `x_0` sample.
pub fn sample_reverse<F>(
    shape: &[usize],
    dtype: DType,
    dev: &Device,
    eps_predictor: F,
    sched: &GaussianSchedule,
    rng_: &mut ChaCha20Rng,
) -> Result<Tensor>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    let x_t = rng::normal_tensor(rng_, shape, dtype, dev)?;
    sample_reverse_from(x_t, eps_predictor, sched, rng_)
}

/// Ancestral reverse sampling from a caller-supplied `x_T`.
///
/// Iterates `t = T..1` with
/// `x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_pred) / sqrt(alpha_t)
///            + sigma_t * z`,
/// where `sigma_t^2 = btilde_t`; the final step adds no noise
/// (`btilde_1 = 0`).
pub fn sample_reverse_from<F>(
    mut x_t: Tensor,
    mut eps_predictor: F,
    sched: &GaussianSchedule,
    rng_: &mut ChaCha20Rng,
) -> Result<Tensor>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    let shape: Vec<usize> = x_t.dims().to_vec();
    let dtype = x_t.dtype();
    let dev = x_t.device().clone();
    for t in (1..=sched.len()).rev() {
        let eps_pred = eps_predictor(&x_t, t)?;
        if has_nan(&eps_pred)? {
            return Err(Error::Numerical(format!(
                "NaN in noise prediction at reverse step t={t}"
            )));
        }
        let beta = sched.beta(t)?;
        let abar = sched.alpha_bar(t)?;
        let alpha = sched.alpha(t)?;
        let mean = ((x_t - (eps_pred * (beta / (1.0 - abar).sqrt()))?)? / alpha.sqrt())?;
        let sigma = sched.posterior_var(t)?.sqrt();
        x_t = if sigma > 0.0 {
            let z = rng::normal_tensor(rng_, &shape, dtype, &dev)?;
            (mean + (z * sigma)?)?
        } else {
            mean
        };
    }
    Ok(x_t)
}
