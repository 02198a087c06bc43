//! Multinomial (categorical) diffusion.
//!
//! States are distributions over `K` categories. One forward step resamples
//! the category uniformly with probability `beta_t`, i.e. maps a distribution
//! `y` to `(1 - beta_t) y + beta_t / K`; composing steps gives the marginal
//! `abar_t y0 + (1 - abar_t) / K`. The reverse chain runs on the posterior
//!
//! `theta_post(y_t, y0) ∝ [alpha_t y_t + (1 - alpha_t)/K]
//!                      ⊙ [abar_{t-1} y0 + (1 - abar_{t-1})/K]`,
//!
//! with the model's predicted `y0` substituted at inference time.
//!
//! Slice variants serve the samplers and test oracles; the tensor loss keeps
//! gradients flowing into predicted logits.

use candle_core::{Tensor, D};
use candle_nn::ops::{log_softmax, softmax};

use super::schedule::MultinomialSchedule;
use crate::{invalid_input, Result};

const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(y: &[f64], k: usize) -> Result<()> {
    if y.len() != k {
        return Err(crate::shape_mismatch!("distribution has {} entries, want {k}", y.len()));
    }
    let sum: f64 = y.iter().sum();
    if y.iter().any(|&p| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&p) || !p.is_finite())
        || (sum - 1.0).abs() > SIMPLEX_TOL
    {
        return Err(invalid_input!("not a probability vector: {y:?} (sum {sum})"));
    }
    Ok(())
}

/// One forward step: `(1 - beta_t) y_prev + beta_t / K`.
pub fn multinomial_forward(
    y_prev: &[f64],
    beta_t: f64,
    sched: &MultinomialSchedule,
) -> Result<Vec<f64>> {
    check_simplex(y_prev, sched.k())?;
    if !(0.0..=1.0).contains(&beta_t) {
        return Err(invalid_input!("beta {beta_t} outside [0, 1]"));
    }
    let uniform = beta_t / sched.k() as f64;
    Ok(y_prev.iter().map(|&p| (1.0 - beta_t) * p + uniform).collect())
}

/// Closed-form marginal `q(y_t | y0) = abar_t y0 + (1 - abar_t) / K`.
pub fn multinomial_marginal(
    y0: &[f64],
    t: usize,
    sched: &MultinomialSchedule,
) -> Result<Vec<f64>> {
    check_simplex(y0, sched.k())?;
    let abar = sched.alpha_bar(t)?;
    let uniform = (1.0 - abar) / sched.k() as f64;
    Ok(y0.iter().map(|&p| abar * p + uniform).collect())
}

/// Posterior `q(y_{t-1} | y_t, y0)` for `t >= 2`.
///
/// `y_t` is the observed one-hot state; `y0` may be a soft prediction. The
/// unnormalized product is strictly positive whenever `beta_t < 1`, but the
/// normalization still guards against a degenerate all-zero product.
pub fn multinomial_posterior(
    y_t: &[f64],
    y0: &[f64],
    t: usize,
    sched: &MultinomialSchedule,
) -> Result<Vec<f64>> {
    check_simplex(y_t, sched.k())?;
    check_simplex(y0, sched.k())?;
    if t < 2 {
        return Err(invalid_input!("posterior needs t >= 2, got {t} (t=1 decodes y0 directly)"));
    }
    let k = sched.k() as f64;
    let alpha = sched.alpha(t)?;
    let abar_prev = sched.alpha_bar_prev(t)?;
    let mut theta: Vec<f64> = y_t
        .iter()
        .zip(y0)
        .map(|(&yt, &y0)| {
            (alpha * yt + (1.0 - alpha) / k) * (abar_prev * y0 + (1.0 - abar_prev) / k)
        })
        .collect();
    let total: f64 = theta.iter().sum();
    if total <= 0.0 {
        return Err(invalid_input!("degenerate posterior: all-zero product at t={t}"));
    }
    for p in &mut theta {
        *p /= total;
    }
    Ok(theta)
}

/// Tensor posterior over the last dimension; `y_t` and `y0` are `(..., K)`.
fn tensor_posterior(
    y_t: &Tensor,
    y0: &Tensor,
    t: usize,
    sched: &MultinomialSchedule,
) -> Result<Tensor> {
    let k = sched.k() as f64;
    let alpha = sched.alpha(t)?;
    let abar_prev = sched.alpha_bar_prev(t)?;
    let a = y_t.affine(alpha, (1.0 - alpha) / k)?;
    let b = y0.affine(abar_prev, (1.0 - abar_prev) / k)?;
    let theta = (a * b)?;
    let total = theta.sum_keepdim(D::Minus1)?;
    Ok(theta.broadcast_div(&total)?)
}

/// Diffusion loss for the categorical branch.
///
/// For `t >= 2`: `KL( q(y_{t-1} | y_t, y0_true) || q(y_{t-1} | y_t, ŷ0) )`
/// with `ŷ0 = softmax(y0_pred_logits)`, averaged over all leading dims. For
/// `t = 1`: cross-entropy of the predicted logits against `y0_true`.
/// All inputs are `(..., K)`; `y0_true` and `y_t` are one-hot.
pub fn multinomial_loss(
    y0_true: &Tensor,
    y0_pred_logits: &Tensor,
    y_t: &Tensor,
    t: usize,
    sched: &MultinomialSchedule,
) -> Result<Tensor> {
    if y0_true.shape() != y0_pred_logits.shape() || y0_true.shape() != y_t.shape() {
        return Err(crate::shape_mismatch!(
            "y0_true {:?}, logits {:?}, y_t {:?} must agree",
            y0_true.shape(),
            y0_pred_logits.shape(),
            y_t.shape()
        ));
    }
    if t == 1 {
        let logp = log_softmax(y0_pred_logits, D::Minus1)?;
        let ce = (y0_true * logp)?.sum(D::Minus1)?.neg()?;
        return Ok(ce.mean_all()?);
    }
    let q = tensor_posterior(y_t, y0_true, t, sched)?;
    let y0_soft = softmax(y0_pred_logits, D::Minus1)?;
    let p = tensor_posterior(y_t, &y0_soft, t, sched)?;
    // q log(q/p) with the 0 * log 0 = 0 convention; probabilities are floored
    // only inside the logs so zero-mass terms contribute exactly zero.
    let floor = 1e-30;
    let log_q = q.clamp(floor, f64::INFINITY)?.log()?;
    let log_p = p.clamp(floor, f64::INFINITY)?.log()?;
    let kl = (q * (log_q - log_p)?)?.sum(D::Minus1)?;
    Ok(kl.mean_all()?)
}
