//! Noise schedules.
//!
//! A schedule fixes the per-step corruption strengths `beta_t` and everything
//! derived from them: `alpha_t = 1 - beta_t`, the cumulative products
//! `abar_t = prod_{s<=t} alpha_s`, and the posterior variance
//! `btilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t`.
//!
//! Timesteps are 1-based throughout (`t in 1..=len`), matching the usual
//! diffusion indexing; accessors reject out-of-range `t`.

use crate::{invalid_input, Result};

/// Number of steps in the pitch predictor's schedule.
pub const PITCH_STEPS: usize = 100;
/// Lower end of the pitch predictor's linear beta ramp.
pub const PITCH_BETA_MIN: f64 = 1e-4;
/// Upper end of the pitch predictor's linear beta ramp.
pub const PITCH_BETA_MAX: f64 = 0.06;

/// Gaussian diffusion schedule: betas plus derived quantities.
#[derive(Debug, Clone)]
pub struct GaussianSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
}

impl GaussianSchedule {
    /// Schedule from explicit betas. Each beta must lie in `[0, 1)`; the
    /// linear constructors additionally keep betas strictly positive.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(invalid_input!("schedule needs at least one step"));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(0.0..1.0).contains(&b) || !b.is_finite() {
                return Err(invalid_input!("beta_{} = {b} outside [0, 1)", i + 1));
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        // btilde_1 = 0 by convention (abar_0 = 1).
        let mut posterior_vars = Vec::with_capacity(betas.len());
        for t in 1..=betas.len() {
            let prev = if t == 1 { 1.0 } else { alpha_bars[t - 2] };
            posterior_vars.push((1.0 - prev) / (1.0 - alpha_bars[t - 1]) * betas[t - 1]);
        }
        Ok(Self { betas, alphas, alpha_bars, posterior_vars })
    }

    /// Linear beta ramp from `beta_min` to `beta_max` over `steps` steps.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid_input!("schedule needs at least one step"));
        }
        if beta_min <= 0.0 {
            return Err(invalid_input!("linear schedule needs beta_min > 0, got {beta_min}"));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// The pitch predictor's schedule: 100 steps, linear 1e-4 to 0.06.
    pub fn pitch_default() -> Self {
        Self::linear(PITCH_STEPS, PITCH_BETA_MIN, PITCH_BETA_MAX)
            .expect("default schedule constants are valid")
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.betas.len() {
            return Err(invalid_input!("timestep {t} outside 1..={}", self.betas.len()));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alphas[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    /// `abar_{t-1}`, with `abar_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(if t == 1 { 1.0 } else { self.alpha_bars[t - 2] })
    }

    /// Posterior variance `btilde_t`; zero at `t = 1`.
    pub fn posterior_var(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.posterior_vars[t - 1])
    }

    /// Weight of the noise-prediction loss at step `t`:
    /// `beta_t^2 / (2 sigma_t^2 alpha_t (1 - abar_t))` with `sigma_t^2 =
    /// btilde_t`. `btilde_1` is zero, which would make the weight singular, so
    /// the weight alone substitutes `sigma_1^2 := beta_1` (the usual boundary
    /// convention); the sampler still injects no noise at `t = 1`.
    pub fn loss_weight(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        let beta = self.betas[t - 1];
        let alpha = self.alphas[t - 1];
        let abar = self.alpha_bars[t - 1];
        let sigma2 = if t == 1 { beta } else { self.posterior_vars[t - 1] };
        Ok(beta * beta / (2.0 * sigma2 * alpha * (1.0 - abar)))
    }

    /// Mean and variance of the Gaussian posterior `q(x_{t-1} | x_t, x0)`:
    /// mean is `c0 * x0 + ct * x_t` with the returned coefficients, variance
    /// is `btilde_t`.
    pub fn posterior_coeffs(&self, t: usize) -> Result<(f64, f64, f64)> {
        self.check_t(t)?;
        let beta = self.betas[t - 1];
        let abar = self.alpha_bars[t - 1];
        let abar_prev = if t == 1 { 1.0 } else { self.alpha_bars[t - 2] };
        let c0 = abar_prev.sqrt() * beta / (1.0 - abar);
        let ct = self.alphas[t - 1].sqrt() * (1.0 - abar_prev) / (1.0 - abar);
        Ok((c0, ct, self.posterior_vars[t - 1]))
    }
}

/// Mel decoder schedule: 4 steps with VPSDE-derived betas.
///
/// The discretization follows the variance-preserving SDE with
/// `beta_min = 0.1`, `beta_max = 20` sampled at 4 steps:
/// `beta_i = 1 - exp(-beta_min/4 - (beta_max - beta_min) (2i - 1) / 32)`.
#[derive(Debug, Clone)]
pub struct DecoderSchedule {
    base: GaussianSchedule,
}

/// Number of steps in the decoder's schedule.
pub const DECODER_STEPS: usize = 4;
const DECODER_BETA_MIN: f64 = 0.1;
const DECODER_BETA_MAX: f64 = 20.0;

impl DecoderSchedule {
    pub fn vpsde4() -> Self {
        let n = DECODER_STEPS as f64;
        let betas = (1..=DECODER_STEPS)
            .map(|i| {
                let i = i as f64;
                1.0 - (-DECODER_BETA_MIN / n
                    - (DECODER_BETA_MAX - DECODER_BETA_MIN) * (2.0 * i - 1.0) / (2.0 * n * n))
                    .exp()
            })
            .collect();
        Self { base: GaussianSchedule::from_betas(betas).expect("VPSDE betas are valid") }
    }

    /// The underlying beta/abar table; shared with the Gaussian math.
    pub fn base(&self) -> &GaussianSchedule {
        &self.base
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Signal coefficient of the x0-prediction formulation,
    /// `sqrt(abar_t)`: the decoder corrupts with
    /// `x_t = signal_coeff(t) * x0 + sqrt(1 - signal_coeff(t)^2) * eps`,
    /// which is exactly the Gaussian forward marginal on the same table.
    pub fn signal_coeff(&self, t: usize) -> Result<f64> {
        Ok(self.base.alpha_bar(t)?.sqrt())
    }
}

/// Categorical diffusion schedule: a beta grid plus the category count `K`.
///
/// `beta_t` is the probability that a step resamples the category uniformly;
/// `abar_t` then gives the closed-form marginal
/// `q(y_t | y0) = C(abar_t y0 + (1 - abar_t) / K)`.
#[derive(Debug, Clone)]
pub struct MultinomialSchedule {
    k: usize,
    base: GaussianSchedule,
}

impl MultinomialSchedule {
    pub fn from_betas(k: usize, betas: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(invalid_input!("need at least 2 categories, got {k}"));
        }
        Ok(Self { k, base: GaussianSchedule::from_betas(betas)? })
    }

    /// The voicing schedule: K categories on the pitch predictor's beta grid.
    pub fn pitch_default(k: usize) -> Result<Self> {
        Ok(Self { k, base: GaussianSchedule::pitch_default() })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.base.beta(t)
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.base.alpha(t)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.base.alpha_bar(t)
    }

    pub fn alpha_bar_prev(&self, t: usize) -> Result<f64> {
        self.base.alpha_bar_prev(t)
    }
}
