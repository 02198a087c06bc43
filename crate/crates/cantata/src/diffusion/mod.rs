//! Shared diffusion mathematics.
//!
//! Two diffusion families drive the model:
//!
//! * **Gaussian** ([`gaussian`]): the pitch predictor's continuous branch and
//!   the mel decoder corrupt data with
//!   `x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps` and learn to undo it.
//! * **Multinomial** ([`multinomial`]): the voicing branch diffuses a
//!   categorical state by uniformly resampling a category with probability
//!   `beta_t` per step; the reverse chain runs on the closed-form posterior.
//!
//! Both share the [`schedule`] module's beta grids. The pitch predictor uses a
//! 100-step linear schedule; the mel decoder a 4-step VPSDE schedule whose
//! signal coefficient (the `alpha_t` of the x0-prediction formulation) is the
//! square root of the `abar_t` here, exposed as
//! [`schedule::DecoderSchedule::signal_coeff`] so both notations read off one
//! canonical table.

pub mod gaussian;
pub mod multinomial;
pub mod schedule;

pub use gaussian::{gaussian_forward, gaussian_loss, sample_reverse, sample_reverse_from};
pub use multinomial::{
    multinomial_forward, multinomial_loss, multinomial_marginal, multinomial_posterior,
};
pub use schedule::{DecoderSchedule, GaussianSchedule, MultinomialSchedule};
