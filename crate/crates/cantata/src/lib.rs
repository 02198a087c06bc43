//! Singing-voice-synthesis acoustic model with zero-shot style transfer.
//!
//! The crate trains and runs a non-autoregressive acoustic model that turns a
//! musical score (phonemes + notes) and a short reference recording into a mel
//! spectrogram and pitch contour in the reference's style. The moving parts:
//!
//! * [`diffusion`] — Gaussian and multinomial (categorical) diffusion
//!   processes: schedules, forward corruption, posteriors, losses, samplers.
//! * [`dsp`] — mel-spectrogram extraction and autocorrelation F0 tracking.
//! * [`score`] / [`synth`] / [`corpus`] — the musical-score types, a
//!   deterministic synthetic singing-voice generator, and corpus storage.
//! * [`nn`] — the small neural-net toolkit everything is assembled from
//!   (linear, embedding, shifted-matmul convolutions, attention, FFT blocks).
//! * [`frontend`] — lyric/note encoder, duration predictor, length regulator.
//! * [`style`] — reference encoder pre-trained as an AM-softmax classifier;
//!   produces the timbre and emotion embeddings.
//! * [`umln`] — uncertainty-modeling layer normalization.
//! * [`rsa`] — residual style adaptor: conv reference encoder, residual
//!   vector quantization with EMA codebooks, and alignment attention.
//! * [`pitch`] — dual diffusion pitch predictor (F0 + voicing).
//! * [`decoder`] — 4-step diffusion mel decoder trained with MAE + SSIM.
//! * [`metrics`] — objective metrics (timbre cosine similarity, F0 frame
//!   error) and comparison plots.
//! * [`model`] / [`train`] / [`checkpoint`] — full-model assembly, the
//!   training loop, and bit-exact checkpointing.
//!
//! Everything is seedable: all randomness flows through explicitly passed
//! ChaCha20 generators, so training runs, synthesis, and corpus generation
//! reproduce bitwise.

pub mod ckpt;
pub mod corpus;
pub mod decoder;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod frontend;
pub mod nn;
pub mod pitch;
pub mod rng;
pub mod rsa;
pub mod score;
pub mod style;
pub mod synth;
pub mod umln;

pub use error::{Error, Result};
