//! Neural-network building blocks on top of candle tensors.
//!
//! Everything here is deliberately explicit: parameters live in a named
//! registry ([`Params`]) so checkpoints and the optimizer see one flat,
//! deterministically ordered view; initialization draws from per-name seeded
//! streams so adding a layer never reshuffles another layer's init; and
//! dropout takes the caller's generator instead of hiding one.
//!
//! Convolutions are evaluated as sums of time-shifted matrix products, which
//! keeps every layer on the same well-tested matmul path for both f32
//! training and f64 gradient checking.

mod attention;
mod fft;
mod layers;
mod params;
mod pe;
mod wavenet;

pub use attention::MultiHeadAttention;
pub use fft::{FftBlock, FftStack};
pub use layers::{
    dropout, dropout_events, rotate_time, shift_time, Conv1d, Embedding, LayerNorm, Linear,
    PadMode,
};
pub use params::{Init, Params};
pub use pe::{sinusoidal_pe, timestep_embedding};
pub use wavenet::{WaveNet, WaveNetConfig};
