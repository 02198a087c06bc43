//! Signal processing: mel-spectrogram extraction and F0 tracking.
//!
//! Both extractors share one frame grid: frame `i` is centered on sample
//! `i * HOP` of the (conceptually) unpadded waveform, and a waveform of `n`
//! samples yields `n / HOP + 1` frames. All audio is mono 48 kHz.

pub mod mel;
pub mod pitch;

pub use mel::{extract_mel, MelSpectrogram};
pub use pitch::{extract_f0, interpolate_unvoiced, F0_MAX, F0_MIN};

/// Required input sample rate.
pub const SAMPLE_RATE: u32 = 48_000;
/// STFT window length.
pub const WIN: usize = 1024;
/// Hop between adjacent frames.
pub const HOP: usize = 256;
/// Mel bins per frame.
pub const MEL_BINS: usize = 80;

/// Frames produced for a waveform of `n` samples: `floor(n / HOP) + 1`.
pub fn frame_count(n: usize) -> usize {
    n / HOP + 1
}

/// Zero-padded slice of `wave` of length `len` centered on `center`.
/// Used by the STFT (zero padding keeps a tone's power spectrum symmetric
/// about the tone frequency at the signal edges, where a reflected extension
/// would kink the waveform and skew the spectrum) and by the F0 tracker for
/// signals shorter than one analysis window.
pub(crate) fn zero_window(wave: &[f32], center: isize, len: usize) -> Vec<f32> {
    let n = wave.len() as isize;
    let start = center - (len as isize) / 2;
    (0..len as isize)
        .map(|o| {
            let idx = start + o;
            if (0..n).contains(&idx) {
                wave[idx as usize]
            } else {
                0.0
            }
        })
        .collect()
}

