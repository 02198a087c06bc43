//! Mel-spectrogram extraction.
//!
//! Hann-windowed STFT (window 1024, hop 256, centered zero padding), power
//! spectrum, an 80-triangle HTK-scale filterbank spanning 0 Hz to Nyquist,
//! and a floored natural log. The floor (`LOG_FLOOR_POWER`) is what silence
//! reads as: `ln(1e-5)`.

use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::{frame_count, zero_window, HOP, MEL_BINS, SAMPLE_RATE, WIN};
use crate::{invalid_input, Result};

/// Power values below this clamp to it before the log.
pub const LOG_FLOOR_POWER: f64 = 1e-5;

/// Log-amplitude mel spectrogram: `frames x 80`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    frames: usize,
}

impl MelSpectrogram {
    /// Wrap raw row-major data; length must be a multiple of 80.
    pub fn from_raw(data: Vec<f32>, frames: usize) -> Result<Self> {
        if data.len() != frames * MEL_BINS {
            return Err(crate::shape_mismatch!(
                "mel data length {} != frames {frames} * {MEL_BINS}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid_input!("mel values must be finite"));
        }
        Ok(Self { data, frames })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        MEL_BINS
    }

    /// Value at (frame, bin).
    pub fn at(&self, frame: usize, bin: usize) -> f32 {
        self.data[frame * MEL_BINS + bin]
    }

    /// Row-major backing slice.
    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    /// One frame as a slice.
    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * MEL_BINS..(i + 1) * MEL_BINS]
    }

    /// `(frames, 80)` tensor.
    pub fn to_tensor(&self, dtype: DType, dev: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.frames, MEL_BINS), dev)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Keep frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.frames);
        Self {
            data: self.data[start * MEL_BINS..(start + len) * MEL_BINS].to_vec(),
            frames: len,
        }
    }
}

/// HTK mel scale.
fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangle edge frequencies (82 points for 80 bins) from 0 Hz to Nyquist.
pub fn filterbank_edges() -> Vec<f64> {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    (0..MEL_BINS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (MEL_BINS + 1) as f64))
        .collect()
}

/// Dense filterbank: `MEL_BINS x (WIN/2 + 1)` triangle weights.
fn filterbank() -> Vec<Vec<f64>> {
    let edges = filterbank_edges();
    let n_freq = WIN / 2 + 1;
    let hz_per_bin = SAMPLE_RATE as f64 / WIN as f64;
    (0..MEL_BINS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_freq)
                .map(|k| {
                    let f = k as f64 * hz_per_bin;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

struct StftPlan {
    fft: Arc<dyn Fft<f64>>,
    hann: Vec<f64>,
    bank: Vec<Vec<f64>>,
}

impl StftPlan {
    fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(WIN);
        let hann = (0..WIN)
            .map(|i| {
                let x = std::f64::consts::PI * i as f64 / WIN as f64;
                x.sin() * x.sin()
            })
            .collect();
        Self { fft, hann, bank: filterbank() }
    }
}

/// Extract the log-mel spectrogram of a mono waveform.
pub fn extract_mel(wave: &[f32], sample_rate: u32) -> Result<MelSpectrogram> {
    if sample_rate != SAMPLE_RATE {
        return Err(invalid_input!(
            "sample rate {sample_rate} unsupported; extractor requires {SAMPLE_RATE}"
        ));
    }
    if wave.is_empty() {
        return Err(invalid_input!("empty waveform"));
    }
    let plan = StftPlan::new();
    let frames = frame_count(wave.len());
    let mut out = Vec::with_capacity(frames * MEL_BINS);
    let mut buf = vec![Complex::new(0.0f64, 0.0); WIN];
    for f in 0..frames {
        let center = (f * HOP) as isize;
        let win = zero_window(wave, center, WIN);
        for (i, (&s, &h)) in win.iter().zip(&plan.hann).enumerate() {
            buf[i] = Complex::new(s as f64 * h, 0.0);
        }
        plan.fft.process(&mut buf);
        let power: Vec<f64> = buf[..WIN / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        for tri in &plan.bank {
            let e: f64 = tri.iter().zip(&power).map(|(w, p)| w * p).sum();
            out.push(e.max(LOG_FLOOR_POWER).ln() as f32);
        }
    }
    MelSpectrogram::from_raw(out, frames)
}
