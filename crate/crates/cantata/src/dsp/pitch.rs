//! F0 tracking by normalized autocorrelation (YIN-style).
//!
//! Per frame: the cumulative-mean-normalized difference function d'(tau) over
//! a 2048-sample window centered on the frame (snapped inward at the signal
//! edges), searched across the 50–1100 Hz lag band. A frame is voiced when d'
//! dips under the periodicity threshold; the pitch lag is the *smallest* such
//! dip (first-crossing rule, which is what prevents sub-octave errors),
//! refined by parabolic interpolation on the raw difference function.
//!
//! Unvoiced frames report f0 = 0 by convention.

use super::{frame_count, zero_window, HOP, SAMPLE_RATE};
use crate::{invalid_input, Result};

/// Periodicity threshold on the normalized difference function.
pub const VOICING_THRESHOLD: f64 = 0.45;
/// Pitch search band, Hz.
pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 1100.0;

/// Analysis window: two periods of the lowest searchable pitch.
const ANALYSIS_WIN: usize = 2048;
/// Correlation span within the analysis window.
const CORR_SPAN: usize = 1024;
/// Frames quieter than this RMS are unvoiced outright.
const SILENCE_RMS: f64 = 1e-4;

/// Extract (f0, uv) on the mel frame grid. `f0[i] > 0` iff `uv[i] == 1`.
pub fn extract_f0(wave: &[f32], sample_rate: u32) -> Result<(Vec<f32>, Vec<u8>)> {
    if sample_rate != SAMPLE_RATE {
        return Err(invalid_input!(
            "sample rate {sample_rate} unsupported; extractor requires {SAMPLE_RATE}"
        ));
    }
    if wave.is_empty() {
        return Err(invalid_input!("empty waveform"));
    }
    let tau_min = (SAMPLE_RATE as f64 / F0_MAX).floor() as usize; // highest pitch
    let tau_max = (SAMPLE_RATE as f64 / F0_MIN).ceil() as usize; // lowest pitch
    debug_assert!(tau_max + CORR_SPAN <= ANALYSIS_WIN + CORR_SPAN);

    let frames = frame_count(wave.len());
    let mut f0 = vec![0.0f32; frames];
    let mut uv = vec![0u8; frames];
    let mut diff = vec![0.0f64; tau_max + 2];
    for i in 0..frames {
        let center = (i * HOP) as isize;
        // Edge frames snap the window inward instead of padding: every lag
        // pair then compares genuine samples, so boundary frames carry no
        // extension artifacts.
        let win: Vec<f32> = if wave.len() >= ANALYSIS_WIN {
            let start = (center - (ANALYSIS_WIN as isize) / 2)
                .clamp(0, (wave.len() - ANALYSIS_WIN) as isize) as usize;
            wave[start..start + ANALYSIS_WIN].to_vec()
        } else {
            zero_window(wave, center, ANALYSIS_WIN)
        };
        let rms =
            (win.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / win.len() as f64).sqrt();
        if rms < SILENCE_RMS {
            continue;
        }
        // Difference function over lags up to tau_max + 1 (the +1 feeds the
        // parabolic refinement at tau_max). Each lag's integration span is
        // centered inside the window: the pair (j, j+tau) then straddles the
        // frame center symmetrically, which cancels the first-order bias that
        // a leading-edge span picks up during pitch glides.
        for (tau, d) in diff.iter_mut().enumerate() {
            let off = (ANALYSIS_WIN - CORR_SPAN - tau) / 2;
            let mut acc = 0.0f64;
            for j in off..off + CORR_SPAN {
                let a = win[j] as f64;
                let b = win[j + tau] as f64;
                acc += (a - b) * (a - b);
            }
            *d = acc;
        }
        // Cumulative-mean normalization: d'(0) = 1, d'(tau) = d(tau) * tau /
        // sum_{s<=tau} d(s).
        let mut cum = 0.0f64;
        let mut ndiff = vec![1.0f64; diff.len()];
        for tau in 1..diff.len() {
            cum += diff[tau];
            ndiff[tau] = if cum > 0.0 { diff[tau] * tau as f64 / cum } else { 1.0 };
        }
        // First local minimum under the threshold, scanning small to large
        // lag; a sub-octave candidate at 2*tau can never win over the true
        // period's earlier dip.
        let mut best: Option<usize> = None;
        for tau in tau_min..=tau_max {
            if ndiff[tau] < VOICING_THRESHOLD
                && ndiff[tau] <= ndiff[tau - 1]
                && ndiff[tau] <= ndiff[tau + 1]
            {
                best = Some(tau);
                break;
            }
        }
        let Some(mut tau) = best else { continue };
        // The cumulative normalization tilts d' and drags its minimum to a
        // smaller lag, so refine on the raw difference function: slide to its
        // local minimum, then fit the parabola there.
        while tau > tau_min && diff[tau - 1] < diff[tau] {
            tau -= 1;
        }
        while tau < tau_max && diff[tau + 1] < diff[tau] {
            tau += 1;
        }
        let (dm, d0, dp) = (diff[tau - 1], diff[tau], diff[tau + 1]);
        let denom = dm - 2.0 * d0 + dp;
        let shift = if denom.abs() > 1e-12 { (0.5 * (dm - dp) / denom).clamp(-1.0, 1.0) } else { 0.0 };
        let period = tau as f64 + shift;
        f0[i] = (SAMPLE_RATE as f64 / period) as f32;
        uv[i] = 1;
    }
    Ok((f0, uv))
}

/// Linear interpolation of `f0` across unvoiced gaps, in place of zeros.
///
/// Leading/trailing unvoiced runs take the nearest voiced value; an
/// all-unvoiced contour comes back filled with `fallback_hz`.
pub fn interpolate_unvoiced(f0: &[f32], uv: &[u8], fallback_hz: f32) -> Vec<f32> {
    let n = f0.len();
    let voiced: Vec<usize> = (0..n).filter(|&i| uv[i] == 1).collect();
    if voiced.is_empty() {
        return vec![fallback_hz; n];
    }
    let mut out = vec![0.0f32; n];
    for i in 0..n {
        if uv[i] == 1 {
            out[i] = f0[i];
            continue;
        }
        let next = voiced.partition_point(|&v| v < i);
        out[i] = if next == 0 {
            f0[voiced[0]]
        } else if next == voiced.len() {
            f0[voiced[voiced.len() - 1]]
        } else {
            let (a, b) = (voiced[next - 1], voiced[next]);
            let w = (i - a) as f32 / (b - a) as f32;
            f0[a] * (1.0 - w) + f0[b] * w
        };
    }
    out
}
