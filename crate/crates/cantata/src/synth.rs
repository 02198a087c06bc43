//! Deterministic synthetic singing-voice generator.
//!
//! Produces fully labeled training samples: an analytic F0 contour (note
//! pitches with sigmoid transitions and sinusoidal vibrato), a harmonic-stack
//! waveform shaped by a per-singer spectral filter, and the derived
//! mel/F0/duration targets. Everything is a closed-form function of
//! `(score, params, seed)`, which is what makes the extraction oracles in the
//! test suite possible: the ground truth is known exactly.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::StyleClassLabel;
use crate::dsp::{extract_mel, frame_count, MelSpectrogram, HOP, SAMPLE_RATE};
use crate::score::{midi_to_hz, MusicalScore, NoteType};
use crate::{invalid_input, rng, Result};

/// Number of harmonics in the synthetic voice.
pub const HARMONICS: usize = 8;

/// Spectral shaping of one synthetic singer: a power-law tilt over harmonic
/// number plus one Gaussian formant peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingerFilter {
    /// Exponent of the `h^-tilt` harmonic rolloff.
    pub tilt: f64,
    /// Formant center frequency, Hz.
    pub formant_hz: f64,
    /// Formant Gaussian width, Hz.
    pub formant_width: f64,
    /// Peak gain added on top of the rolloff at the formant center.
    pub formant_gain: f64,
}

/// Controllable style parameters of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthStyleParams {
    /// Vibrato frequency, Hz; 0..=10.
    pub vibrato_rate: f64,
    /// Vibrato peak deviation, cents; 0..=200.
    pub vibrato_depth: f64,
    /// Pitch-transition width between adjacent notes, ms; 0..=300.
    pub transition_time: f64,
    pub singer_filter: SingerFilter,
    /// Global transposition, semitones.
    pub base_range: f64,
}

impl SynthStyleParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=10.0).contains(&self.vibrato_rate) {
            return Err(invalid_input!("vibrato_rate {} outside [0, 10]", self.vibrato_rate));
        }
        if !(0.0..=200.0).contains(&self.vibrato_depth) {
            return Err(invalid_input!("vibrato_depth {} outside [0, 200]", self.vibrato_depth));
        }
        if !(0.0..=300.0).contains(&self.transition_time) {
            return Err(invalid_input!(
                "transition_time {} outside [0, 300]",
                self.transition_time
            ));
        }
        Ok(())
    }
}

/// One labeled corpus sample: score, acoustic targets, and class labels.
#[derive(Debug, Clone)]
pub struct SingingSample {
    pub score: MusicalScore,
    pub mel: MelSpectrogram,
    /// Per-frame F0 in Hz; exactly 0 on unvoiced frames.
    pub f0: Vec<f32>,
    /// Per-frame voicing flag.
    pub uv: Vec<u8>,
    /// Ground-truth frames per phoneme; sums to the frame count.
    pub phoneme_durations: Vec<u32>,
    pub singer_id: u32,
    pub style: StyleClassLabel,
}

impl SingingSample {
    pub fn frames(&self) -> usize {
        self.mel.frames()
    }

    /// Check the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        self.score.validate()?;
        let n = self.mel.frames();
        if self.f0.len() != n || self.uv.len() != n {
            return Err(crate::shape_mismatch!(
                "mel {n} frames, f0 {}, uv {}",
                self.f0.len(),
                self.uv.len()
            ));
        }
        for (i, (&f, &u)) in self.f0.iter().zip(&self.uv).enumerate() {
            let voiced = u == 1;
            if voiced != (f > 0.0) {
                return Err(invalid_input!("frame {i}: f0 {f} inconsistent with uv {u}"));
            }
        }
        if self.phoneme_durations.len() != self.score.phonemes.len() {
            return Err(crate::shape_mismatch!(
                "{} phoneme durations vs {} phonemes",
                self.phoneme_durations.len(),
                self.score.phonemes.len()
            ));
        }
        let total: u32 = self.phoneme_durations.iter().sum();
        if total as usize != n {
            return Err(crate::shape_mismatch!("durations sum {total} != {n} frames"));
        }
        Ok(())
    }
}

/// Phoneme time spans: each note's duration is split equally among the
/// phonemes aligned to it.
fn phoneme_spans(score: &MusicalScore) -> Result<Vec<(f64, f64)>> {
    let groups = score.phonemes_per_note();
    let mut spans = vec![(0.0, 0.0); score.phonemes.len()];
    let mut t = 0.0;
    for (note, group) in score.notes.iter().zip(&groups) {
        if group.is_empty() {
            return Err(invalid_input!("every note needs at least one phoneme"));
        }
        let each = note.duration / group.len() as f64;
        for (k, &p) in group.iter().enumerate() {
            spans[p] = (t + k as f64 * each, t + (k + 1) as f64 * each);
        }
        t += note.duration;
    }
    Ok(spans)
}

/// The analytic contour evaluator shared by the waveform renderer and the
/// frame-level ground truth.
struct Contour<'a> {
    score: &'a MusicalScore,
    params: &'a SynthStyleParams,
    /// Note start times, plus the total at the end.
    starts: Vec<f64>,
    vibrato_phase: f64,
}

impl<'a> Contour<'a> {
    fn new(score: &'a MusicalScore, params: &'a SynthStyleParams, vibrato_phase: f64) -> Self {
        let mut starts = Vec::with_capacity(score.notes.len() + 1);
        let mut t = 0.0;
        for n in &score.notes {
            starts.push(t);
            t += n.duration;
        }
        starts.push(t);
        Self { score, params, starts, vibrato_phase }
    }

    fn note_at(&self, t: f64) -> usize {
        // Last note whose start is <= t; clamp into range.
        match self.starts[..self.score.notes.len()]
            .partition_point(|&s| s <= t)
        {
            0 => 0,
            k => k - 1,
        }
    }

    /// F0 in Hz at time `t`, or 0.0 when unvoiced (rest).
    fn f0_at(&self, t: f64) -> f64 {
        let i = self.note_at(t);
        let note = &self.score.notes[i];
        if note.note_type == NoteType::Rest {
            return 0.0;
        }
        let mut midi = note.pitch as f64;
        // Sigmoid glide across the boundary with the *next* voiced neighbor
        // (and symmetrically the previous one). Slurred targets broaden the
        // transition; rests take a hard edge.
        let w = self.params.transition_time / 1000.0;
        if w > 0.0 {
            if i + 1 < self.score.notes.len() {
                let next = &self.score.notes[i + 1];
                if next.note_type != NoteType::Rest {
                    let width = if next.note_type == NoteType::Slur { w * 1.5 } else { w };
                    let b = self.starts[i + 1];
                    let s = sigmoid(8.0 * (t - b) / width.max(1e-4));
                    midi += (next.pitch as f64 - midi) * s;
                }
            }
            if i > 0 {
                let prev = &self.score.notes[i - 1];
                if prev.note_type != NoteType::Rest {
                    let width =
                        if note.note_type == NoteType::Slur { w * 1.5 } else { w };
                    let b = self.starts[i];
                    let s = sigmoid(8.0 * (b - t) / width.max(1e-4));
                    midi += (prev.pitch as f64 - note.pitch as f64) * s;
                }
            }
        }
        let cents = self.params.vibrato_depth
            * (2.0 * std::f64::consts::PI * self.params.vibrato_rate * t + self.vibrato_phase)
                .sin();
        midi_to_hz(midi + self.params.base_range) * (cents / 1200.0).exp2()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-phoneme spectral coloring: a deterministic, phoneme-distinct scaling
/// of each harmonic, so lyrics are recoverable from the mel.
fn phoneme_color(phoneme_idx: usize, harmonic: usize) -> f64 {
    1.0 + 0.25 * ((harmonic as f64) * (1.0 + phoneme_idx as f64) * 2.399_963).sin()
}

/// Generate one fully labeled sample. Deterministic in `(score, params,
/// seed)`.
pub fn generate_sample(
    score: &MusicalScore,
    params: &SynthStyleParams,
    seed: u64,
    singer_id: u32,
    style: StyleClassLabel,
) -> Result<SingingSample> {
    generate_with_waveform(score, params, seed, singer_id, style).map(|(s, _)| s)
}

/// As [`generate_sample`], but also hands back the rendered waveform so the
/// signal-analysis oracles can probe it.
pub fn generate_with_waveform(
    score: &MusicalScore,
    params: &SynthStyleParams,
    seed: u64,
    singer_id: u32,
    style: StyleClassLabel,
) -> Result<(SingingSample, Vec<f32>)> {
    score.validate()?;
    params.validate()?;
    let mut r: ChaCha20Rng = rng::stream(seed, "synth-sample");
    let vibrato_phase = r.gen::<f64>() * 2.0 * std::f64::consts::PI;
    let contour = Contour::new(score, params, vibrato_phase);
    let spans = phoneme_spans(score)?;
    let total_secs = score.total_seconds();
    let n_samples = (total_secs * SAMPLE_RATE as f64).round() as usize;
    if n_samples == 0 {
        return Err(invalid_input!("score too short: rounds to zero samples"));
    }
    let frames = frame_count(n_samples);

    // Frame-level ground truth at frame centers.
    let mut f0 = vec![0.0f32; frames];
    let mut uv = vec![0u8; frames];
    let mut phoneme_durations = vec![0u32; score.phonemes.len()];
    for i in 0..frames {
        let tc = (i * HOP) as f64 / SAMPLE_RATE as f64;
        let hz = contour.f0_at(tc.min(total_secs - 1e-9));
        if hz > 0.0 {
            f0[i] = hz as f32;
            uv[i] = 1;
        }
        // Phoneme owning this frame: span containing tc, clamped to the last.
        let p = spans
            .iter()
            .position(|&(s, e)| tc >= s && tc < e)
            .unwrap_or(spans.len() - 1);
        phoneme_durations[p] += 1;
    }

    // Harmonic-stack waveform with accumulated phase, amplitude shaped by
    // the singer filter and the per-phoneme color, with 5 ms cosine edges
    // around voiced segments.
    let sf = &params.singer_filter;
    let mut wave = vec![0.0f32; n_samples];
    let mut phases = [0.0f64; HARMONICS];
    let edge = (0.005 * SAMPLE_RATE as f64) as usize;
    // Precompute per-sample phoneme index and voicing edges.
    let mut seg_start = vec![0usize; n_samples];
    let mut seg_end = vec![n_samples; n_samples];
    {
        let mut run_start = 0usize;
        let mut prev_voiced = false;
        for s in 0..=n_samples {
            let voiced = if s < n_samples {
                contour.f0_at(s as f64 / SAMPLE_RATE as f64) > 0.0
            } else {
                false
            };
            if voiced && !prev_voiced {
                run_start = s;
            }
            if !voiced && prev_voiced {
                for item in seg_start.iter_mut().take(s).skip(run_start) {
                    *item = run_start;
                }
                for item in seg_end.iter_mut().take(s).skip(run_start) {
                    *item = s;
                }
            }
            prev_voiced = voiced;
        }
    }
    for s in 0..n_samples {
        let t = s as f64 / SAMPLE_RATE as f64;
        let hz = contour.f0_at(t);
        if hz <= 0.0 {
            continue;
        }
        let p_idx = spans
            .iter()
            .position(|&(a, b)| t >= a && t < b)
            .unwrap_or(spans.len() - 1);
        let env = {
            let into = s - seg_start[s];
            let left = seg_end[s] - s;
            let mut e = 1.0f64;
            if into < edge {
                e *= 0.5 - 0.5 * (std::f64::consts::PI * into as f64 / edge as f64).cos();
            }
            if left < edge {
                e *= 0.5 - 0.5 * (std::f64::consts::PI * left as f64 / edge as f64).cos();
            }
            e
        };
        let mut acc = 0.0f64;
        for (h, phase) in phases.iter_mut().enumerate() {
            let hn = (h + 1) as f64;
            *phase += 2.0 * std::f64::consts::PI * hn * hz / SAMPLE_RATE as f64;
            let f = hn * hz;
            let formant = sf.formant_gain
                * (-((f - sf.formant_hz) * (f - sf.formant_hz))
                    / (2.0 * sf.formant_width * sf.formant_width))
                    .exp();
            let amp = hn.powf(-sf.tilt) * (1.0 + formant) * phoneme_color(p_idx, h + 1);
            acc += amp * phase.sin();
        }
        wave[s] = (env * acc) as f32;
    }
    let peak = wave.iter().fold(0.0f32, |m, &x| m.max(x.abs()));
    if peak > 0.0 {
        let g = 0.85 / peak;
        for x in &mut wave {
            *x *= g;
        }
    }

    let mel = extract_mel(&wave, SAMPLE_RATE)?;
    debug_assert_eq!(mel.frames(), frames);
    let sample =
        SingingSample { score: score.clone(), mel, f0, uv, phoneme_durations, singer_id, style };
    sample.validate()?;
    Ok((sample, wave))
}
