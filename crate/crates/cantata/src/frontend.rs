//! Score frontend: lyric and note encoders, the duration predictor, and the
//! length regulator.
//!
//! Phonemes go through an embedding plus sinusoidal positions into a stack of
//! feed-forward transformer blocks; notes contribute a pitch embedding, a
//! note-type embedding, and a linear projection of duration, gathered per
//! phoneme through the score's alignment. Their sum is the content
//! representation. Durations are predicted per phoneme in log(frames + 1)
//! and the length regulator expands phoneme rows to frame rate.

use candle_core::{DType, Tensor};
use rand_chacha::ChaCha20Rng;

use crate::nn::{
    dropout, sinusoidal_pe, Conv1d, Embedding, FftStack, LayerNorm, Linear, Params,
};
use crate::score::{phoneme_index, MusicalScore, NoteType, PHONEME_VOCAB};
use crate::{invalid_input, Result};

/// Content channel width.
pub const CONTENT_DIM: usize = 256;
const FFT_BLOCKS: usize = 4;
const FFT_HEADS: usize = 2;
const FFT_CONV_FILTER: usize = 1024;
const FFT_CONV_KERNEL: usize = 9;
const FFT_DROPOUT: f64 = 0.1;
const MIDI_VOCAB: usize = 128;
const NOTE_TYPES: usize = 4;

fn note_type_index(t: NoteType) -> u32 {
    match t {
        NoteType::Normal => 0,
        NoteType::Rest => 1,
        NoteType::Slur => 2,
        NoteType::Grace => 3,
    }
}

/// Lyric/note encoder with duration prediction.
pub struct ScoreFrontend {
    dtype: DType,
    device: candle_core::Device,
    phoneme_emb: Embedding,
    pitch_emb: Embedding,
    type_emb: Embedding,
    dur_proj: Linear,
    fft: FftStack,
    duration: DurationPredictor,
}

impl ScoreFrontend {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        Ok(ScoreFrontend {
            dtype: p.dtype(),
            device: p.device().clone(),
            phoneme_emb: Embedding::new(
                p,
                &format!("{name}.phoneme_emb"),
                PHONEME_VOCAB.len(),
                CONTENT_DIM,
            )?,
            pitch_emb: Embedding::new(p, &format!("{name}.pitch_emb"), MIDI_VOCAB, CONTENT_DIM)?,
            type_emb: Embedding::new(p, &format!("{name}.type_emb"), NOTE_TYPES, CONTENT_DIM)?,
            dur_proj: Linear::new(p, &format!("{name}.dur_proj"), 1, CONTENT_DIM, true)?,
            fft: FftStack::new(
                p,
                &format!("{name}.fft"),
                FFT_BLOCKS,
                CONTENT_DIM,
                FFT_HEADS,
                FFT_CONV_FILTER,
                FFT_CONV_KERNEL,
                FFT_DROPOUT,
            )?,
            duration: DurationPredictor::new(p, &format!("{name}.duration"))?,
        })
    }

    /// Encode a phoneme sequence to `[T_ph, 256]`.
    ///
    /// `padded_len` pads the sequence (masked) before the transformer stack
    /// and strips the padding afterwards; valid features do not depend on it.
    pub fn encode_phonemes(
        &self,
        phonemes: &[String],
        padded_len: Option<usize>,
        training: bool,
        r: &mut ChaCha20Rng,
    ) -> Result<Tensor> {
        if phonemes.is_empty() {
            return Err(invalid_input!("empty phoneme sequence"));
        }
        let t_ph = phonemes.len();
        let ids = phonemes.iter().map(|s| phoneme_index(s).map(|i| i as u32));
        let mut ids = ids.collect::<Result<Vec<u32>>>()?;
        let padded = padded_len.unwrap_or(t_ph);
        if padded < t_ph {
            return Err(invalid_input!("padded length {padded} shorter than sequence {t_ph}"));
        }
        ids.resize(padded, 0);
        let (dev, dtype) = (self.device.clone(), self.dtype);
        let ids = Tensor::from_vec(ids, (1, padded), &dev)?;
        let mut h = self.phoneme_emb.forward(&ids)?;
        let pe = sinusoidal_pe(padded, CONTENT_DIM, 1.0, dtype, &dev)?;
        h = h.broadcast_add(&pe.unsqueeze(0)?)?;
        let mask = if padded > t_ph {
            let mut m = vec![1.0f64; t_ph];
            m.resize(padded, 0.0);
            Some(Tensor::from_vec(m, (1, padded), &dev)?.to_dtype(dtype)?)
        } else {
            None
        };
        let out = self.fft.forward_masked(&h, mask.as_ref(), training, r)?;
        Ok(out.narrow(1, 0, t_ph)?.squeeze(0)?)
    }

    /// Note features at phoneme rate, `[T_ph, 256]`: pitch embedding + type
    /// embedding + duration through a linear projection, gathered through
    /// `phoneme_to_note`.
    pub fn encode_notes(&self, score: &MusicalScore) -> Result<Tensor> {
        score.validate()?;
        let (dev, dtype) = (self.device.clone(), self.dtype);
        let t_ph = score.phonemes.len();
        let mut pitch_ids = Vec::with_capacity(t_ph);
        let mut type_ids = Vec::with_capacity(t_ph);
        let mut durs = Vec::with_capacity(t_ph);
        for &n in &score.phoneme_to_note {
            let note = &score.notes[n];
            pitch_ids.push(note.pitch as u32);
            type_ids.push(note_type_index(note.note_type));
            durs.push(note.duration);
        }
        let pitch = self.pitch_emb.forward(&Tensor::from_vec(pitch_ids, t_ph, &dev)?)?;
        let ty = self.type_emb.forward(&Tensor::from_vec(type_ids, t_ph, &dev)?)?;
        let d = Tensor::from_vec(durs, (t_ph, 1), &dev)?.to_dtype(dtype)?;
        let dur = self.dur_proj.forward(&d)?;
        Ok(((pitch + ty)? + dur)?)
    }

    /// Element-wise sum of phoneme and note features.
    pub fn compose_content(phoneme_feats: &Tensor, note_feats: &Tensor) -> Result<Tensor> {
        if phoneme_feats.dims() != note_feats.dims() {
            return Err(crate::shape_mismatch!(
                "content compose {:?} vs {:?}",
                phoneme_feats.dims(),
                note_feats.dims()
            ));
        }
        Ok((phoneme_feats + note_feats)?)
    }

    /// Per-phoneme predicted duration in log(frames + 1), `[T_ph]`.
    pub fn predict_duration(
        &self,
        content: &Tensor,
        style_vector: &Tensor,
        training: bool,
        r: &mut ChaCha20Rng,
    ) -> Result<Tensor> {
        self.duration.forward(content, style_vector, training, r)
    }
}

/// Convert a predicted log-duration row to rounded nonnegative frame counts.
pub fn durations_to_frames(log_durs: &Tensor) -> Result<Vec<u32>> {
    let v = log_durs.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(v.into_iter().map(|x| (x.exp() - 1.0).round().max(0.0) as u32).collect())
}

/// Duration-prediction training loss: MSE in the log(frames + 1) domain.
pub fn duration_loss(pred_log: &Tensor, gt_frames: &[u32]) -> Result<Tensor> {
    let n = gt_frames.len();
    if pred_log.elem_count() != n {
        return Err(crate::shape_mismatch!(
            "{} duration predictions vs {n} phonemes",
            pred_log.elem_count()
        ));
    }
    let gt: Vec<f64> = gt_frames.iter().map(|&d| (d as f64 + 1.0).ln()).collect();
    let gt = Tensor::from_vec(gt, n, pred_log.device())?.to_dtype(pred_log.dtype())?;
    let diff = (pred_log.flatten_all()? - gt)?;
    Ok(diff.sqr()?.mean_all()?)
}

/// Expand phoneme-level rows `[T_ph, C]` to frame level by repeating row `i`
/// `durations[i]` times. Zero-duration phonemes are dropped.
pub fn length_regulate(content: &Tensor, durations: &[u32]) -> Result<Tensor> {
    let (t_ph, _c) = content.dims2()?;
    if durations.len() != t_ph {
        return Err(crate::shape_mismatch!(
            "{} durations vs {t_ph} phoneme rows",
            durations.len()
        ));
    }
    let total: u32 = durations.iter().sum();
    if total == 0 {
        return Err(invalid_input!("all phoneme durations are zero"));
    }
    let mut idx = Vec::with_capacity(total as usize);
    for (i, &d) in durations.iter().enumerate() {
        for _ in 0..d {
            idx.push(i as u32);
        }
    }
    let idx = Tensor::from_vec(idx, total as usize, content.device())?;
    Ok(content.index_select(&idx, 0)?)
}

/// Two convolution layers with ReLU, layer norm and dropout, then a linear
/// head to one scalar per phoneme. Style enters as an additive bias on the
/// input.
struct DurationPredictor {
    style_proj: Linear,
    conv1: Conv1d,
    conv2: Conv1d,
    ln1: LayerNorm,
    ln2: LayerNorm,
    out: Linear,
}

const DUR_DROPOUT: f64 = 0.1;

impl DurationPredictor {
    fn new(p: &mut Params, name: &str) -> Result<Self> {
        Ok(DurationPredictor {
            style_proj: Linear::new(p, &format!("{name}.style"), CONTENT_DIM, CONTENT_DIM, true)?,
            conv1: Conv1d::new(p, &format!("{name}.conv1"), CONTENT_DIM, CONTENT_DIM, 3, 1)?,
            conv2: Conv1d::new(p, &format!("{name}.conv2"), CONTENT_DIM, CONTENT_DIM, 3, 1)?,
            ln1: LayerNorm::new(p, &format!("{name}.ln1"), CONTENT_DIM)?,
            ln2: LayerNorm::new(p, &format!("{name}.ln2"), CONTENT_DIM)?,
            out: Linear::new(p, &format!("{name}.out"), CONTENT_DIM, 1, true)?,
        })
    }

    /// `content`: `[T_ph, C]`, `style_vector`: `[C]` -> `[T_ph]`.
    fn forward(
        &self,
        content: &Tensor,
        style_vector: &Tensor,
        training: bool,
        r: &mut ChaCha20Rng,
    ) -> Result<Tensor> {
        let style = self.style_proj.forward(&style_vector.reshape((1, CONTENT_DIM))?)?;
        let h = content.broadcast_add(&style)?.unsqueeze(0)?;
        let h = dropout(&self.ln1.forward(&self.conv1.forward(&h)?.relu()?)?, DUR_DROPOUT, training, r)?;
        let h = dropout(&self.ln2.forward(&self.conv2.forward(&h)?.relu()?)?, DUR_DROPOUT, training, r)?;
        Ok(self.out.forward(&h)?.squeeze(0)?.squeeze(1)?)
    }
}
