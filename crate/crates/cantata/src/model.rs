//! Full acoustic-model assembly.
//!
//! [`AcousticModel`] wires the score frontend, the uncertainty-modeling
//! norm, the residual style adaptor, the pitch predictor, and the mel
//! decoder into the two paths the pipeline needs:
//!
//! * [`AcousticModel::train_losses`] runs the teacher-forced training step
//!   for one sample window and returns every loss term separately, so the
//!   trainer can weight and sum them.
//! * [`AcousticModel::synthesize`] runs the free-running inference path:
//!   predicted durations, style transfer from a reference recording, pitch
//!   reverse diffusion, then mel reverse diffusion.
//!
//! The adaptor and the diffusion modules can each be swapped for simpler
//! fallbacks through the config's ablation switches; the assembly holds
//! whichever variant the config selected behind a small enum.

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha20Rng;

use crate::config::TrainConfig;
use crate::decoder::{MelDecoder, MelNorm, SimpleMelDecoder};
use crate::dsp::MelSpectrogram;
use crate::frontend::{
    duration_loss, durations_to_frames, length_regulate, ScoreFrontend, CONTENT_DIM,
};
use crate::nn::Params;
use crate::pitch::{PitchPredictor, PitchStats, SimplePitchPredictor};
use crate::rsa::{commitment_loss, style_specific_rep, RqResult, Rsa};
use crate::score::MusicalScore;
use crate::style::STYLE_DIM;
use crate::synth::SingingSample;
use crate::umln::Umln;
use crate::{invalid_input, Result};

/// Timbre and emotion embeddings for one reference recording, as produced by
/// the frozen style classifier's encoder.
pub struct StyleVectors {
    /// Unit-norm timbre embedding, `[256]`.
    pub e_t: Tensor,
    /// Unit-norm emotion embedding, `[256]`.
    pub e_e: Tensor,
}

impl StyleVectors {
    /// The summed style vector used for duration prediction and the
    /// uncertainty-modeling norm.
    pub fn combined(&self) -> Result<Tensor> {
        if self.e_t.dims() != [STYLE_DIM] || self.e_e.dims() != [STYLE_DIM] {
            return Err(crate::shape_mismatch!(
                "style vectors {:?} / {:?}",
                self.e_t.dims(),
                self.e_e.dims()
            ));
        }
        Ok((&self.e_t + &self.e_e)?)
    }
}

/// Pitch predictor variant chosen by the config.
pub enum PitchModule {
    Diffusion(PitchPredictor),
    Simple(SimplePitchPredictor),
}

/// Mel decoder variant chosen by the config.
pub enum DecoderModule {
    Diffusion(MelDecoder),
    Simple(SimpleMelDecoder),
}

/// One loss term per pipeline stage, all scalar graph tensors.
pub struct StepLosses {
    /// Log-domain duration MSE.
    pub dur: Tensor,
    /// Gaussian pitch-diffusion loss, or the fallback regressor's combined
    /// loss when diffusion pitch is ablated.
    pub gdiff: Tensor,
    /// Multinomial voicing-diffusion loss (zero under the fallback).
    pub mdiff: Tensor,
    /// Quantizer commitment loss (zero when the adaptor is ablated).
    pub commit: Tensor,
    /// Decoder mean absolute error.
    pub mae: Tensor,
    /// Decoder structural-similarity loss (zero under the fallback decoder).
    pub ssim: Tensor,
}

impl StepLosses {
    /// Weighted total: the config's lambdas against the six terms. All
    /// terms always participate so gradients exist (and are exactly zero)
    /// even when every weight vanishes.
    pub fn total(&self, cfg: &TrainConfig) -> Result<Tensor> {
        let mut acc = (&self.dur * cfg.lambda_dur)?;
        for (term, weight) in [
            (&self.gdiff, cfg.lambda_gdiff),
            (&self.mdiff, cfg.lambda_mdiff),
            (&self.commit, cfg.lambda_c),
            (&self.mae, cfg.lambda_mae),
            (&self.ssim, cfg.lambda_ssim),
        ] {
            acc = (acc + (term * weight)?)?;
        }
        Ok(acc)
    }
}

/// Deferred codebook bookkeeping from one training forward. The EMA update
/// must not run until after the optimizer step, so the forward hands back
/// what the update needs.
pub struct RsaUpdate {
    /// Detached reference embedding rows.
    pub e: Tensor,
    pub result: RqResult,
}

/// Everything synthesis produces for one score.
pub struct Synthesis {
    /// Denormalized mel spectrogram, `[frames, 80]`.
    pub mel: Tensor,
    /// Pitch contour in Hz, zero where unvoiced.
    pub f0: Vec<f32>,
    /// Voicing flags, 1 = unvoiced.
    pub uv: Vec<u8>,
    /// Per-phoneme frame counts actually used (predicted or supplied).
    pub durations: Vec<u32>,
}

impl Synthesis {
    pub fn frames(&self) -> usize {
        self.f0.len()
    }
}

/// The assembled acoustic model.
pub struct AcousticModel {
    pub frontend: ScoreFrontend,
    pub umln: Option<Umln>,
    pub rsa: Option<Rsa>,
    pub pitch: PitchModule,
    pub decoder: DecoderModule,
    dtype: DType,
    dev: Device,
}

impl AcousticModel {
    /// Build the model the config describes, registering parameters under
    /// the prefixes `frontend.`, `umln.`, `rsa.`, `pitch.`, and `dec.`.
    pub fn new(p: &mut Params, cfg: &TrainConfig) -> Result<Self> {
        let frontend = ScoreFrontend::new(p, "frontend")?;
        let umln = if cfg.use_umln { Some(Umln::new(p, "umln", CONTENT_DIM)?) } else { None };
        let rsa = if cfg.use_rsa { Some(Rsa::new(p, "rsa")?) } else { None };
        let pitch = if cfg.use_diffusion_pitch {
            let mut pp = PitchPredictor::new(p, "pitch")?;
            pp.weighted_loss = cfg.pitch_weighted_loss;
            PitchModule::Diffusion(pp)
        } else {
            PitchModule::Simple(SimplePitchPredictor::new(p, "pitch")?)
        };
        let decoder = if cfg.use_diffusion_decoder {
            DecoderModule::Diffusion(MelDecoder::new(p, "dec")?)
        } else {
            DecoderModule::Simple(SimpleMelDecoder::new(p, "dec")?)
        };
        Ok(AcousticModel {
            frontend,
            umln,
            rsa,
            pitch,
            decoder,
            dtype: p.dtype(),
            dev: p.device().clone(),
        })
    }

    /// Install the corpus normalization statistics. Both live inside
    /// parameter blocks, so checkpoints carry them automatically.
    pub fn set_stats(&self, stats: PitchStats, norm: MelNorm) -> Result<()> {
        match &self.pitch {
            PitchModule::Diffusion(pp) => pp.set_stats(stats)?,
            PitchModule::Simple(sp) => sp.set_stats(stats)?,
        }
        match &self.decoder {
            DecoderModule::Diffusion(dec) => dec.set_norm(norm),
            DecoderModule::Simple(dec) => dec.set_norm(norm),
        }
    }

    pub fn pitch_stats(&self) -> Result<PitchStats> {
        match &self.pitch {
            PitchModule::Diffusion(pp) => pp.stats(),
            PitchModule::Simple(sp) => sp.stats(),
        }
    }

    pub fn mel_norm(&self) -> Result<MelNorm> {
        match &self.decoder {
            DecoderModule::Diffusion(dec) => dec.norm(),
            DecoderModule::Simple(dec) => dec.norm(),
        }
    }

    /// Phoneme + note encodings composed into content rows, `[T_ph, 256]`.
    fn content(&self, score: &MusicalScore, training: bool, r: &mut ChaCha20Rng) -> Result<Tensor> {
        let ph = self.frontend.encode_phonemes(&score.phonemes, None, training, r)?;
        let notes = self.frontend.encode_notes(score)?;
        ScoreFrontend::compose_content(&ph, &notes)
    }

    /// Style-agnostic content for a frame window: length-regulated rows
    /// passed through the uncertainty-modeling norm (when enabled).
    fn content_window(
        &self,
        expanded: &Tensor,
        style_vec: &Tensor,
        training: bool,
        r: &mut ChaCha20Rng,
    ) -> Result<Tensor> {
        match &self.umln {
            Some(u) => Ok(u
                .forward(&expanded.unsqueeze(0)?, &style_vec.unsqueeze(0)?, training, r)?
                .squeeze(0)?),
            None => Ok(expanded.clone()),
        }
    }

    /// Style-specific rows: content enriched with aligned reference detail
    /// (when the adaptor is enabled) plus the global style vectors.
    /// Returns the rows, the commitment loss, and the deferred codebook
    /// update when there is one.
    fn style_specific(
        &self,
        e_c: &Tensor,
        reference: (&Tensor, &[f32], &[u8]),
        style: &StyleVectors,
    ) -> Result<(Tensor, Tensor, Option<RsaUpdate>)> {
        match &self.rsa {
            Some(rsa) => {
                let (ref_mel, ref_f0, ref_uv) = reference;
                let (e_d, e_raw, rq) = rsa.detailed_embedding(ref_mel, ref_f0, ref_uv)?;
                let aligned = rsa.align.forward(e_c, &e_d, true)?;
                let e_s = style_specific_rep(e_c, &aligned, &style.e_t, &style.e_e)?;
                let l_c = commitment_loss(&e_raw, &rq)?;
                Ok((e_s, l_c, Some(RsaUpdate { e: e_raw.detach(), result: rq })))
            }
            None => {
                let e_s = e_c
                    .broadcast_add(&style.e_t.unsqueeze(0)?)?
                    .broadcast_add(&style.e_e.unsqueeze(0)?)?;
                let zero = Tensor::zeros((), self.dtype, &self.dev)?;
                Ok((e_s, zero, None))
            }
        }
    }

    /// Teacher-forced training losses for one sample.
    ///
    /// Durations are scored over the whole phoneme sequence; the frame-level
    /// losses see only the window `[crop_start, crop_start + crop_len)`.
    /// The reference for the style adaptor is the target window itself:
    /// training is parallel, the reference sings exactly what the model is
    /// asked to reconstruct.
    pub fn train_losses(
        &self,
        sample: &SingingSample,
        style: &StyleVectors,
        crop_start: usize,
        crop_len: usize,
        r: &mut ChaCha20Rng,
    ) -> Result<(StepLosses, Option<RsaUpdate>)> {
        let frames = sample.mel.frames();
        if crop_len == 0 || crop_start + crop_len > frames {
            return Err(invalid_input!(
                "crop [{crop_start}, {}) outside {frames} frames",
                crop_start + crop_len
            ));
        }
        let content = self.content(&sample.score, true, r)?;
        let style_vec = style.combined()?;

        let dur_pred = self.frontend.predict_duration(&content, &style_vec, true, r)?;
        let l_dur = duration_loss(&dur_pred, &sample.phoneme_durations)?;

        let expanded = length_regulate(&content, &sample.phoneme_durations)?;
        let window = expanded.narrow(0, crop_start, crop_len)?;
        let f0 = &sample.f0[crop_start..crop_start + crop_len];
        let uv = &sample.uv[crop_start..crop_start + crop_len];
        let mel = sample.mel.slice_frames(crop_start, crop_len);
        let mel_t = mel.to_tensor(self.dtype, &self.dev)?;

        let e_c = self.content_window(&window, &style_vec, true, r)?;
        let (e_s, l_commit, update) = self.style_specific(&e_c, (&mel_t, f0, uv), style)?;

        let (l_gdiff, l_mdiff) = match &self.pitch {
            PitchModule::Diffusion(pp) => pp.train_losses(f0, uv, &e_s, &e_c, r)?,
            PitchModule::Simple(sp) => {
                let combined = sp.train_loss(f0, uv, &e_s)?;
                let zero = Tensor::zeros((), self.dtype, &self.dev)?;
                (combined, zero)
            }
        };

        let mel_unit = self.mel_norm()?.normalize(&mel_t)?;
        let (l_mae, l_ssim) = match &self.decoder {
            DecoderModule::Diffusion(dec) => {
                let f0_std = self.pitch_stats()?.target(f0, uv)?;
                let cond = dec.condition(&e_s, &f0_std, uv)?;
                dec.train_losses(&mel_unit, &cond, r)?
            }
            DecoderModule::Simple(dec) => {
                let l_mae = dec.train_loss(&mel_unit, &e_s)?;
                let zero = Tensor::zeros((), self.dtype, &self.dev)?;
                (l_mae, zero)
            }
        };

        let losses = StepLosses {
            dur: l_dur,
            gdiff: l_gdiff,
            mdiff: l_mdiff,
            commit: l_commit,
            mae: l_mae,
            ssim: l_ssim,
        };
        Ok((losses, update))
    }

    /// Free-running synthesis of one score in the reference's style.
    ///
    /// When `durations` is `None`, phoneme lengths come from the duration
    /// predictor and the output has exactly the summed rounded frame count.
    /// Passing ground-truth durations keeps the output frame-aligned with a
    /// known target, which evaluation needs.
    pub fn synthesize(
        &self,
        score: &MusicalScore,
        style: &StyleVectors,
        reference: (&MelSpectrogram, &[f32], &[u8]),
        durations: Option<&[u32]>,
        r: &mut ChaCha20Rng,
    ) -> Result<Synthesis> {
        let content = self.content(score, false, r)?;
        let style_vec = style.combined()?;

        let durs: Vec<u32> = match durations {
            Some(d) => {
                if d.len() != score.phonemes.len() {
                    return Err(crate::shape_mismatch!(
                        "{} durations for {} phonemes",
                        d.len(),
                        score.phonemes.len()
                    ));
                }
                d.to_vec()
            }
            None => {
                let pred = self.frontend.predict_duration(&content, &style_vec, false, r)?;
                durations_to_frames(&pred)?
            }
        };
        let expanded = length_regulate(&content, &durs)?;

        let e_c = self.content_window(&expanded, &style_vec, false, r)?;

        let (ref_mel, ref_f0, ref_uv) = reference;
        let ref_mel_t = ref_mel.to_tensor(self.dtype, &self.dev)?;
        let (e_s, _l_c, _update) =
            self.style_specific(&e_c, (&ref_mel_t, ref_f0, ref_uv), style)?;

        let (f0, uv) = match &self.pitch {
            PitchModule::Diffusion(pp) => pp.infer(&e_s, &e_c, r)?,
            PitchModule::Simple(sp) => sp.infer(&e_s)?,
        };

        let norm = self.mel_norm()?;
        let mel_unit = match &self.decoder {
            DecoderModule::Diffusion(dec) => {
                let f0_std = self.pitch_stats()?.target(&f0, &uv)?;
                let cond = dec.condition(&e_s, &f0_std, &uv)?;
                dec.infer(&cond, r)?
            }
            DecoderModule::Simple(dec) => dec.infer(&e_s)?,
        };
        let mel = norm.denormalize(&mel_unit)?;

        debug_assert_eq!(mel.dims2()?.0, f0.len());
        Ok(Synthesis { mel, f0, uv, durations: durs })
    }
}
