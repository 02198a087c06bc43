//! Style encoder: a compact classifier producing timbre and emotion
//! embeddings, pre-trained with additive-margin softmax.
//!
//! The encoder maps a mel to two unit-norm 256-vectors (E_t, E_e) through a
//! convolutional front end, a small transformer, mean pooling over time, and
//! two fully connected heads. Its convolutions use circular time padding,
//! which makes the conv-plus-pooling path exactly invariant to tiling a mel
//! along time; only the transformer stage sees absolute sequence extent.
//!
//! Pre-training classifies singer identity through E_t and emotion through
//! E_e. Afterwards the encoder is frozen and serves downstream both as the
//! conditioning source and as the measurement embedding for the timbre
//! similarity metric.

use candle_core::{DType, Tensor, Var, D};
use candle_nn::ops::log_softmax;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand_chacha::ChaCha20Rng;

use crate::nn::{Conv1d, FftStack, Init, Linear, PadMode, Params};
use crate::synth::SingingSample;
use crate::{invalid_input, rng, Result};

/// Embedding width for both heads.
pub const STYLE_DIM: usize = 256;
/// Minimum mel frames the encoder accepts.
pub const MIN_FRAMES: usize = 8;
/// Additive margin.
pub const AM_MARGIN: f64 = 0.2;
/// Logit scale.
pub const AM_SCALE: f64 = 30.0;

const ENC_WIDTH: usize = 128;
const CONV_LAYERS: usize = 2;
const CONV_KERNEL: usize = 5;
const TRANSFORMER_BLOCKS: usize = 2;
const TRANSFORMER_HEADS: usize = 2;
const TRANSFORMER_FILTER: usize = 256;
const TRANSFORMER_KERNEL: usize = 3;
const DROPOUT: f64 = 0.1;

/// L2-normalize the last dimension.
pub fn unit_norm(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    Ok(x.broadcast_div(&norm.clamp(1e-12, f64::INFINITY)?)?)
}

pub struct StyleEncoder {
    convs: Vec<Conv1d>,
    transformer: FftStack,
    fc_t: Linear,
    fc_e: Linear,
}

impl StyleEncoder {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        let mut convs = Vec::with_capacity(CONV_LAYERS);
        let mut c_in = crate::dsp::MEL_BINS;
        for i in 0..CONV_LAYERS {
            convs.push(Conv1d::with_pad(
                p,
                &format!("{name}.conv{i}"),
                c_in,
                ENC_WIDTH,
                CONV_KERNEL,
                1,
                PadMode::Circular,
            )?);
            c_in = ENC_WIDTH;
        }
        Ok(StyleEncoder {
            convs,
            transformer: FftStack::new(
                p,
                &format!("{name}.transformer"),
                TRANSFORMER_BLOCKS,
                ENC_WIDTH,
                TRANSFORMER_HEADS,
                TRANSFORMER_FILTER,
                TRANSFORMER_KERNEL,
                DROPOUT,
            )?,
            fc_t: Linear::new(p, &format!("{name}.fc_t"), ENC_WIDTH, STYLE_DIM, true)?,
            fc_e: Linear::new(p, &format!("{name}.fc_e"), ENC_WIDTH, STYLE_DIM, true)?,
        })
    }

    /// Encode one mel `[T, 80]` to unit-norm `(E_t, E_e)`, each `[256]`.
    pub fn encode(
        &self,
        mel: &Tensor,
        training: bool,
        r: &mut ChaCha20Rng,
    ) -> Result<(Tensor, Tensor)> {
        self.encode_inner(mel, training, true, r)
    }

    /// Pooling-contract probe: identical to [`encode`](Self::encode) with the
    /// transformer stage bypassed, leaving only the tiling-equivariant conv
    /// path plus mean pooling.
    pub fn encode_without_transformer(&self, mel: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut r = rng::seeded(0);
        self.encode_inner(mel, false, false, &mut r)
    }

    fn encode_inner(
        &self,
        mel: &Tensor,
        training: bool,
        use_transformer: bool,
        r: &mut ChaCha20Rng,
    ) -> Result<(Tensor, Tensor)> {
        let (t, bins) = mel.dims2()?;
        if bins != crate::dsp::MEL_BINS {
            return Err(crate::shape_mismatch!("mel has {bins} bins"));
        }
        if t < MIN_FRAMES {
            return Err(invalid_input!("mel too short: {t} frames, need {MIN_FRAMES}"));
        }
        let mut h = mel.unsqueeze(0)?;
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        if use_transformer {
            h = self.transformer.forward(&h, training, r)?;
        }
        let pooled = h.mean(1)?; // [1, width]
        let e_t = unit_norm(&self.fc_t.forward(&pooled)?)?.squeeze(0)?;
        let e_e = unit_norm(&self.fc_e.forward(&pooled)?)?.squeeze(0)?;
        Ok((e_t, e_e))
    }
}

/// Additive-margin softmax head over unit-norm embeddings.
pub struct AmSoftmaxHead {
    /// `[dim, classes]`, columns renormalized after every optimizer step.
    w: Var,
    pub margin: f64,
    pub scale: f64,
    classes: usize,
}

impl AmSoftmaxHead {
    pub fn new(p: &mut Params, name: &str, dim: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(invalid_input!("classifier needs at least 2 classes"));
        }
        let w = p.var(format!("{name}.w"), &[dim, classes], Init::Normal(0.05))?;
        let head = AmSoftmaxHead { w, margin: AM_MARGIN, scale: AM_SCALE, classes };
        head.renormalize_columns()?;
        Ok(head)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Replace the weight matrix (`[dim, classes]`); columns are renormalized.
    pub fn set_weight(&self, w: &Tensor) -> Result<()> {
        if w.dims() != self.w.as_tensor().dims() {
            return Err(crate::shape_mismatch!(
                "head weight {:?} vs {:?}",
                w.dims(),
                self.w.as_tensor().dims()
            ));
        }
        self.w.set(&w.to_dtype(self.w.as_tensor().dtype())?)?;
        self.renormalize_columns()
    }

    /// Project columns back to unit norm (call after each optimizer step).
    pub fn renormalize_columns(&self) -> Result<()> {
        let w = self.w.as_tensor();
        let norms = w.sqr()?.sum_keepdim(0)?.sqrt()?.clamp(1e-12, f64::INFINITY)?;
        self.w.set(&w.broadcast_div(&norms)?)?;
        Ok(())
    }

    /// Cosine similarities `[B, classes]` for unit-norm embeddings `[B, dim]`.
    pub fn cosines(&self, emb: &Tensor) -> Result<Tensor> {
        Ok(emb.matmul(self.w.as_tensor())?)
    }

    /// Mean AM-softmax loss over the batch:
    /// `-log( e^{s(cos_y - m)} / (e^{s(cos_y - m)} + sum_{j!=y} e^{s cos_j}) )`.
    pub fn loss(&self, emb: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let (b, _dim) = emb.dims2()?;
        if labels.len() != b {
            return Err(crate::shape_mismatch!("{} labels for batch {b}", labels.len()));
        }
        for &l in labels {
            if l >= self.classes {
                return Err(invalid_input!("label {l} out of {} classes", self.classes));
            }
        }
        let cos = self.cosines(emb)?;
        // Subtract the margin on the target coordinate only.
        let mut onehot = vec![0.0f64; b * self.classes];
        for (i, &l) in labels.iter().enumerate() {
            onehot[i * self.classes + l] = 1.0;
        }
        let onehot =
            Tensor::from_vec(onehot, (b, self.classes), emb.device())?.to_dtype(emb.dtype())?;
        let logits = ((cos - (&onehot * self.margin)?)? * self.scale)?;
        let logp = log_softmax(&logits, D::Minus1)?;
        let picked = (logp * onehot)?.sum(D::Minus1)?;
        Ok(picked.neg()?.mean_all()?)
    }

    /// Argmax class per row, margin-free.
    pub fn predict(&self, emb: &Tensor) -> Result<Vec<usize>> {
        let cos = self.cosines(emb)?.to_dtype(DType::F64)?;
        let rows = cos.to_vec2::<f64>()?;
        Ok(rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect())
    }
}

/// Uniform-logit value of the AM-softmax loss: what a head scores when every
/// cosine is equal. For `margin = 0` this is `ln(classes)`; the margin term
/// raises it to `ln(1 + (K-1) e^{s m})`.
pub fn am_softmax_uniform_logit_loss(classes: usize, margin: f64, scale: f64) -> f64 {
    (1.0 + (classes as f64 - 1.0) * (scale * margin).exp()).ln()
}

/// Encoder plus the two classification heads used in pre-training.
pub struct StyleClassifier {
    pub encoder: StyleEncoder,
    pub head_timbre: AmSoftmaxHead,
    pub head_emotion: AmSoftmaxHead,
}

impl StyleClassifier {
    pub fn new(p: &mut Params) -> Result<Self> {
        Ok(StyleClassifier {
            encoder: StyleEncoder::new(p, "style.encoder")?,
            head_timbre: AmSoftmaxHead::new(
                p,
                "style.head_t",
                STYLE_DIM,
                crate::corpus::NUM_SINGERS as usize,
            )?,
            head_emotion: AmSoftmaxHead::new(p, "style.head_e", STYLE_DIM, 2)?,
        })
    }

    /// Encode a batch of mels to stacked `(E_t, E_e)`, each `[B, 256]`.
    pub fn encode_batch(
        &self,
        mels: &[Tensor],
        training: bool,
        r: &mut ChaCha20Rng,
    ) -> Result<(Tensor, Tensor)> {
        let mut ets = Vec::with_capacity(mels.len());
        let mut ees = Vec::with_capacity(mels.len());
        for mel in mels {
            let (et, ee) = self.encoder.encode(mel, training, r)?;
            ets.push(et);
            ees.push(ee);
        }
        Ok((Tensor::stack(&ets, 0)?, Tensor::stack(&ees, 0)?))
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    /// Optimizer steps.
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Mels longer than this are cropped to a random window during training.
    pub crop_frames: usize,
    /// Every n-th sample (by corpus order) is held out for accuracy.
    pub holdout_every: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { steps: 400, batch: 8, lr: 2e-4, crop_frames: 128, holdout_every: 5 }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClassifierReport {
    pub steps: usize,
    pub final_loss: f64,
    pub timbre_accuracy: f64,
    pub emotion_accuracy: f64,
    pub holdout_size: usize,
}

/// Pre-train the classifier on a labeled corpus.
///
/// Timbre labels are singer ids; emotion labels come from each sample's
/// style class. A deterministic every-n-th split provides held-out accuracy.
/// The run is fully seeded: batch order, crops, dropout, and init all derive
/// from `seed`.
pub fn pretrain_classifier(
    samples: &[SingingSample],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(Params, StyleClassifier, ClassifierReport)> {
    let singers: std::collections::BTreeSet<u32> =
        samples.iter().map(|s| s.singer_id).collect();
    let emotions: std::collections::BTreeSet<usize> =
        samples.iter().map(|s| s.style.emotion.index()).collect();
    if singers.len() < 2 || emotions.len() < 2 {
        return Err(invalid_input!(
            "corpus must contain at least 2 timbre and 2 emotion classes, got {} and {}",
            singers.len(),
            emotions.len()
        ));
    }
    if cfg.holdout_every < 2 || samples.len() < cfg.holdout_every {
        return Err(invalid_input!(
            "need at least {} samples for a 1-in-{} held-out split",
            cfg.holdout_every,
            cfg.holdout_every
        ));
    }

    let mut p = Params::new(DType::F32, &candle_core::Device::Cpu, seed);
    let model = StyleClassifier::new(&mut p)?;
    let mut opt = AdamW::new(
        p.all_vars(),
        ParamsAdamW { lr: cfg.lr, ..Default::default() },
    )?;
    let mut r = rng::stream(seed, "classifier");

    let train_idx: Vec<usize> =
        (0..samples.len()).filter(|i| i % cfg.holdout_every != 0).collect();
    let holdout_idx: Vec<usize> =
        (0..samples.len()).filter(|i| i % cfg.holdout_every == 0).collect();

    let dev = p.device().clone();
    let mut final_loss = f64::NAN;
    for _step in 0..cfg.steps {
        let mut mels = Vec::with_capacity(cfg.batch);
        let mut t_labels = Vec::with_capacity(cfg.batch);
        let mut e_labels = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let s = &samples[train_idx[rng::uniform_usize(&mut r, train_idx.len())]];
            let frames = s.mel.frames();
            let mel = if frames > cfg.crop_frames {
                let start = rng::uniform_usize(&mut r, frames - cfg.crop_frames + 1);
                s.mel.slice_frames(start, cfg.crop_frames)
            } else {
                s.mel.clone()
            };
            mels.push(mel.to_tensor(DType::F32, &dev)?);
            t_labels.push(s.singer_id as usize);
            e_labels.push(s.style.emotion.index());
        }
        let (et, ee) = model.encode_batch(&mels, true, &mut r)?;
        let loss = (model.head_timbre.loss(&et, &t_labels)?
            + model.head_emotion.loss(&ee, &e_labels)?)?;
        final_loss = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !final_loss.is_finite() {
            return Err(crate::Error::Numerical(format!(
                "classifier loss became {final_loss} at step {_step}"
            )));
        }
        opt.backward_step(&loss)?;
        model.head_timbre.renormalize_columns()?;
        model.head_emotion.renormalize_columns()?;
    }

    let (t_acc, e_acc) = classifier_accuracy(&model, samples, &holdout_idx, &dev)?;
    let report = ClassifierReport {
        steps: cfg.steps,
        final_loss,
        timbre_accuracy: t_acc,
        emotion_accuracy: e_acc,
        holdout_size: holdout_idx.len(),
    };
    Ok((p, model, report))
}

/// Eval-mode accuracy of both heads over the given sample indices.
pub fn classifier_accuracy(
    model: &StyleClassifier,
    samples: &[SingingSample],
    indices: &[usize],
    dev: &candle_core::Device,
) -> Result<(f64, f64)> {
    let mut r = rng::seeded(0);
    let mut t_hits = 0usize;
    let mut e_hits = 0usize;
    for &i in indices {
        let s = &samples[i];
        let mel = s.mel.to_tensor(DType::F32, dev)?;
        let (et, ee) = model.encoder.encode(&mel, false, &mut r)?;
        let t_pred = model.head_timbre.predict(&et.unsqueeze(0)?)?[0];
        let e_pred = model.head_emotion.predict(&ee.unsqueeze(0)?)?[0];
        if t_pred == s.singer_id as usize {
            t_hits += 1;
        }
        if e_pred == s.style.emotion.index() {
            e_hits += 1;
        }
    }
    let n = indices.len().max(1) as f64;
    Ok((t_hits as f64 / n, e_hits as f64 / n))
}
