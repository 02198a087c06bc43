//! Dual diffusion pitch predictor.
//!
//! Two denoisers share one architecture: a style-specific branch conditioned
//! on the full style representation and a style-agnostic branch conditioned
//! on the plain content. Each consumes the noisy log-pitch through a 1x1
//! input projection and the noisy voicing state through an embedding, runs a
//! 12-layer dilated non-causal stack, and emits a noise estimate for the
//! continuous branch plus voicing logits for the categorical branch. Branch
//! outputs are averaged, the continuous chain follows the Gaussian process
//! and the voicing chain the categorical one, and both share the timestep at
//! train time.
//!
//! Log-pitch is voiced-interpolated and corpus-standardized before diffusion
//! so the continuous branch never sees the 0 Hz jump at voicing boundaries.

use candle_core::{DType, Tensor, Var, D};
use rand_chacha::ChaCha20Rng;

use crate::diffusion::gaussian::{gaussian_forward, gaussian_loss, has_nan};
use crate::diffusion::multinomial::{multinomial_loss, multinomial_marginal, multinomial_posterior};
use crate::diffusion::schedule::{GaussianSchedule, MultinomialSchedule};
use crate::nn::{Linear, Params, WaveNet, WaveNetConfig};
use crate::{invalid_input, rng, Error, Result};

/// Voicing categories: index 0 unvoiced, index 1 voiced.
pub const UV_CLASSES: usize = 2;
/// Width of the conditioning rows both branches consume.
pub const PITCH_COND_DIM: usize = 256;

const HIDDEN: usize = 192;
const LAYERS: usize = 12;
const DILATION_CYCLE: u32 = 4;
const UV_EMB: usize = 16;
const T_EMB: usize = 64;
/// Interpolation fallback when a contour has no voiced frame at all.
const FALLBACK_HZ: f32 = 220.0;

/// Corpus standardization of voiced-interpolated `log2(Hz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for PitchStats {
    fn default() -> Self {
        PitchStats { mean: 0.0, std: 1.0 }
    }
}

impl PitchStats {
    /// Pooled mean and (population) deviation over every frame of the corpus.
    pub fn from_contours<'a, I>(contours: I) -> Result<PitchStats>
    where
        I: IntoIterator<Item = (&'a [f32], &'a [u8])>,
    {
        let mut values = Vec::new();
        for (f0, uv) in contours {
            let interp = crate::dsp::interpolate_unvoiced(f0, uv, FALLBACK_HZ);
            values.extend(interp.iter().map(|&h| (h as f64).log2()));
        }
        if values.is_empty() {
            return Err(invalid_input!("no frames to standardize over"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(PitchStats { mean, std: var.sqrt().max(1e-6) })
    }

    pub fn standardize(&self, log2_hz: f64) -> f64 {
        (log2_hz - self.mean) / self.std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    /// Standardized log-pitch target for one contour.
    pub fn target(&self, f0: &[f32], uv: &[u8]) -> Result<Vec<f64>> {
        if f0.len() != uv.len() {
            return Err(crate::shape_mismatch!("f0 {} frames vs uv {}", f0.len(), uv.len()));
        }
        let interp = crate::dsp::interpolate_unvoiced(f0, uv, FALLBACK_HZ);
        Ok(interp.iter().map(|&h| self.standardize((h as f64).log2())).collect())
    }
}

/// One denoiser branch.
pub struct PitchDenoiser {
    net: WaveNet,
    uv_emb: Linear,
}

impl PitchDenoiser {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        let net = WaveNet::new(
            p,
            &format!("{name}.net"),
            WaveNetConfig {
                in_dim: 1 + UV_EMB,
                cond_dim: PITCH_COND_DIM,
                hidden: HIDDEN,
                layers: LAYERS,
                dilation_cycle: DILATION_CYCLE,
                out_dim: 1 + UV_CLASSES,
                t_emb_dim: T_EMB,
            },
        )?;
        let uv_emb = Linear::new(p, &format!("{name}.uv"), UV_CLASSES, UV_EMB, false)?;
        Ok(PitchDenoiser { net, uv_emb })
    }

    pub fn receptive_field(&self) -> usize {
        self.net.receptive_field()
    }

    /// `x_t`: `[B, T]` noisy standardized log-pitch; `y_t`: `[B, T, 2]`
    /// one-hot voicing state; `cond`: `[B, T, 256]`. Returns the per-frame
    /// noise estimate `[B, T]` and voicing logits `[B, T, 2]`.
    pub fn forward(
        &self,
        x_t: &Tensor,
        y_t: &Tensor,
        cond: &Tensor,
        t: usize,
    ) -> Result<(Tensor, Tensor)> {
        let (b, frames) = x_t.dims2()?;
        if y_t.dims() != [b, frames, UV_CLASSES] {
            return Err(crate::shape_mismatch!("voicing state {:?}", y_t.dims()));
        }
        if cond.dims() != [b, frames, PITCH_COND_DIM] {
            return Err(crate::shape_mismatch!(
                "condition {:?} for {frames} frames",
                cond.dims()
            ));
        }
        let x = Tensor::cat(&[&x_t.unsqueeze(D::Minus1)?, &self.uv_emb.forward(y_t)?], 2)?;
        let out = self.net.forward(&x, cond, t)?;
        let eps = out.narrow(2, 0, 1)?.squeeze(2)?;
        let logits = out.narrow(2, 1, UV_CLASSES)?;
        Ok((eps, logits))
    }
}

/// Element-wise mean of the two branches' outputs.
pub fn combine_branches(
    specific: &(Tensor, Tensor),
    agnostic: &(Tensor, Tensor),
) -> Result<(Tensor, Tensor)> {
    if specific.0.shape() != agnostic.0.shape() || specific.1.shape() != agnostic.1.shape() {
        return Err(crate::shape_mismatch!(
            "branch outputs disagree: {:?}/{:?} vs {:?}/{:?}",
            specific.0.shape(),
            specific.1.shape(),
            agnostic.0.shape(),
            agnostic.1.shape()
        ));
    }
    let eps = (((&specific.0 + &agnostic.0)?) / 2.0)?;
    let logits = (((&specific.1 + &agnostic.1)?) / 2.0)?;
    Ok((eps, logits))
}

/// The full predictor: both branches, schedules, and standardization.
pub struct PitchPredictor {
    pub specific: PitchDenoiser,
    pub agnostic: PitchDenoiser,
    stats_var: Var,
    gsched: GaussianSchedule,
    msched: MultinomialSchedule,
    /// Train the continuous branch with the schedule-weighted objective
    /// (default) or the simplified unweighted one.
    pub weighted_loss: bool,
}

impl PitchPredictor {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        let specific = PitchDenoiser::new(p, &format!("{name}.specific"))?;
        let agnostic = PitchDenoiser::new(p, &format!("{name}.agnostic"))?;
        let stats_var = p.var(format!("{name}.stats"), &[2], crate::nn::Init::Zeros)?;
        let me = PitchPredictor {
            specific,
            agnostic,
            stats_var,
            gsched: GaussianSchedule::pitch_default(),
            msched: MultinomialSchedule::pitch_default(UV_CLASSES)?,
            weighted_loss: true,
        };
        me.set_stats(PitchStats::default())?;
        Ok(me)
    }

    /// Standardization parameters live in a named parameter block so they
    /// ride along with checkpoints.
    pub fn set_stats(&self, stats: PitchStats) -> Result<()> {
        let t = Tensor::from_vec(vec![stats.mean, stats.std], 2, self.stats_var.device())?
            .to_dtype(self.stats_var.dtype())?;
        self.stats_var.set(&t)?;
        Ok(())
    }

    pub fn stats(&self) -> Result<PitchStats> {
        let v: Vec<f64> =
            self.stats_var.as_tensor().to_dtype(DType::F64)?.to_vec1()?;
        Ok(PitchStats { mean: v[0], std: v[1] })
    }

    pub fn schedules(&self) -> (&GaussianSchedule, &MultinomialSchedule) {
        (&self.gsched, &self.msched)
    }

    /// One training step's losses for one sample (teacher-forced frames).
    ///
    /// Draws a single shared timestep, corrupts the standardized log-pitch
    /// with the Gaussian forward and the voicing one-hots with the
    /// categorical marginal, runs both branches on the same corrupted state,
    /// and scores the averaged outputs.
    pub fn train_losses(
        &self,
        f0: &[f32],
        uv: &[u8],
        cond_specific: &Tensor,
        cond_agnostic: &Tensor,
        r: &mut ChaCha20Rng,
    ) -> Result<(Tensor, Tensor)> {
        let frames = f0.len();
        if frames == 0 {
            return Err(invalid_input!("empty pitch target"));
        }
        if cond_specific.dims() != [frames, PITCH_COND_DIM]
            || cond_agnostic.dims() != [frames, PITCH_COND_DIM]
        {
            return Err(crate::shape_mismatch!(
                "conditions {:?} / {:?} for {frames} frames",
                cond_specific.dims(),
                cond_agnostic.dims()
            ));
        }
        let dev = cond_specific.device();
        let dtype = cond_specific.dtype();
        let stats = self.stats()?;
        let x0 = Tensor::from_vec(stats.target(f0, uv)?, (1, frames), dev)?.to_dtype(dtype)?;

        let t = rng::uniform_usize(r, self.gsched.len()) + 1;
        let eps = rng::normal_tensor(r, &[1, frames], dtype, dev)?;
        let x_t = gaussian_forward(&x0, t, &eps, &self.gsched)?;

        let mut y0_host = vec![0.0f64; frames * UV_CLASSES];
        let mut yt_host = vec![0.0f64; frames * UV_CLASSES];
        for (i, &v) in uv.iter().enumerate() {
            if v > 1 {
                return Err(invalid_input!("voicing flag {v} at frame {i}"));
            }
            y0_host[i * UV_CLASSES + v as usize] = 1.0;
            let marginal = multinomial_marginal(
                &one_hot(v as usize),
                t,
                &self.msched,
            )?;
            let drawn = rng::sample_weighted(r, &marginal);
            yt_host[i * UV_CLASSES + drawn] = 1.0;
        }
        let y0 = Tensor::from_vec(y0_host, (1, frames, UV_CLASSES), dev)?.to_dtype(dtype)?;
        let y_t = Tensor::from_vec(yt_host, (1, frames, UV_CLASSES), dev)?.to_dtype(dtype)?;

        let cond_s = cond_specific.unsqueeze(0)?;
        let cond_a = cond_agnostic.unsqueeze(0)?;
        let out_s = self.specific.forward(&x_t, &y_t, &cond_s, t)?;
        let out_a = self.agnostic.forward(&x_t, &y_t, &cond_a, t)?;
        let (eps_pred, logits) = combine_branches(&out_s, &out_a)?;

        let l_g = gaussian_loss(&eps, &eps_pred, t, &self.gsched, self.weighted_loss)?;
        let l_m = multinomial_loss(&y0, &logits, &y_t, t, &self.msched)?;
        Ok((l_g, l_m))
    }

    /// Full reverse chain: ancestral sampling for the continuous branch and
    /// posterior sampling for the voicing branch, sharing each step's
    /// combined network outputs. Returns Hz (zero where unvoiced) and flags.
    pub fn infer(
        &self,
        cond_specific: &Tensor,
        cond_agnostic: &Tensor,
        r: &mut ChaCha20Rng,
    ) -> Result<(Vec<f32>, Vec<u8>)> {
        let (frames, dc) = cond_specific.dims2()?;
        if dc != PITCH_COND_DIM || cond_agnostic.dims() != [frames, PITCH_COND_DIM] {
            return Err(crate::shape_mismatch!(
                "conditions {:?} / {:?}",
                cond_specific.dims(),
                cond_agnostic.dims()
            ));
        }
        if frames == 0 {
            return Err(invalid_input!("cannot infer pitch for zero frames"));
        }
        let dev = cond_specific.device();
        let dtype = cond_specific.dtype();
        let cond_s = cond_specific.unsqueeze(0)?;
        let cond_a = cond_agnostic.unsqueeze(0)?;

        let mut x = rng::normal_tensor(r, &[1, frames], dtype, dev)?;
        // The categorical marginal at T is essentially uniform.
        let mut y_host: Vec<usize> =
            (0..frames).map(|_| rng::uniform_usize(r, UV_CLASSES)).collect();

        let steps = self.gsched.len();
        for t in (1..=steps).rev() {
            let y_t = one_hot_tensor(&y_host, dtype, dev)?;
            let out_s = self.specific.forward(&x, &y_t, &cond_s, t)?;
            let out_a = self.agnostic.forward(&x, &y_t, &cond_a, t)?;
            let (eps_pred, logits) = combine_branches(&out_s, &out_a)?;
            if has_nan(&eps_pred)? || has_nan(&logits)? {
                return Err(Error::Numerical(format!(
                    "NaN in pitch denoiser output at reverse step t={t}"
                )));
            }

            let beta = self.gsched.beta(t)?;
            let abar = self.gsched.alpha_bar(t)?;
            let alpha = self.gsched.alpha(t)?;
            let mean = ((&x - (eps_pred * (beta / (1.0 - abar).sqrt()))?)? / alpha.sqrt())?;
            let sigma = self.gsched.posterior_var(t)?.sqrt();
            x = if sigma > 0.0 {
                let z = rng::normal_tensor(r, &[1, frames], dtype, dev)?;
                (mean + (z * sigma)?)?
            } else {
                mean
            };

            let mut probs = candle_nn::ops::softmax(&logits, D::Minus1)?
                .to_dtype(DType::F64)?
                .squeeze(0)?
                .to_vec2::<f64>()?;
            // A softmax computed in f32 drifts a few ulps off a true
            // distribution once widened; renormalize in f64.
            for row in probs.iter_mut() {
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
            }
            for (i, y0_hat) in probs.iter().enumerate() {
                y_host[i] = if t >= 2 {
                    let theta = multinomial_posterior(
                        &one_hot(y_host[i]),
                        y0_hat,
                        t,
                        &self.msched,
                    )?;
                    rng::sample_weighted(r, &theta)
                } else {
                    // Final step decodes the predicted clean state directly.
                    if y0_hat[1] > y0_hat[0] {
                        1
                    } else {
                        0
                    }
                };
            }
        }

        let stats = self.stats()?;
        let x_final: Vec<f64> = x.to_dtype(DType::F64)?.squeeze(0)?.to_vec1()?;
        let mut f0 = Vec::with_capacity(frames);
        let mut uv = Vec::with_capacity(frames);
        for (z, &cat) in x_final.iter().zip(&y_host) {
            let voiced = cat == 1;
            uv.push(voiced as u8);
            if voiced {
                f0.push(stats.destandardize(*z).exp2() as f32);
            } else {
                f0.push(0.0);
            }
        }
        Ok((f0, uv))
    }
}

/// Plain regression fallback used by the pitch ablation: two feed-forward
/// layers predicting standardized log-pitch and voicing logits directly.
pub struct SimplePitchPredictor {
    fc1: Linear,
    fc2: Linear,
    stats_var: Var,
}

impl SimplePitchPredictor {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        let me = SimplePitchPredictor {
            fc1: Linear::new(p, &format!("{name}.fc1"), PITCH_COND_DIM, PITCH_COND_DIM, true)?,
            fc2: Linear::new(p, &format!("{name}.fc2"), PITCH_COND_DIM, 1 + UV_CLASSES, true)?,
            stats_var: p.var(format!("{name}.stats"), &[2], crate::nn::Init::Zeros)?,
        };
        me.set_stats(PitchStats::default())?;
        Ok(me)
    }

    pub fn set_stats(&self, stats: PitchStats) -> Result<()> {
        let t = Tensor::from_vec(vec![stats.mean, stats.std], 2, self.stats_var.device())?
            .to_dtype(self.stats_var.dtype())?;
        self.stats_var.set(&t)?;
        Ok(())
    }

    pub fn stats(&self) -> Result<PitchStats> {
        let v: Vec<f64> =
            self.stats_var.as_tensor().to_dtype(DType::F64)?.to_vec1()?;
        Ok(PitchStats { mean: v[0], std: v[1] })
    }

    /// `cond`: `[T, 256]`. Returns standardized log-pitch `[T]` and voicing
    /// logits `[T, 2]`.
    pub fn forward(&self, cond: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_t, dc) = cond.dims2()?;
        if dc != PITCH_COND_DIM {
            return Err(crate::shape_mismatch!("condition width {dc}"));
        }
        let h = self.fc1.forward(cond)?.relu()?;
        let out = self.fc2.forward(&h)?;
        Ok((out.narrow(1, 0, 1)?.squeeze(1)?, out.narrow(1, 1, UV_CLASSES)?))
    }

    /// Squared error on standardized log-pitch plus cross-entropy on voicing.
    pub fn train_loss(&self, f0: &[f32], uv: &[u8], cond: &Tensor) -> Result<Tensor> {
        let frames = f0.len();
        if cond.dims2()?.0 != frames {
            return Err(crate::shape_mismatch!(
                "condition {:?} for {frames} frames",
                cond.dims()
            ));
        }
        let stats = self.stats()?;
        let dev = cond.device();
        let dtype = cond.dtype();
        let target = Tensor::from_vec(stats.target(f0, uv)?, frames, dev)?.to_dtype(dtype)?;
        let (f0_pred, logits) = self.forward(cond)?;
        let mse = (f0_pred - target)?.sqr()?.mean_all()?;
        let mut onehot = vec![0.0f64; frames * UV_CLASSES];
        for (i, &v) in uv.iter().enumerate() {
            onehot[i * UV_CLASSES + (v.min(1)) as usize] = 1.0;
        }
        let onehot =
            Tensor::from_vec(onehot, (frames, UV_CLASSES), dev)?.to_dtype(dtype)?;
        let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        let ce = (onehot * logp)?.sum(D::Minus1)?.mean_all()?.neg()?;
        Ok((mse + ce)?)
    }

    /// Deterministic prediction; no sampling involved.
    pub fn infer(&self, cond: &Tensor) -> Result<(Vec<f32>, Vec<u8>)> {
        let (f0_pred, logits) = self.forward(cond)?;
        if has_nan(&f0_pred)? || has_nan(&logits)? {
            return Err(Error::Numerical("NaN in pitch regression output".into()));
        }
        let stats = self.stats()?;
        let zs: Vec<f64> = f0_pred.to_dtype(DType::F64)?.to_vec1()?;
        let ls: Vec<Vec<f64>> = logits.to_dtype(DType::F64)?.to_vec2()?;
        let mut f0 = Vec::with_capacity(zs.len());
        let mut uv = Vec::with_capacity(zs.len());
        for (z, l) in zs.iter().zip(&ls) {
            let voiced = l[1] > l[0];
            uv.push(voiced as u8);
            f0.push(if voiced { stats.destandardize(*z).exp2() as f32 } else { 0.0 });
        }
        Ok((f0, uv))
    }
}

fn one_hot(idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; UV_CLASSES];
    v[idx] = 1.0;
    v
}

fn one_hot_tensor(
    cats: &[usize],
    dtype: DType,
    dev: &candle_core::Device,
) -> Result<Tensor> {
    let mut host = vec![0.0f64; cats.len() * UV_CLASSES];
    for (i, &c) in cats.iter().enumerate() {
        host[i * UV_CLASSES + c] = 1.0;
    }
    Ok(Tensor::from_vec(host, (1, cats.len(), UV_CLASSES), dev)?.to_dtype(dtype)?)
}
