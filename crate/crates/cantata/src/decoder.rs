//! Four-step diffusion mel decoder.
//!
//! The denoiser is a 20-layer dilated non-causal stack that predicts the
//! clean mel directly from the corrupted one; the reverse pass substitutes
//! that prediction into the Gaussian posterior for just four steps. Training
//! scores the prediction with mean absolute error plus a structural
//! similarity term computed on min-max normalized mels treated as images.

use candle_core::{DType, Tensor, Var};
use rand_chacha::ChaCha20Rng;

use crate::diffusion::gaussian::{gaussian_forward, has_nan};
use crate::diffusion::schedule::{DecoderSchedule, DECODER_STEPS};
use crate::dsp::MEL_BINS;
use crate::nn::{Conv1d, Linear, Params, WaveNet, WaveNetConfig};
use crate::{invalid_input, rng, Error, Result};

/// Width of the conditioning rows (style representation plus pitch terms).
pub const DEC_COND_DIM: usize = 256;

const HIDDEN: usize = 256;
const LAYERS: usize = 20;
const DILATION_CYCLE: u32 = 4;
const T_EMB: usize = 64;

/// Structural-similarity configuration: Gaussian window and stabilizers for
/// inputs normalized to dynamic range 1.
#[derive(Debug, Clone, Copy)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: 11, sigma: 1.5, c1: 1e-4, c2: 9e-4 }
    }
}

/// Normalized 2-D Gaussian window, flattened row-major.
fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            w.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

fn check_unit_range(name: &str, x: &Tensor) -> Result<()> {
    let host: Vec<f64> = x.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    for &v in &host {
        if !(-1e-6..=1.0 + 1e-6).contains(&v) {
            return Err(invalid_input!("{name} leaves [0, 1]: found {v}"));
        }
    }
    Ok(())
}

/// Mean local structural similarity of two `[T, F]` images in `[0, 1]`.
///
/// Local statistics come from a valid (unpadded) convolution with the
/// Gaussian window; the window shrinks to the smaller image dimension when
/// the input is tighter than the configured size, so small patches still
/// evaluate. Identical inputs score exactly 1.
pub fn ssim(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    let (t, f) = x.dims2()?;
    if y.dims() != [t, f] {
        return Err(crate::shape_mismatch!("ssim inputs {:?} vs {:?}", x.dims(), y.dims()));
    }
    if t == 0 || f == 0 {
        return Err(invalid_input!("ssim needs a nonempty image"));
    }
    check_unit_range("ssim input x", x)?;
    check_unit_range("ssim input y", y)?;

    let w = cfg.window.min(t).min(f).max(1);
    let dtype = x.dtype();
    let dev = x.device();
    let window = Tensor::from_vec(gaussian_window(w, cfg.sigma), (1, 1, w, w), dev)?
        .to_dtype(dtype)?;

    let xb = x.reshape((1, 1, t, f))?;
    let yb = y.reshape((1, 1, t, f))?;
    let mu = |img: &Tensor| -> Result<Tensor> { Ok(img.conv2d(&window, 0, 1, 1, 1)?) };
    let mu_x = mu(&xb)?;
    let mu_y = mu(&yb)?;
    let mu_xx = mu(&xb.sqr()?)?;
    let mu_yy = mu(&yb.sqr()?)?;
    let mu_xy = mu(&(&xb * &yb)?)?;

    let var_x = (&mu_xx - &mu_x.sqr()?)?;
    let var_y = (&mu_yy - &mu_y.sqr()?)?;
    let cov = (&mu_xy - (&mu_x * &mu_y)?)?;

    let lum_num = (((&mu_x * &mu_y)? * 2.0)? + cfg.c1)?;
    let str_num = ((&cov * 2.0)? + cfg.c2)?;
    let lum_den = ((mu_x.sqr()? + mu_y.sqr()?)? + cfg.c1)?;
    let str_den = ((var_x + var_y)? + cfg.c2)?;
    let map = ((lum_num * str_num)? / (lum_den * str_den)?)?;
    Ok(map.mean_all()?)
}

/// `1 - ssim`.
pub fn ssim_loss(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    Ok((1.0 - ssim(x, y, cfg)?)?.clone())
}

/// Mean absolute error over all elements.
pub fn mae_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(crate::shape_mismatch!(
            "mae shapes {:?} vs {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    Ok((pred - target)?.abs()?.mean_all()?)
}

/// Corpus-wide mel min-max, persisted with the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelNorm {
    pub min: f64,
    pub max: f64,
}

impl Default for MelNorm {
    fn default() -> Self {
        MelNorm { min: 0.0, max: 1.0 }
    }
}

impl MelNorm {
    pub fn from_mels<'a, I>(mels: I) -> Result<MelNorm>
    where
        I: IntoIterator<Item = &'a crate::dsp::MelSpectrogram>,
    {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for mel in mels {
            for &v in mel.raw() {
                lo = lo.min(v as f64);
                hi = hi.max(v as f64);
            }
        }
        if !lo.is_finite() || !hi.is_finite() || hi <= lo {
            return Err(invalid_input!("degenerate mel range [{lo}, {hi}]"));
        }
        Ok(MelNorm { min: lo, max: hi })
    }

    pub fn normalize(&self, mel: &Tensor) -> Result<Tensor> {
        Ok(((mel - self.min)? / (self.max - self.min))?)
    }

    pub fn denormalize(&self, unit: &Tensor) -> Result<Tensor> {
        Ok(((unit * (self.max - self.min))? + self.min)?)
    }
}

/// The diffusion decoder with its pitch-conditioning projections.
pub struct MelDecoder {
    net: WaveNet,
    f0_proj: Linear,
    uv_emb: Linear,
    norm_var: Var,
    sched: DecoderSchedule,
}

impl MelDecoder {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        let net = WaveNet::new(
            p,
            &format!("{name}.net"),
            WaveNetConfig {
                in_dim: MEL_BINS,
                cond_dim: DEC_COND_DIM,
                hidden: HIDDEN,
                layers: LAYERS,
                dilation_cycle: DILATION_CYCLE,
                out_dim: MEL_BINS,
                t_emb_dim: T_EMB,
            },
        )?;
        let me = MelDecoder {
            net,
            f0_proj: Linear::new(p, &format!("{name}.f0"), 1, DEC_COND_DIM, true)?,
            uv_emb: Linear::new(p, &format!("{name}.uvemb"), 2, DEC_COND_DIM, false)?,
            norm_var: p.var(format!("{name}.norm"), &[2], crate::nn::Init::Zeros)?,
            sched: DecoderSchedule::vpsde4(),
        };
        me.set_norm(MelNorm::default())?;
        Ok(me)
    }

    pub fn set_norm(&self, norm: MelNorm) -> Result<()> {
        if norm.max <= norm.min {
            return Err(invalid_input!("mel range [{}, {}] is empty", norm.min, norm.max));
        }
        let t = Tensor::from_vec(vec![norm.min, norm.max], 2, self.norm_var.device())?
            .to_dtype(self.norm_var.dtype())?;
        self.norm_var.set(&t)?;
        Ok(())
    }

    pub fn norm(&self) -> Result<MelNorm> {
        let v: Vec<f64> = self.norm_var.as_tensor().to_dtype(DType::F64)?.to_vec1()?;
        Ok(MelNorm { min: v[0], max: v[1] })
    }

    pub fn schedule(&self) -> &DecoderSchedule {
        &self.sched
    }

    pub fn receptive_field(&self) -> usize {
        self.net.receptive_field()
    }

    /// Conditioning rows: style representation plus projections of the
    /// standardized log-pitch and the voicing state.
    pub fn condition(&self, e_s: &Tensor, f0_std: &[f64], uv: &[u8]) -> Result<Tensor> {
        let (t, d) = e_s.dims2()?;
        if d != DEC_COND_DIM {
            return Err(crate::shape_mismatch!("style rows are {d}-wide"));
        }
        if f0_std.len() != t || uv.len() != t {
            return Err(crate::shape_mismatch!(
                "style {t} frames, f0 {}, uv {}",
                f0_std.len(),
                uv.len()
            ));
        }
        let dev = e_s.device();
        let dtype = e_s.dtype();
        let f0 = Tensor::from_vec(f0_std.to_vec(), (t, 1), dev)?.to_dtype(dtype)?;
        let mut onehot = vec![0.0f64; t * 2];
        for (i, &v) in uv.iter().enumerate() {
            onehot[i * 2 + (v.min(1)) as usize] = 1.0;
        }
        let onehot = Tensor::from_vec(onehot, (t, 2), dev)?.to_dtype(dtype)?;
        Ok(((e_s + self.f0_proj.forward(&f0)?)? + self.uv_emb.forward(&onehot)?)?)
    }

    /// Clean-mel prediction from the corrupted input at step `t` in `[1, 4]`.
    pub fn denoise(&self, x_t: &Tensor, cond: &Tensor, t: usize) -> Result<Tensor> {
        if t == 0 || t > DECODER_STEPS {
            return Err(invalid_input!("decoder step {t} outside [1, {DECODER_STEPS}]"));
        }
        self.net.forward(x_t, cond, t)
    }

    /// One training step on a normalized `[T, 80]` mel: draw a step, corrupt,
    /// predict the clean mel, and score it with MAE and SSIM (prediction
    /// clamped into the unit range for the structural term).
    pub fn train_losses(
        &self,
        mel_unit: &Tensor,
        cond: &Tensor,
        r: &mut ChaCha20Rng,
    ) -> Result<(Tensor, Tensor)> {
        let (frames, bins) = mel_unit.dims2()?;
        if bins != MEL_BINS {
            return Err(crate::shape_mismatch!("mel has {bins} bins"));
        }
        if cond.dims() != [frames, DEC_COND_DIM] {
            return Err(crate::shape_mismatch!(
                "condition {:?} for {frames} frames",
                cond.dims()
            ));
        }
        let x0 = mel_unit.unsqueeze(0)?;
        let t = rng::uniform_usize(r, DECODER_STEPS) + 1;
        let eps = rng::normal_tensor(r, &[1, frames, MEL_BINS], x0.dtype(), x0.device())?;
        let x_t = gaussian_forward(&x0, t, &eps, self.sched.base())?;
        let x0_pred = self.denoise(&x_t, &cond.unsqueeze(0)?, t)?;
        let l_mae = mae_loss(&x0_pred, &x0)?;
        let l_ssim = ssim_loss(
            &mel_unit.clone(),
            &x0_pred.squeeze(0)?.clamp(0.0, 1.0)?,
            &SsimConfig::default(),
        )?;
        Ok((l_mae, l_ssim))
    }

    /// Four-step reverse pass; returns a normalized `[T, 80]` mel.
    pub fn infer(&self, cond: &Tensor, r: &mut ChaCha20Rng) -> Result<Tensor> {
        let (frames, d) = cond.dims2()?;
        if d != DEC_COND_DIM {
            return Err(crate::shape_mismatch!("condition width {d}"));
        }
        if frames == 0 {
            return Err(invalid_input!("cannot decode zero frames"));
        }
        let dtype = cond.dtype();
        let dev = cond.device();
        let cond = cond.unsqueeze(0)?;
        let mut x = rng::normal_tensor(r, &[1, frames, MEL_BINS], dtype, dev)?;
        for t in (1..=DECODER_STEPS).rev() {
            let raw = self.denoise(&x, &cond, t)?;
            // NaN must be caught before the clamp: elementwise max/min
            // against the bounds would silently replace NaN with a bound.
            if has_nan(&raw)? {
                return Err(Error::Numerical(format!(
                    "NaN in decoder output at reverse step t={t}"
                )));
            }
            let x0_pred = raw.clamp(0.0, 1.0)?;
            if t > 1 {
                let (c0, ct, var) = self.sched.base().posterior_coeffs(t)?;
                let mean = ((&x0_pred * c0)? + (&x * ct)?)?;
                let z = rng::normal_tensor(r, &[1, frames, MEL_BINS], dtype, dev)?;
                x = (mean + (z * var.sqrt())?)?;
            } else {
                x = x0_pred;
            }
        }
        Ok(x.squeeze(0)?)
    }
}

/// Non-diffusion fallback used by the decoder ablation: four convolution
/// layers with GELU activations mapping condition rows straight to a mel.
pub struct SimpleMelDecoder {
    convs: Vec<Conv1d>,
    norm_var: Var,
}

const SIMPLE_LAYERS: usize = 4;
const SIMPLE_KERNEL: usize = 5;

impl SimpleMelDecoder {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        let mut convs = Vec::with_capacity(SIMPLE_LAYERS);
        let mut c_in = DEC_COND_DIM;
        for i in 0..SIMPLE_LAYERS {
            let c_out = if i == SIMPLE_LAYERS - 1 { MEL_BINS } else { DEC_COND_DIM };
            convs.push(Conv1d::new(p, &format!("{name}.conv{i}"), c_in, c_out, SIMPLE_KERNEL, 1)?);
            c_in = c_out;
        }
        let me = SimpleMelDecoder {
            convs,
            norm_var: p.var(format!("{name}.norm"), &[2], crate::nn::Init::Zeros)?,
        };
        me.set_norm(MelNorm::default())?;
        Ok(me)
    }

    pub fn set_norm(&self, norm: MelNorm) -> Result<()> {
        if norm.max <= norm.min {
            return Err(invalid_input!("mel range [{}, {}] is empty", norm.min, norm.max));
        }
        let t = Tensor::from_vec(vec![norm.min, norm.max], 2, self.norm_var.device())?
            .to_dtype(self.norm_var.dtype())?;
        self.norm_var.set(&t)?;
        Ok(())
    }

    pub fn norm(&self) -> Result<MelNorm> {
        let v: Vec<f64> = self.norm_var.as_tensor().to_dtype(DType::F64)?.to_vec1()?;
        Ok(MelNorm { min: v[0], max: v[1] })
    }

    /// `cond`: `[T, 256]` -> normalized mel `[T, 80]`.
    pub fn forward(&self, cond: &Tensor) -> Result<Tensor> {
        let (_t, d) = cond.dims2()?;
        if d != DEC_COND_DIM {
            return Err(crate::shape_mismatch!("condition width {d}"));
        }
        let mut h = cond.unsqueeze(0)?;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i + 1 < SIMPLE_LAYERS {
                h = h.gelu()?;
            }
        }
        Ok(h.squeeze(0)?)
    }

    pub fn train_loss(&self, mel_unit: &Tensor, cond: &Tensor) -> Result<Tensor> {
        mae_loss(&self.forward(cond)?, mel_unit)
    }

    pub fn infer(&self, cond: &Tensor) -> Result<Tensor> {
        let out = self.forward(cond)?;
        if has_nan(&out)? {
            return Err(Error::Numerical("NaN in fallback decoder output".into()));
        }
        Ok(out.clamp(0.0, 1.0)?)
    }
}
