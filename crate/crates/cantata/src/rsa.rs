//! Residual style adaptor: reference conv encoder, residual vector
//! quantization with EMA codebooks, and alignment attention.
//!
//! A reference mel and pitch contour are encoded at a 4x coarser time rate,
//! squeezed through a 4-deep residual quantizer (each codebook encodes what
//! the previous depths left over), and aligned onto the target frame axis by
//! attention whose queries come from the content. The bottleneck keeps
//! detailed style (articulation, vibrato shape, pronunciation) while
//! discarding content the codes cannot express.
//!
//! The alignment attention deliberately leaves its value path unprojected:
//! outputs are convex combinations of the (position-encoded) detail rows, so
//! a single-row reference passes through exactly and learned parameters only
//! steer where to look.

use candle_core::{DType, Tensor, Var};
use rand_chacha::ChaCha20Rng;

use crate::nn::{sinusoidal_pe, Conv1d, Init, Linear, Params};
use crate::{invalid_input, rng, Result};

/// Quantizer depth (number of ordered codebooks).
pub const RQ_DEPTH: usize = 4;
/// Codes per book.
pub const RQ_CODES: usize = 128;
/// Code dimension, equal to the detail embedding width.
pub const RQ_DIM: usize = 256;
/// Time downsampling factor of the reference encoder.
pub const REF_DOWNSAMPLE: usize = 4;
/// EMA decay for codebook cluster statistics.
pub const EMA_DECAY: f64 = 0.99;
/// Steps a code may go unassigned before it is reseeded.
pub const STALE_LIMIT: u32 = 100;

const REF_LAYERS: usize = 5;
const REF_KERNEL: usize = 5;
const REF_HIDDEN: usize = 192;
const REF_IN: usize = crate::dsp::MEL_BINS + 2;
const ALIGN_LAYERS: usize = 2;
const ALIGN_HEADS: usize = 2;

/// Log-pitch and voicing channels for the reference encoder.
///
/// Voiced frames carry `ln(f0/220)`; unvoiced gaps are linearly interpolated
/// in the log domain between their voiced neighbors (held at the edges), and
/// a parallel 0/1 flag preserves the voicing decision. A fully unvoiced
/// contour yields all-zero channels.
pub fn f0_reference_channels(f0: &[f32], uv: &[u8]) -> Result<(Vec<f32>, Vec<f32>)> {
    if f0.len() != uv.len() {
        return Err(crate::shape_mismatch!("f0 length {} vs uv length {}", f0.len(), uv.len()));
    }
    let n = f0.len();
    let mut logf = vec![0.0f32; n];
    let voiced: Vec<usize> = (0..n).filter(|&i| uv[i] == 1).collect();
    if !voiced.is_empty() {
        for &i in &voiced {
            if f0[i] <= 0.0 {
                return Err(invalid_input!("voiced frame {i} has f0 {}", f0[i]));
            }
            logf[i] = (f0[i] / 220.0).ln();
        }
        for i in 0..n {
            if uv[i] == 1 {
                continue;
            }
            let prev = voiced.iter().rev().find(|&&v| v < i).copied();
            let next = voiced.iter().find(|&&v| v > i).copied();
            logf[i] = match (prev, next) {
                (Some(a), Some(b)) => {
                    let w = (i - a) as f32 / (b - a) as f32;
                    logf[a] * (1.0 - w) + logf[b] * w
                }
                (Some(a), None) => logf[a],
                (None, Some(b)) => logf[b],
                (None, None) => unreachable!("voiced is non-empty"),
            };
        }
    }
    let flags = uv.iter().map(|&v| v as f32).collect();
    Ok((logf, flags))
}

/// Five-layer conv encoder over `[mel || log-f0 || uv]`, downsampling time
/// by 4 through two stride-2 stages.
pub struct RefConvEncoder {
    convs: Vec<Conv1d>,
}

/// Per-layer stride schedule; the product is [`REF_DOWNSAMPLE`].
const REF_STRIDES: [usize; REF_LAYERS] = [1, 2, 1, 2, 1];

impl RefConvEncoder {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        let mut convs = Vec::with_capacity(REF_LAYERS);
        let mut c_in = REF_IN;
        for i in 0..REF_LAYERS {
            let c_out = if i == REF_LAYERS - 1 { RQ_DIM } else { REF_HIDDEN };
            convs.push(Conv1d::new(p, &format!("{name}.conv{i}"), c_in, c_out, REF_KERNEL, 1)?);
            c_in = c_out;
        }
        Ok(RefConvEncoder { convs })
    }

    /// `mel`: `[T_ref, 80]`, `f0`/`uv`: per-frame contour. Returns
    /// `[ceil(T_ref/4), 256]`.
    pub fn forward(&self, mel: &Tensor, f0: &[f32], uv: &[u8]) -> Result<Tensor> {
        let (t, bins) = mel.dims2()?;
        if bins != crate::dsp::MEL_BINS {
            return Err(crate::shape_mismatch!("reference mel has {bins} bins"));
        }
        if f0.len() != t || uv.len() != t {
            return Err(crate::shape_mismatch!(
                "reference frames disagree: mel {t}, f0 {}, uv {}",
                f0.len(),
                uv.len()
            ));
        }
        if t == 0 {
            return Err(invalid_input!("empty reference"));
        }
        let dev = mel.device();
        let dtype = mel.dtype();
        let (logf, flags) = f0_reference_channels(f0, uv)?;
        let logf = Tensor::from_vec(logf, (t, 1), dev)?.to_dtype(dtype)?;
        let flags = Tensor::from_vec(flags, (t, 1), dev)?.to_dtype(dtype)?;
        let mut h = Tensor::cat(&[mel, &logf, &flags], 1)?.unsqueeze(0)?;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i + 1 < REF_LAYERS {
                h = h.relu()?;
            }
            if REF_STRIDES[i] == 2 {
                h = subsample_time(&h, 2)?;
            }
        }
        Ok(h.squeeze(0)?)
    }
}

/// Keep every `stride`-th frame of `[B, T, C]`, starting at 0; output length
/// is `ceil(T/stride)`.
fn subsample_time(x: &Tensor, stride: usize) -> Result<Tensor> {
    let (_b, t, _c) = x.dims3()?;
    let idx: Vec<u32> = (0..t).step_by(stride).map(|i| i as u32).collect();
    let idx = Tensor::from_vec(idx, (t + stride - 1) / stride, x.device())?;
    Ok(x.index_select(&idx, 1)?)
}

/// Greedy residual quantization of one sequence.
pub struct RqResult {
    /// Selected code per depth and position, `[RQ_DEPTH][T]`.
    pub codes: Vec<Vec<u32>>,
    /// Partial reconstructions: `partials[n-1]` is the sum of the first `n`
    /// codewords per position.
    pub partials: Vec<Tensor>,
    /// Residuals `r_n = E - partials[n-1]`.
    pub residuals: Vec<Tensor>,
}

/// Ordered codebooks with EMA cluster statistics.
pub struct RqCodebooks {
    books: Vec<Var>,
    cluster_size: Vec<Vec<f64>>,
    cluster_sum: Vec<Vec<f64>>,
    stale: Vec<Vec<u32>>,
    pub decay: f64,
    pub stale_limit: u32,
    depth: usize,
    codes: usize,
    dim: usize,
}

impl RqCodebooks {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        Self::with_shape(p, name, RQ_DEPTH, RQ_CODES, RQ_DIM)
    }

    /// Explicit sizes, for toy configurations in tests.
    pub fn with_shape(
        p: &mut Params,
        name: &str,
        depth: usize,
        codes: usize,
        dim: usize,
    ) -> Result<Self> {
        let mut books = Vec::with_capacity(depth);
        let mut cluster_sum = Vec::with_capacity(depth);
        for d in 0..depth {
            let book = p.var(format!("{name}.book{d}"), &[codes, dim], Init::Normal(0.05))?;
            let flat: Vec<f64> =
                book.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
            cluster_sum.push(flat);
            books.push(book);
        }
        Ok(RqCodebooks {
            books,
            cluster_size: vec![vec![1.0; codes]; depth],
            cluster_sum,
            stale: vec![vec![0; codes]; depth],
            decay: EMA_DECAY,
            stale_limit: STALE_LIMIT,
            depth,
            codes,
            dim,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn book(&self, d: usize) -> &Tensor {
        self.books[d].as_tensor()
    }

    /// Overwrite one book, for tests that pin exact code values. Resets that
    /// book's cluster statistics to match.
    pub fn set_book(&mut self, d: usize, codes: &Tensor) -> Result<()> {
        if codes.dims() != [self.codes, self.dim] {
            return Err(crate::shape_mismatch!(
                "book {d} shape {:?}, want [{}, {}]",
                codes.dims(),
                self.codes,
                self.dim
            ));
        }
        self.books[d].set(&codes.to_dtype(self.books[d].as_tensor().dtype())?)?;
        self.cluster_size[d] = vec![1.0; self.codes];
        self.cluster_sum[d] = codes.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        self.stale[d] = vec![0; self.codes];
        Ok(())
    }

    /// Greedy per-depth nearest neighbor: depth `n` quantizes the residual
    /// the first `n-1` depths left over, ties resolved to the lowest index.
    ///
    /// Distances are evaluated in f64 on the host so the selection order is
    /// exactly that of a straightforward per-depth exhaustive search.
    pub fn quantize(&self, e: &Tensor) -> Result<RqResult> {
        let (t, dim) = e.dims2()?;
        if dim != self.dim {
            return Err(crate::shape_mismatch!("input dim {dim}, codebooks hold {}", self.dim));
        }
        let mut codes = Vec::with_capacity(self.depth);
        let mut partials = Vec::with_capacity(self.depth);
        let mut residuals = Vec::with_capacity(self.depth);
        let mut partial: Option<Tensor> = None;
        for d in 0..self.depth {
            let residual_in = match &partial {
                Some(pt) => (e - pt)?,
                None => e.clone(),
            };
            let rows = residual_in.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            let book = self.books[d].as_tensor().to_dtype(DType::F64)?.to_vec2::<f64>()?;
            let mut picked = Vec::with_capacity(t);
            for row in &rows {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, code) in book.iter().enumerate() {
                    let dist: f64 =
                        row.iter().zip(code).map(|(a, b)| (a - b) * (a - b)).sum();
                    if dist < best_d {
                        best_d = dist;
                        best = c;
                    }
                }
                picked.push(best as u32);
            }
            let idx = Tensor::from_vec(picked.clone(), t, e.device())?;
            let chosen = self.books[d].as_tensor().index_select(&idx, 0)?;
            let new_partial = match &partial {
                Some(pt) => (pt + chosen)?,
                None => chosen,
            };
            residuals.push((e - &new_partial)?);
            partials.push(new_partial.clone());
            partial = Some(new_partial);
            codes.push(picked);
        }
        Ok(RqResult { codes, partials, residuals })
    }

    /// EMA k-means update from one quantized batch.
    ///
    /// Codes assigned this step move toward the running mean of the residuals
    /// they quantize; unassigned codes keep their value (their statistics
    /// decay in lockstep, which leaves the ratio untouched) and age toward
    /// the stale limit, after which they are reseeded from this batch's
    /// residuals.
    pub fn update(&mut self, e: &Tensor, result: &RqResult, r: &mut ChaCha20Rng) -> Result<()> {
        let (t, _dim) = e.dims2()?;
        if t == 0 {
            return Ok(());
        }
        for d in 0..self.depth {
            let residual_in = if d == 0 { e.clone() } else { (e - &result.partials[d - 1])? };
            let rows = residual_in.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            let assigned = &result.codes[d];

            let mut counts = vec![0usize; self.codes];
            let mut batch_sum = vec![0.0f64; self.codes * self.dim];
            for (row, &c) in rows.iter().zip(assigned) {
                let c = c as usize;
                counts[c] += 1;
                for (k, v) in row.iter().enumerate() {
                    batch_sum[c * self.dim + k] += v;
                }
            }

            let mut book: Vec<f64> =
                self.books[d].as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
            let mut dirty = false;
            for c in 0..self.codes {
                let sz = &mut self.cluster_size[d][c];
                let sum = &mut self.cluster_sum[d][c * self.dim..(c + 1) * self.dim];
                if counts[c] > 0 {
                    *sz = self.decay * *sz + (1.0 - self.decay) * counts[c] as f64;
                    for k in 0..self.dim {
                        sum[k] = self.decay * sum[k]
                            + (1.0 - self.decay) * batch_sum[c * self.dim + k];
                    }
                    for k in 0..self.dim {
                        book[c * self.dim + k] = sum[k] / *sz;
                    }
                    self.stale[d][c] = 0;
                    dirty = true;
                } else {
                    *sz *= self.decay;
                    for k in 0..self.dim {
                        sum[k] *= self.decay;
                    }
                    self.stale[d][c] = self.stale[d][c].saturating_add(1);
                    if self.stale[d][c] >= self.stale_limit {
                        let row = &rows[rng::uniform_usize(r, rows.len())];
                        for k in 0..self.dim {
                            book[c * self.dim + k] = row[k];
                            sum[k] = row[k];
                        }
                        *sz = 1.0;
                        self.stale[d][c] = 0;
                        dirty = true;
                    }
                }
            }
            if dirty {
                let dtype = self.books[d].as_tensor().dtype();
                let new = Tensor::from_vec(book, (self.codes, self.dim), e.device())?
                    .to_dtype(dtype)?;
                self.books[d].set(&new)?;
            }
        }
        Ok(())
    }
}

/// Cumulative commitment loss `sum_n ||E - sg[partial_n]||^2`, summed over
/// depths, positions, and dimensions; the quantized targets are constants
/// for gradient purposes.
pub fn commitment_loss(e: &Tensor, result: &RqResult) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for partial in &result.partials {
        let term = (e - partial.detach())?.sqr()?.sum_all()?;
        total = Some(match total {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| invalid_input!("quantization result holds no depths"))
}

/// Straight-through detail embedding: forward value is the full quantized
/// reconstruction, gradient passes to `e` unchanged.
///
/// Written as `sg[recon] + (e - sg[e])` rather than `e + sg[recon - e]`: the
/// correction term is exactly zero, so the forward value matches the
/// reconstruction bit for bit instead of within a rounding error.
pub fn straight_through(e: &Tensor, result: &RqResult) -> Result<Tensor> {
    let last = result
        .partials
        .last()
        .ok_or_else(|| invalid_input!("quantization result holds no depths"))?;
    Ok((last.detach() + (e - e.detach())?)?)
}

/// Plain scaled dot-product attention: `softmax(q k^T / sqrt(d)) v`.
/// Returns the output and the row-stochastic weight matrix.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_tq, d) = q.dims2()?;
    let (tk, dk) = k.dims2()?;
    if dk != d {
        return Err(crate::shape_mismatch!("query dim {d} vs key dim {dk}"));
    }
    if v.dims2()?.0 != tk {
        return Err(crate::shape_mismatch!("{tk} keys vs {} values", v.dims2()?.0));
    }
    let scores = (q.matmul(&k.t()?)? / (d as f64).sqrt())?;
    let weights = candle_nn::ops::softmax(&scores, candle_core::D::Minus1)?;
    Ok((weights.matmul(v)?, weights))
}

/// Stacked alignment attention mapping reference-rate detail onto the
/// content's frame axis.
pub struct AlignAttention {
    layers: Vec<AlignLayer>,
}

struct AlignLayer {
    wq: Linear,
    wk: Linear,
}

impl AlignAttention {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        let layers = (0..ALIGN_LAYERS)
            .map(|i| {
                Ok(AlignLayer {
                    wq: Linear::new(p, &format!("{name}.l{i}.wq"), RQ_DIM, RQ_DIM, false)?,
                    wk: Linear::new(p, &format!("{name}.l{i}.wk"), RQ_DIM, RQ_DIM, false)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AlignAttention { layers })
    }

    /// `e_c`: `[T, 256]` content at frame rate; `e_d`: `[T_ref, 256]` detail
    /// rows. Queries and keys are learned projections, split over two heads;
    /// values are the raw (position-encoded) detail rows and head outputs
    /// are averaged, so every output row is a convex combination of detail
    /// rows. `use_pe = false` drops the positional terms (test hook).
    pub fn forward(&self, e_c: &Tensor, e_d: &Tensor, use_pe: bool) -> Result<Tensor> {
        let (t, dc) = e_c.dims2()?;
        let (t_ref, dd) = e_d.dims2()?;
        if dc != RQ_DIM || dd != RQ_DIM {
            return Err(crate::shape_mismatch!("content dim {dc} / detail dim {dd}"));
        }
        if t_ref == 0 {
            return Err(invalid_input!("empty reference: no detail rows to align"));
        }
        let dtype = e_c.dtype();
        let dev = e_c.device();
        let ed = if use_pe {
            // Key positions advance 4 source frames per row, so both sides
            // share one time axis.
            (e_d + sinusoidal_pe(t_ref, RQ_DIM, REF_DOWNSAMPLE as f64, dtype, dev)?)?
        } else {
            e_d.clone()
        };
        let mut x = if use_pe {
            (e_c + sinusoidal_pe(t, RQ_DIM, 1.0, dtype, dev)?)?
        } else {
            e_c.clone()
        };
        let hd = RQ_DIM / ALIGN_HEADS;
        for layer in &self.layers {
            let q = layer.wq.forward(&x)?;
            let k = layer.wk.forward(&ed)?;
            let mut acc: Option<Tensor> = None;
            for h in 0..ALIGN_HEADS {
                let qh = q.narrow(1, h * hd, hd)?;
                let kh = k.narrow(1, h * hd, hd)?;
                let (out, _) = scaled_dot_attention(&qh, &kh, &ed)?;
                acc = Some(match acc {
                    Some(a) => (a + out)?,
                    None => out,
                });
            }
            x = (acc.unwrap() / ALIGN_HEADS as f64)?;
        }
        Ok(x)
    }
}

/// Style-specific representation: content plus aligned detail plus the
/// global timbre and emotion embeddings, broadcast over time.
pub fn style_specific_rep(
    e_c: &Tensor,
    aligned: &Tensor,
    e_t: &Tensor,
    e_e: &Tensor,
) -> Result<Tensor> {
    if e_c.dims() != aligned.dims() {
        return Err(crate::shape_mismatch!(
            "content {:?} vs aligned detail {:?}",
            e_c.dims(),
            aligned.dims()
        ));
    }
    let c = e_c.dims2()?.1;
    if e_t.dims() != [c] || e_e.dims() != [c] {
        return Err(crate::shape_mismatch!(
            "style vectors {:?} / {:?} for width {c}",
            e_t.dims(),
            e_e.dims()
        ));
    }
    Ok((e_c + aligned)?
        .broadcast_add(&e_t.unsqueeze(0)?)?
        .broadcast_add(&e_e.unsqueeze(0)?)?)
}

/// The full adaptor: encoder, quantizer, and alignment.
pub struct Rsa {
    pub encoder: RefConvEncoder,
    pub books: RqCodebooks,
    pub align: AlignAttention,
}

impl Rsa {
    pub fn new(p: &mut Params, name: &str) -> Result<Self> {
        Ok(Rsa {
            encoder: RefConvEncoder::new(p, &format!("{name}.enc"))?,
            books: RqCodebooks::new(p, &format!("{name}.rq"))?,
            align: AlignAttention::new(p, &format!("{name}.align"))?,
        })
    }

    /// Encode a reference and quantize it. Returns the straight-through
    /// detail embedding `E_d`, the raw encoding `E`, and the quantization
    /// result for the commitment loss and codebook updates.
    pub fn detailed_embedding(
        &self,
        mel: &Tensor,
        f0: &[f32],
        uv: &[u8],
    ) -> Result<(Tensor, Tensor, RqResult)> {
        let e = self.encoder.forward(mel, f0, uv)?;
        let result = self.books.quantize(&e)?;
        let e_d = straight_through(&e, &result)?;
        Ok((e_d, e, result))
    }
}
