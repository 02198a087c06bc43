//! Reference encoding, residual quantization, and alignment attention.

mod common;

use candle_core::{DType, Device, Tensor};
use cantata::nn::Params;
use cantata::rsa::{
    commitment_loss, f0_reference_channels, scaled_dot_attention, straight_through,
    style_specific_rep, AlignAttention, RefConvEncoder, RqCodebooks, Rsa, RQ_DIM,
};
use cantata::{rng, Result};
use common::{grad_check, TOL_GRAD_REL};

fn dev() -> Device {
    Device::Cpu
}

fn tensor_f64(data: Vec<f64>, shape: (usize, usize)) -> Tensor {
    Tensor::from_vec(data, shape, &dev()).unwrap()
}

#[test]
fn pitch_channels_interpolate_log_f0_across_unvoiced_gaps() {
    let f0 = [220.0, 0.0, 0.0, 440.0, 0.0];
    let uv = [1u8, 0, 0, 1, 0];
    let (logf, flags) = f0_reference_channels(&f0, &uv).unwrap();
    assert_eq!(flags, vec![1.0, 0.0, 0.0, 1.0, 0.0]);
    let lo = (220.0f32 / 220.0).ln();
    let hi = (440.0f32 / 220.0).ln();
    assert!((logf[0] - lo).abs() < 1e-6);
    assert!((logf[3] - hi).abs() < 1e-6);
    // Interior gap rises linearly between the voiced endpoints.
    assert!((logf[1] - (lo + (hi - lo) / 3.0)).abs() < 1e-6);
    assert!((logf[2] - (lo + 2.0 * (hi - lo) / 3.0)).abs() < 1e-6);
    // The trailing gap holds the last voiced value.
    assert!((logf[4] - hi).abs() < 1e-6);

    let (silent, silent_flags) = f0_reference_channels(&[0.0; 4], &[0u8; 4]).unwrap();
    assert_eq!(silent, vec![0.0; 4]);
    assert_eq!(silent_flags, vec![0.0; 4]);

    assert!(f0_reference_channels(&[100.0; 3], &[1u8; 2]).is_err());
    assert!(f0_reference_channels(&[0.0, 100.0], &[1, 1]).is_err());
}

#[test]
fn encoder_downsamples_time_by_four() {
    let mut p = Params::new(DType::F32, &dev(), 11);
    let enc = RefConvEncoder::new(&mut p, "enc").unwrap();
    let mut r = rng::stream(3, "enc-shapes");
    for t in 1..=13usize {
        let mel_data: Vec<f64> = rng::normal_vec(&mut r, t * cantata::dsp::MEL_BINS);
        let mel = Tensor::from_vec(mel_data, (t, cantata::dsp::MEL_BINS), &dev())
            .unwrap()
            .to_dtype(DType::F32)
            .unwrap();
        let f0 = vec![220.0f32; t];
        let uv = vec![1u8; t];
        let out = enc.forward(&mel, &f0, &uv).unwrap();
        assert_eq!(out.dims(), [t.div_ceil(4), RQ_DIM], "t = {t}");
    }

    let mel = Tensor::zeros((6, cantata::dsp::MEL_BINS), DType::F32, &dev()).unwrap();
    assert!(enc.forward(&mel, &[100.0; 5], &[1; 6]).is_err());
    assert!(enc.forward(&mel, &[100.0; 6], &[1; 5]).is_err());
    let narrow = Tensor::zeros((6, 40), DType::F32, &dev()).unwrap();
    assert!(enc.forward(&narrow, &[100.0; 6], &[1; 6]).is_err());
}

#[test]
fn zero_reference_with_fresh_convs_encodes_to_zero() {
    // Freshly initialized convolutions carry zero biases, so an all-zero
    // input (silent mel, fully unvoiced pitch) maps to exactly zero.
    let mut p = Params::new(DType::F32, &dev(), 21);
    let enc = RefConvEncoder::new(&mut p, "enc").unwrap();
    let mel = Tensor::zeros((9, cantata::dsp::MEL_BINS), DType::F32, &dev()).unwrap();
    let out = enc.forward(&mel, &[0.0; 9], &[0; 9]).unwrap();
    let flat: Vec<f32> = out.flatten_all().unwrap().to_vec1().unwrap();
    assert!(flat.iter().all(|&x| x == 0.0));
}

#[test]
fn toy_quantization_matches_the_worked_example() {
    let mut p = Params::new(DType::F64, &dev(), 1);
    let mut books = RqCodebooks::with_shape(&mut p, "q", 2, 2, 1).unwrap();
    books.set_book(0, &tensor_f64(vec![-1.0, 1.0], (2, 1))).unwrap();
    books.set_book(1, &tensor_f64(vec![-0.5, 0.5], (2, 1))).unwrap();

    let e = tensor_f64(vec![0.7], (1, 1));
    let res = books.quantize(&e).unwrap();
    // 0.7 sits nearest 1.0 in the first book; the residual -0.3 sits nearest
    // -0.5 in the second.
    assert_eq!(res.codes, vec![vec![1], vec![0]]);
    let partial2 = res.partials[1].to_vec2::<f64>().unwrap()[0][0];
    assert!((partial2 - 0.5).abs() < 1e-12);
    let r1 = res.residuals[0].to_vec2::<f64>().unwrap()[0][0];
    let r2 = res.residuals[1].to_vec2::<f64>().unwrap()[0][0];
    assert!((r1 - (-0.3)).abs() < 1e-12);
    assert!((r2 - 0.2).abs() < 1e-12);
}

#[test]
fn commitment_loss_matches_the_worked_sum() {
    let mut p = Params::new(DType::F64, &dev(), 2);
    let mut books = RqCodebooks::with_shape(&mut p, "q", 4, 2, 1).unwrap();
    books.set_book(0, &tensor_f64(vec![-1.0, 1.0], (2, 1))).unwrap();
    books.set_book(1, &tensor_f64(vec![-0.5, 0.5], (2, 1))).unwrap();
    // Books three and four effectively hold only the zero codeword.
    books.set_book(2, &tensor_f64(vec![0.0, 99.0], (2, 1))).unwrap();
    books.set_book(3, &tensor_f64(vec![0.0, 99.0], (2, 1))).unwrap();

    let e = tensor_f64(vec![0.7], (1, 1));
    let res = books.quantize(&e).unwrap();
    let loss = commitment_loss(&e, &res).unwrap().to_scalar::<f64>().unwrap();

    // Partials are 1, 0.5, 0.5, 0.5, so the per-depth squared errors are
    // 0.09, 0.04, 0.04, 0.04, accumulated in depth order.
    let a = (0.7f64 - 1.0) * (0.7f64 - 1.0);
    let b = (0.7f64 - 0.5) * (0.7f64 - 0.5);
    let expected = ((a + b) + b) + b;
    assert_eq!(loss, expected);
    assert!((loss - 0.21).abs() < 1e-15);
}

#[test]
fn commitment_gradient_is_twice_the_summed_residuals() -> Result<()> {
    let mut p_books = Params::new(DType::F64, &dev(), 3);
    let books = RqCodebooks::with_shape(&mut p_books, "q", 4, 8, 5)?;

    let mut p_in = Params::new(DType::F64, &dev(), 4);
    let e_var = p_in.var("e", &[3, 5], cantata::nn::Init::Normal(1.0))?;

    let e = e_var.as_tensor().clone();
    let res = books.quantize(&e)?;
    let loss = commitment_loss(&e, &res)?;
    let grads = loss.backward()?;
    let got: Vec<f64> =
        grads.get(&e).unwrap().flatten_all()?.to_vec1()?;

    // d/dE sum_n ||E - sg[partial_n]||^2 = sum_n 2 (E - partial_n).
    let mut want: Option<Tensor> = None;
    for partial in &res.partials {
        let term = ((&e - partial)? * 2.0)?;
        want = Some(match want {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    let want: Vec<f64> = want.unwrap().flatten_all()?.to_vec1()?;
    assert!(common::max_abs_diff(&got, &want) < 1e-12);

    let mut r = rng::stream(5, "commit-grad");
    grad_check(
        &p_in,
        || {
            let e = p_in.get("e").unwrap().as_tensor().clone();
            let res = books.quantize(&e)?;
            commitment_loss(&e, &res)
        },
        6,
        TOL_GRAD_REL,
        &mut r,
    );
    Ok(())
}

#[test]
fn straight_through_passes_gradient_to_the_encoding() -> Result<()> {
    let mut p_books = Params::new(DType::F64, &dev(), 6);
    let books = RqCodebooks::with_shape(&mut p_books, "q", 3, 8, 4)?;
    let mut p_in = Params::new(DType::F64, &dev(), 7);
    let e_var = p_in.var("e", &[2, 4], cantata::nn::Init::Normal(1.0))?;
    let e = e_var.as_tensor().clone();

    let res = books.quantize(&e)?;
    let out = straight_through(&e, &res)?;

    // Forward value equals the full reconstruction.
    let out_v: Vec<f64> = out.flatten_all()?.to_vec1()?;
    let rec_v: Vec<f64> = res.partials.last().unwrap().flatten_all()?.to_vec1()?;
    assert_eq!(out_v, rec_v);

    // The gradient of sum(out^2) w.r.t. E is 2 * reconstruction: the
    // quantizer contributes identity to the backward pass.
    let loss = out.sqr()?.sum_all()?;
    let grads = loss.backward()?;
    let got: Vec<f64> = grads.get(&e).unwrap().flatten_all()?.to_vec1()?;
    let want: Vec<f64> = rec_v.iter().map(|v| 2.0 * v).collect();
    assert!(common::max_abs_diff(&got, &want) < 1e-12);
    Ok(())
}

#[test]
fn exact_codeword_input_reconstructs_and_is_idempotent() -> Result<()> {
    let mut p = Params::new(DType::F64, &dev(), 8);
    let mut books = RqCodebooks::with_shape(&mut p, "q", 4, 4, 3)?;
    let mut r = rng::stream(9, "exact-rep");
    // First book holds the target at index 2; deeper books keep a zero row
    // far from their other codes.
    let target = vec![0.8, -1.1, 0.4];
    let mut book0: Vec<f64> = rng::normal_vec(&mut r, 4 * 3);
    book0[2 * 3..3 * 3].copy_from_slice(&target);
    books.set_book(0, &tensor_f64(book0, (4, 3)))?;
    for d in 1..4 {
        let mut b: Vec<f64> = rng::normal_vec(&mut r, 4 * 3).iter().map(|x| x + 5.0).collect();
        b[0..3].copy_from_slice(&[0.0, 0.0, 0.0]);
        books.set_book(d, &tensor_f64(b, (4, 3)))?;
    }

    let e = tensor_f64(target.clone(), (1, 3));
    let res = books.quantize(&e)?;
    assert_eq!(res.codes[0], vec![2]);
    for d in 1..4 {
        assert_eq!(res.codes[d], vec![0], "deeper books add the zero codeword");
    }
    let rec: Vec<f64> = res.partials[3].flatten_all()?.to_vec1()?;
    assert_eq!(rec, target, "reconstruction is exact");
    for residual in &res.residuals {
        let r: Vec<f64> = residual.flatten_all()?.to_vec1()?;
        assert!(r.iter().all(|&x| x == 0.0));
    }

    // Quantizing the reconstruction again selects the same codes.
    let again = books.quantize(&res.partials[3].clone())?;
    assert_eq!(again.codes, res.codes);
    Ok(())
}

#[test]
fn greedy_selection_matches_per_depth_exhaustive_search() -> Result<()> {
    let depth = 4;
    let codes = 16;
    let dim = 4;
    let mut p = Params::new(DType::F64, &dev(), 10);
    let mut books = RqCodebooks::with_shape(&mut p, "q", depth, codes, dim)?;
    let mut r = rng::stream(11, "greedy-oracle");
    let mut host_books: Vec<Vec<Vec<f64>>> = Vec::new();
    for d in 0..depth {
        let flat = rng::normal_vec(&mut r, codes * dim);
        host_books.push(flat.chunks(dim).map(|c| c.to_vec()).collect());
        books.set_book(d, &tensor_f64(flat.clone(), (codes, dim)))?;
    }

    for case in 0..1000 {
        let input = rng::normal_vec(&mut r, dim);
        let e = tensor_f64(input.clone(), (1, dim));
        let res = books.quantize(&e)?;

        // Oracle: per-depth exhaustive scan over every code, with the
        // residual recomputed against the accumulated partial sum.
        let mut partial = vec![0.0f64; dim];
        let mut want_codes = Vec::new();
        for book in &host_books {
            let residual: Vec<f64> =
                input.iter().zip(&partial).map(|(x, p)| x - p).collect();
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, code) in book.iter().enumerate() {
                let d: f64 =
                    residual.iter().zip(code).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            want_codes.push(best as u32);
            for (p, c) in partial.iter_mut().zip(&book[best]) {
                *p += c;
            }
        }
        let got: Vec<u32> = res.codes.iter().map(|c| c[0]).collect();
        assert_eq!(got, want_codes, "case {case}");
        let rec: Vec<f64> = res.partials[depth - 1].flatten_all()?.to_vec1()?;
        assert!(common::max_abs_diff(&rec, &partial) < 1e-12);
    }
    Ok(())
}

#[test]
fn zero_codeword_books_never_increase_residual_norms() -> Result<()> {
    let depth = 4;
    let codes = 8;
    let dim = 6;
    let mut p = Params::new(DType::F64, &dev(), 12);
    let mut books = RqCodebooks::with_shape(&mut p, "q", depth, codes, dim)?;
    let mut r = rng::stream(13, "zero-code");
    for d in 0..depth {
        let mut flat = rng::normal_vec(&mut r, codes * dim);
        // Inject a zero codeword; picking it keeps the residual unchanged,
        // so the greedy choice can only shrink the norm.
        let hole = rng::uniform_usize(&mut r, codes);
        for k in 0..dim {
            flat[hole * dim + k] = 0.0;
        }
        books.set_book(d, &tensor_f64(flat, (codes, dim)))?;
    }

    for _ in 0..50 {
        let input = rng::normal_vec(&mut r, dim);
        let e = tensor_f64(input.clone(), (1, dim));
        let res = books.quantize(&e)?;
        let mut prev = input.iter().map(|x| x * x).sum::<f64>().sqrt();
        for residual in &res.residuals {
            let rv: Vec<f64> = residual.flatten_all()?.to_vec1()?;
            let norm = rv.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= prev + 1e-12, "residual norm grew: {norm} > {prev}");
            prev = norm;
        }
    }
    Ok(())
}

#[test]
fn repeated_identical_residuals_pull_the_assigned_code_onto_them() -> Result<()> {
    let mut p = Params::new(DType::F64, &dev(), 14);
    let mut books = RqCodebooks::with_shape(&mut p, "q", 1, 2, 4)?;
    books.set_book(0, &tensor_f64(vec![0.0, 0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 10.0], (2, 4)))?;
    books.stale_limit = 10_000;
    let v = vec![0.05, -0.03, 0.02, 0.01];
    let e = tensor_f64(v.clone(), (1, 4));
    let mut r = rng::stream(15, "ema");
    for _ in 0..500 {
        let res = books.quantize(&e)?;
        assert_eq!(res.codes[0], vec![0]);
        books.update(&e, &res, &mut r)?;
    }
    let book = books.book(0).to_vec2::<f64>()?;
    let dist = v.iter().zip(&book[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    assert!(dist < 1e-3, "assigned code distance {dist}");
    // The code that was never assigned has not moved at all.
    assert_eq!(book[1], vec![10.0, 10.0, 10.0, 10.0]);
    Ok(())
}

#[test]
fn stale_codes_are_reseeded_from_batch_residuals() -> Result<()> {
    let mut p = Params::new(DType::F64, &dev(), 16);
    let mut books = RqCodebooks::with_shape(&mut p, "q", 1, 2, 4)?;
    books.set_book(0, &tensor_f64(vec![0.0, 0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 10.0], (2, 4)))?;
    let v = vec![0.05, -0.03, 0.02, 0.01];
    let e = tensor_f64(v.clone(), (1, 4));
    let mut r = rng::stream(17, "reseed");
    for _ in 0..99 {
        let res = books.quantize(&e)?;
        books.update(&e, &res, &mut r)?;
    }
    let before = books.book(0).to_vec2::<f64>()?;
    assert_eq!(before[1], vec![10.0, 10.0, 10.0, 10.0], "one step short of the limit");
    let res = books.quantize(&e)?;
    books.update(&e, &res, &mut r)?;
    let after = books.book(0).to_vec2::<f64>()?;
    assert_eq!(after[1], v, "reseeded from the only batch residual");
    Ok(())
}

#[test]
fn zero_decay_snaps_codes_to_the_batch_mean() -> Result<()> {
    let mut p = Params::new(DType::F64, &dev(), 18);
    let mut books = RqCodebooks::with_shape(&mut p, "q", 1, 2, 2)?;
    books.set_book(0, &tensor_f64(vec![0.0, 0.0, 10.0, 10.0], (2, 2)))?;
    books.decay = 0.0;
    let rows = vec![0.2, 0.1, 0.3, -0.1, 0.1, 0.0];
    let e = tensor_f64(rows.clone(), (3, 2));
    let res = books.quantize(&e)?;
    assert_eq!(res.codes[0], vec![0, 0, 0]);
    let mut r = rng::stream(19, "decay0");
    books.update(&e, &res, &mut r)?;
    let book = books.book(0).to_vec2::<f64>()?;
    let mean = [(0.2 + 0.3 + 0.1) / 3.0, (0.1 - 0.1 + 0.0) / 3.0];
    assert!((book[0][0] - mean[0]).abs() < 1e-12);
    assert!((book[0][1] - mean[1]).abs() < 1e-12);
    Ok(())
}

#[test]
fn alignment_weights_match_the_two_key_hand_case() {
    // One query, two keys, one dimension: scores are exactly 0 and ln 4, so
    // the weights are (0.2, 0.8) and the blended value is 2.6.
    let q = tensor_f64(vec![1.0], (1, 1));
    let k = tensor_f64(vec![0.0, 4.0f64.ln()], (2, 1));
    let v = tensor_f64(vec![1.0, 3.0], (2, 1));
    let (out, weights) = scaled_dot_attention(&q, &k, &v).unwrap();
    let w = weights.to_vec2::<f64>().unwrap();
    assert!((w[0][0] - 0.2).abs() < 1e-12);
    assert!((w[0][1] - 0.8).abs() < 1e-12);
    let o = out.to_vec2::<f64>().unwrap();
    assert!((o[0][0] - 2.6).abs() < 1e-12);
}

#[test]
fn alignment_weights_are_convex_row_by_row() {
    let mut r = rng::stream(20, "align-rows");
    let q = tensor_f64(rng::normal_vec(&mut r, 5 * 8), (5, 8));
    let k = tensor_f64(rng::normal_vec(&mut r, 7 * 8), (7, 8));
    let v = tensor_f64(rng::normal_vec(&mut r, 7 * 3), (7, 3));
    let (_, weights) = scaled_dot_attention(&q, &k, &v).unwrap();
    for row in weights.to_vec2::<f64>().unwrap() {
        assert!(row.iter().all(|&w| w >= 0.0));
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "row sums to {sum}");
    }
    assert!(scaled_dot_attention(&q, &tensor_f64(vec![0.0; 6], (1, 6)), &v).is_err());
}

#[test]
fn single_row_references_pass_through_unchanged() -> Result<()> {
    let mut p = Params::new(DType::F64, &dev(), 22);
    let align = AlignAttention::new(&mut p, "align")?;
    let mut r = rng::stream(23, "single-row");
    let e_c = tensor_f64(rng::normal_vec(&mut r, 5 * RQ_DIM), (5, RQ_DIM));
    let row = rng::normal_vec(&mut r, RQ_DIM);
    let e_d = tensor_f64(row.clone(), (1, RQ_DIM));
    let out = align.forward(&e_c, &e_d, false)?;
    for out_row in out.to_vec2::<f64>()? {
        assert!(common::max_abs_diff(&out_row, &row) < 1e-12);
    }
    Ok(())
}

#[test]
fn identical_reference_rows_dominate_any_query() -> Result<()> {
    let mut p = Params::new(DType::F64, &dev(), 24);
    let align = AlignAttention::new(&mut p, "align")?;
    let mut r = rng::stream(25, "identical-rows");
    let e_c = tensor_f64(rng::normal_vec(&mut r, 4 * RQ_DIM), (4, RQ_DIM));
    let row = rng::normal_vec(&mut r, RQ_DIM);
    let mut tiled = Vec::new();
    for _ in 0..6 {
        tiled.extend_from_slice(&row);
    }
    let e_d = tensor_f64(tiled, (6, RQ_DIM));
    let out = align.forward(&e_c, &e_d, false)?;
    for out_row in out.to_vec2::<f64>()? {
        assert!(common::max_abs_diff(&out_row, &row) < 1e-9);
    }
    Ok(())
}

#[test]
fn empty_references_are_rejected() {
    let mut p = Params::new(DType::F32, &dev(), 26);
    let align = AlignAttention::new(&mut p, "align").unwrap();
    let e_c = Tensor::zeros((3, RQ_DIM), DType::F32, &dev()).unwrap();
    let e_d = Tensor::zeros((0, RQ_DIM), DType::F32, &dev()).unwrap();
    assert!(align.forward(&e_c, &e_d, true).is_err());

    let enc = RefConvEncoder::new(&mut p, "enc").unwrap();
    let mel = Tensor::zeros((0, cantata::dsp::MEL_BINS), DType::F32, &dev()).unwrap();
    assert!(enc.forward(&mel, &[], &[]).is_err());
}

#[test]
fn alignment_passes_the_gradient_check() -> Result<()> {
    let mut p = Params::new(DType::F64, &dev(), 27);
    let align = AlignAttention::new(&mut p, "align")?;
    let e_c = p.var("e_c", &[3, RQ_DIM], cantata::nn::Init::Normal(0.5))?;
    let e_d = p.var("e_d", &[2, RQ_DIM], cantata::nn::Init::Normal(0.5))?;
    let mut r = rng::stream(28, "align-grad");
    grad_check(
        &p,
        || {
            let out =
                align.forward(e_c.as_tensor(), e_d.as_tensor(), true)?;
            Ok(out.sqr()?.mean_all()?)
        },
        3,
        TOL_GRAD_REL,
        &mut r,
    );
    Ok(())
}

#[test]
fn style_sum_matches_the_two_frame_hand_case() {
    let e_c = tensor_f64(vec![1.0, 0.0, 0.0, 1.0], (2, 2));
    let aligned = tensor_f64(vec![0.5, 0.5, 0.5, 0.5], (2, 2));
    let e_t = Tensor::from_vec(vec![10.0, 20.0], 2, &dev()).unwrap();
    let e_e = Tensor::from_vec(vec![0.1, 0.2], 2, &dev()).unwrap();
    let out = style_specific_rep(&e_c, &aligned, &e_t, &e_e).unwrap();
    let rows = out.to_vec2::<f64>().unwrap();
    assert!(common::max_abs_diff(&rows[0], &[11.6, 20.7]) < 1e-12);
    assert!(common::max_abs_diff(&rows[1], &[10.6, 21.7]) < 1e-12);

    // All-zero style terms leave the content untouched.
    let zero2 = tensor_f64(vec![0.0; 4], (2, 2));
    let zerov = Tensor::from_vec(vec![0.0, 0.0], 2, &dev()).unwrap();
    let plain = style_specific_rep(&e_c, &zero2, &zerov, &zerov).unwrap();
    assert_eq!(plain.to_vec2::<f64>().unwrap(), e_c.to_vec2::<f64>().unwrap());

    // The sum is additive in the timbre term.
    let shift = Tensor::from_vec(vec![1.5, -2.5], 2, &dev()).unwrap();
    let shifted = style_specific_rep(&e_c, &aligned, &(&e_t + &shift).unwrap(), &e_e).unwrap();
    let base_plus = out.broadcast_add(&shift.unsqueeze(0).unwrap()).unwrap();
    let diff: Vec<f64> = (shifted - base_plus)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    assert!(diff.iter().all(|d| d.abs() < 1e-12));

    let bad = tensor_f64(vec![0.0; 6], (3, 2));
    assert!(style_specific_rep(&e_c, &bad, &e_t, &e_e).is_err());
    let bad_vec = Tensor::from_vec(vec![0.0; 3], 3, &dev()).unwrap();
    assert!(style_specific_rep(&e_c, &aligned, &bad_vec, &e_e).is_err());
}

#[test]
fn full_adaptor_produces_frame_rate_style() -> Result<()> {
    let mut p = Params::new(DType::F32, &dev(), 29);
    let rsa = Rsa::new(&mut p, "rsa")?;
    let mut r = rng::stream(30, "full-rsa");
    let t_ref = 13usize;
    let mel_data: Vec<f64> = rng::normal_vec(&mut r, t_ref * cantata::dsp::MEL_BINS);
    let mel = Tensor::from_vec(mel_data, (t_ref, cantata::dsp::MEL_BINS), &dev())?
        .to_dtype(DType::F32)?;
    let f0: Vec<f32> = (0..t_ref).map(|i| 200.0 + 3.0 * i as f32).collect();
    let uv = vec![1u8; t_ref];

    let (e_d, e_raw, res) = rsa.detailed_embedding(&mel, &f0, &uv)?;
    assert_eq!(e_d.dims(), [4, RQ_DIM]);
    assert_eq!(e_raw.dims(), [4, RQ_DIM]);
    assert_eq!(res.codes.len(), cantata::rsa::RQ_DEPTH);
    assert_eq!(res.codes[0].len(), 4);
    let ed_v: Vec<f32> = e_d.flatten_all()?.to_vec1()?;
    let rec_v: Vec<f32> = res.partials.last().unwrap().flatten_all()?.to_vec1()?;
    assert_eq!(ed_v, rec_v);

    // A diverse batch spreads over more than one code.
    let spread = rng::normal_vec(&mut r, 32 * RQ_DIM);
    let batch = Tensor::from_vec(spread, (32, RQ_DIM), &dev())?.to_dtype(DType::F32)?;
    let spread_res = rsa.books.quantize(&batch)?;
    let distinct: std::collections::BTreeSet<u32> =
        spread_res.codes[0].iter().copied().collect();
    assert!(distinct.len() >= 2, "one code swallowed the whole batch");

    let t = 10usize;
    let e_c_data: Vec<f64> = rng::normal_vec(&mut r, t * RQ_DIM);
    let e_c = Tensor::from_vec(e_c_data, (t, RQ_DIM), &dev())?.to_dtype(DType::F32)?;
    let aligned = rsa.align.forward(&e_c, &e_d, true)?;
    assert_eq!(aligned.dims(), [t, RQ_DIM]);

    let e_t_data: Vec<f64> = rng::normal_vec(&mut r, RQ_DIM);
    let e_t = Tensor::from_vec(e_t_data, RQ_DIM, &dev())?.to_dtype(DType::F32)?;
    let e_e_data: Vec<f64> = rng::normal_vec(&mut r, RQ_DIM);
    let e_e = Tensor::from_vec(e_e_data, RQ_DIM, &dev())?.to_dtype(DType::F32)?;
    let e_s = style_specific_rep(&e_c, &aligned, &e_t, &e_e)?;
    assert_eq!(e_s.dims(), [t, RQ_DIM]);
    let flat: Vec<f32> = e_s.flatten_all()?.to_vec1()?;
    assert!(flat.iter().all(|x| x.is_finite()));
    Ok(())
}
