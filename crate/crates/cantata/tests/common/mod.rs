//! Helpers shared by the integration-test targets: independent oracles and
//! the tolerance constants the suite pins.
#![allow(dead_code)]

/// Tolerance for exact algebraic identities evaluated in f64.
pub const TOL_ALGEBRAIC: f64 = 1e-12;

/// Tolerance for the brute-force multinomial posterior comparison.
pub const TOL_ENUMERATION: f64 = 1e-10;

/// Relative tolerance for finite-difference gradient checks.
pub const TOL_GRAD_REL: f64 = 1e-4;

/// Relative tolerance for the SSIM gradient check (its window convolutions
/// accumulate more rounding).
pub const TOL_GRAD_REL_SSIM: f64 = 1e-3;

/// Transition probability of one categorical diffusion step: stay with
/// `1 - beta + beta/K`, move to any specific other category with `beta/K`.
pub fn step_prob(from: usize, to: usize, beta: f64, k: usize) -> f64 {
    let uniform = beta / k as f64;
    if from == to {
        1.0 - beta + uniform
    } else {
        uniform
    }
}

/// Brute-force Bayes posterior `q(y_{t-1} | y_t, y0)` by enumerating every
/// forward trajectory `(y_1, ..., y_T)` of the chain defined by `betas`.
///
/// Written against the chain's defining single-step kernel only, so it shares
/// no code with the closed-form posterior under test. Returns `None` when the
/// conditioning event `y_t = observed` has zero probability.
pub fn enumerated_posterior(
    betas: &[f64],
    k: usize,
    y0: usize,
    t: usize,
    y_t_observed: usize,
) -> Option<Vec<f64>> {
    let t_total = betas.len();
    assert!((2..=t_total).contains(&t), "oracle covers t in 2..=T");
    let n_traj = k.pow(t_total as u32);
    let mut numer = vec![0.0f64; k];
    let mut denom = 0.0f64;
    for idx in 0..n_traj {
        // Decode idx as the trajectory (y_1, ..., y_T) in base K.
        let mut states = Vec::with_capacity(t_total);
        let mut rest = idx;
        for _ in 0..t_total {
            states.push(rest % k);
            rest /= k;
        }
        if states[t - 1] != y_t_observed {
            continue;
        }
        let mut p = 1.0;
        let mut prev = y0;
        for (step, &s) in states.iter().enumerate() {
            p *= step_prob(prev, s, betas[step], k);
            prev = s;
        }
        denom += p;
        let y_prev = if t == 1 { y0 } else { states[t - 2] };
        numer[y_prev] += p;
    }
    if denom <= 0.0 {
        return None;
    }
    Some(numer.iter().map(|&n| n / denom).collect())
}

/// One-hot `Vec<f64>` of length `k`.
pub fn one_hot(k: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[idx] = 1.0;
    v
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error with an absolute floor, for gradient checks where entries
/// may be near zero.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-8)
}

/// Mean and (unbiased) variance of a sample.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Central-difference gradient check over every registered parameter.
///
/// `loss_fn` must be a deterministic scalar f64 loss (re-seed any dropout
/// stream inside the closure, or run in eval mode). For each variable, up to
/// `per_var` randomly chosen entries are perturbed by a scale-aware step and
/// the numeric slope is compared against autograd, with a relative tolerance
/// over a floored denominator.
pub fn grad_check(
    params: &cantata::nn::Params,
    mut loss_fn: impl FnMut() -> cantata::Result<candle_core::Tensor>,
    per_var: usize,
    rel_tol: f64,
    r: &mut rand_chacha::ChaCha20Rng,
) {
    use candle_core::{DType, Tensor};
    let loss = loss_fn().expect("loss eval");
    assert!(loss.dims().is_empty(), "gradient check needs a scalar loss");
    assert_eq!(loss.dtype(), DType::F64, "gradient check runs in f64");
    let loss_value = loss.to_scalar::<f64>().expect("scalar loss");
    let grads = loss.backward().expect("backward");
    for name in params.names() {
        let var = params.get(&name).expect("registered var").clone();
        let base: Vec<f64> =
            var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let n = base.len();
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => {
                g.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
            }
            // A parameter the loss never touches has zero gradient.
            None => vec![0.0; n],
        };
        let shape = var.as_tensor().dims().to_vec();
        let device = var.as_tensor().device().clone();
        let m = per_var.min(n);
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < m {
            picked.insert(cantata::rng::uniform_usize(r, n));
        }
        for &idx in &picked {
            let h = 1e-5 * (1.0 + base[idx].abs());
            let mut bumped = base.clone();
            bumped[idx] += h;
            var.set(&Tensor::from_vec(bumped, shape.as_slice(), &device).unwrap()).unwrap();
            let lp = loss_fn().unwrap().to_scalar::<f64>().unwrap();
            let mut bumped = base.clone();
            bumped[idx] -= h;
            var.set(&Tensor::from_vec(bumped, shape.as_slice(), &device).unwrap()).unwrap();
            let lm = loss_fn().unwrap().to_scalar::<f64>().unwrap();
            var.set(&Tensor::from_vec(base.clone(), shape.as_slice(), &device).unwrap())
                .unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            // Central differences cannot resolve slopes below the rounding
            // noise of the loss itself (|L| * eps / h). A parameter whose
            // true gradient is zero, like an attention key bias that cancels
            // in softmax, reads as pure noise there; skip those.
            let noise_floor = (1.0 + loss_value.abs()) * 1e-8;
            if analytic[idx].abs() < noise_floor && numeric.abs() < noise_floor {
                continue;
            }
            let denom = analytic[idx].abs().max(numeric.abs()).max(1e-6);
            let err = (analytic[idx] - numeric).abs() / denom;
            assert!(
                err < rel_tol,
                "{name}[{idx}]: analytic {} vs numeric {numeric}, rel err {err}",
                analytic[idx]
            );
        }
    }
}
