//! Named parameter registry with per-name seeded initialization.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;

use crate::{invalid_input, rng, Result};

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Zero-mean Gaussian with the given standard deviation.
    Normal(f64),
    Uniform(f64, f64),
}

/// A flat, name-keyed collection of trainable variables.
///
/// Names are hierarchical by convention (`"frontend.fft0.attn.wq"`). Each
/// variable's init stream is derived from `(seed, name)`, so the values never
/// depend on registration order. Iteration order is the sorted name order,
/// which is what makes optimizer state and checkpoints reproducible.
pub struct Params {
    dtype: DType,
    device: Device,
    seed: u64,
    vars: BTreeMap<String, Var>,
}

impl Params {
    pub fn new(dtype: DType, device: &Device, seed: u64) -> Self {
        Params { dtype, device: device.clone(), seed, vars: BTreeMap::new() }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Create and register a variable. Names must be unique.
    pub fn var(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<Var> {
        let name = name.into();
        if self.vars.contains_key(&name) {
            return Err(invalid_input!("duplicate parameter name {name:?}"));
        }
        let n: usize = shape.iter().product();
        // Draws happen in f64 and are cast down, so f32 and f64 builds of the
        // same model start from the same underlying values.
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => {
                let mut r = rng::stream(self.seed, &format!("init/{name}"));
                rng::normal_vec(&mut r, n).into_iter().map(|x| x * std).collect()
            }
            Init::Uniform(lo, hi) => {
                let mut r = rng::stream(self.seed, &format!("init/{name}"));
                (0..n).map(|_| r.gen::<f64>() * (hi - lo) + lo).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    /// All variables in sorted-name order (the order the optimizer sees).
    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.vars.values().map(|v| v.as_tensor().elem_count()).sum()
    }

    /// Export every variable's data as f64 vectors with shapes, in name
    /// order.
    pub fn state(&self) -> Result<BTreeMap<String, (Vec<usize>, Vec<f64>)>> {
        let mut out = BTreeMap::new();
        for (name, var) in &self.vars {
            let t = var.as_tensor().to_dtype(DType::F64)?;
            let shape = t.dims().to_vec();
            let data = t.flatten_all()?.to_vec1::<f64>()?;
            out.insert(name.clone(), (shape, data));
        }
        Ok(out)
    }

    /// Overwrite every variable from `state`. The name sets and shapes must
    /// match exactly; a checkpoint for a different architecture is rejected.
    pub fn load_state(&mut self, state: &BTreeMap<String, (Vec<usize>, Vec<f64>)>) -> Result<()> {
        if state.len() != self.vars.len() {
            return Err(invalid_input!(
                "state has {} parameters, model has {}",
                state.len(),
                self.vars.len()
            ));
        }
        for (name, var) in &self.vars {
            let (shape, data) = state
                .get(name)
                .ok_or_else(|| invalid_input!("state missing parameter {name:?}"))?;
            if shape != var.as_tensor().dims() {
                return Err(crate::shape_mismatch!(
                    "parameter {name:?}: state shape {shape:?} vs model {:?}",
                    var.as_tensor().dims()
                ));
            }
            let t = Tensor::from_vec(data.clone(), shape.as_slice(), &self.device)?
                .to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }
}
