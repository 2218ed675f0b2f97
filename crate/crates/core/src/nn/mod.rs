//! Thin neural-network toolkit over candle: seeded parameter store, layer
//! constructors, backbones, and optimizer helpers. All parameter
//! initialization draws from caller-provided RNGs so that runs are
//! reproducible independent of device RNG state.

mod backbone;
mod layers;

pub use backbone::{build_backbone, Backbone, BackboneKind, ProjectionHead};
pub use layers::{Conv2dLayer, ConvTranspose2dLayer, GroupNormLayer, LinearLayer};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW, SGD};
use rand::Rng;

use crate::error::{Error, Result};

/// Ordered collection of named trainable parameters.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    params: Vec<(String, Var)>,
}

/// Weight initialization schemes; values are drawn in f64 and cast to the
/// store dtype.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Kaiming/He normal with the given fan-in.
    KaimingNormal { fan_in: usize },
    Uniform { lo: f64, hi: f64 },
    Normal { std: f64 },
    Zeros,
    Ones,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        ParamStore {
            device,
            dtype,
            params: Vec::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Create (or fail on duplicate) a named parameter and return its graph
    /// tensor. The returned tensor shares identity with the stored [`Var`],
    /// so gradients land on it during backprop.
    pub fn param(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::Argument(format!("duplicate parameter `{name}`")));
        }
        let count: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..count).map(|_| std * gaussian(rng)).collect()
            }
            Init::Uniform { lo, hi } => (0..count).map(|_| rng.random_range(lo..=hi)).collect(),
            Init::Normal { std } => (0..count).map(|_| std * gaussian(rng)).collect(),
            Init::Zeros => vec![0.0; count],
            Init::Ones => vec![1.0; count],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.params.push((name.to_string(), var));
        Ok(out)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .map(|(_, v)| v.as_tensor().elem_count())
            .sum()
    }

    /// Flatten all parameters to (name, shape, f32 values) triples.
    pub fn export(&self) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
        self.params
            .iter()
            .map(|(n, v)| {
                let t = v.as_tensor().to_dtype(DType::F32)?;
                let values = t.flatten_all()?.to_vec1::<f32>()?;
                Ok((n.clone(), v.as_tensor().dims().to_vec(), values))
            })
            .collect()
    }

    /// Overwrite all parameters from exported triples; names and shapes must
    /// match exactly (same architecture).
    pub fn import(&mut self, data: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        if data.len() != self.params.len() {
            return Err(Error::Argument(format!(
                "parameter count mismatch: checkpoint {} vs architecture {}",
                data.len(),
                self.params.len()
            )));
        }
        for ((name, var), (ck_name, shape, values)) in self.params.iter().zip(data) {
            if name != ck_name || var.as_tensor().dims() != shape.as_slice() {
                return Err(Error::Argument(format!(
                    "parameter mismatch: `{ck_name}` {shape:?} vs `{name}` {:?}",
                    var.as_tensor().dims()
                )));
            }
            let t = Tensor::from_vec(values.clone(), shape.as_slice(), &self.device)?
                .to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> Result<bool> {
        for (_, v) in &self.params {
            let values = v
                .as_tensor()
                .to_dtype(DType::F32)?
                .flatten_all()?
                .to_vec1::<f32>()?;
            if values.iter().any(|x| !x.is_finite()) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Box–Muller; two uniform draws per sample keeps the stream layout simple.
fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Adam with the conventional betas and no weight decay.
pub fn adam(vars: Vec<Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

pub fn sgd(vars: Vec<Var>, lr: f64) -> Result<SGD> {
    Ok(SGD::new(vars, lr)?)
}

/// Step-decay schedule: the rate is multiplied by `factor` after each epoch
/// listed in `decay_epochs` (1-based) has completed.
pub fn lr_at_epoch(initial: f64, decay_epochs: &[usize], factor: f64, epoch: usize) -> f64 {
    let decays = decay_epochs.iter().filter(|&&e| epoch > e).count();
    initial * factor.powi(decays as i32)
}

/// Mean loss value as f64, erroring out on NaN/Inf so training loops can
/// report the failing step.
pub fn scalar_loss(t: &Tensor) -> Result<f64> {
    let v = t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss: {v}")));
    }
    Ok(v)
}
