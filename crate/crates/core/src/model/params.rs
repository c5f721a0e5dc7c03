//! Named parameter store with seeded initialization.
//!
//! Plugs into `candle_nn::VarBuilder` so layers are built the usual way, but
//! every freshly initialized tensor draws from a generator keyed by
//! `(seed, tensor name)`. Initialization therefore does not depend on the
//! order in which layers are constructed.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::{FanInOut, NormalOrUniform};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;

/// Running statistics are state, not trainable parameters.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

#[derive(Default)]
struct Inner {
    vars: BTreeMap<String, Var>,
    preset: HashMap<String, Tensor>,
}

#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    seed: u64,
    /// Names under this prefix must come from the preset tensors.
    strict_prefix: Option<String>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            inner: Arc::new(Mutex::new(Inner::default())),
            seed,
            strict_prefix: None,
        }
    }

    /// Tensors returned verbatim instead of being initialized.
    pub fn preset(&self, tensors: HashMap<String, Tensor>) {
        self.inner.lock().expect("store lock").preset.extend(tensors);
    }

    pub fn require_preset_under(&mut self, prefix: &str) {
        self.strict_prefix = Some(prefix.to_string());
    }

    pub fn var_builder(&self, dtype: DType, device: &Device) -> VarBuilder<'static> {
        VarBuilder::from_backend(Box::new(self.clone()), dtype, device.clone())
    }

    pub fn names(&self) -> Vec<String> {
        self.inner.lock().expect("store lock").vars.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.inner.lock().expect("store lock").vars.get(name).cloned()
    }

    /// Trainable variables whose names start with `prefix`, in name order.
    pub fn trainable(&self, prefix: &str) -> Vec<(String, Var)> {
        self.inner
            .lock()
            .expect("store lock")
            .vars
            .iter()
            .filter(|(n, _)| n.starts_with(prefix) && !is_buffer(n))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    }

    pub fn parameter_count(&self, prefix: &str) -> usize {
        self.trainable(prefix).iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: HashMap<String, Tensor> = self
            .inner
            .lock()
            .expect("store lock")
            .vars
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, path).map_err(Error::from)
    }

    /// Overwrites existing variables with tensors from `path`; every stored variable must be present.
    pub fn load_into(&self, path: &Path) -> Result<()> {
        let loaded = candle_core::safetensors::load(path, &Device::Cpu).map_err(|e| Error::Weights {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let inner = self.inner.lock().expect("store lock");
        for (name, var) in &inner.vars {
            let tensor = loaded.get(name).ok_or_else(|| Error::Weights {
                path: path.to_path_buf(),
                reason: format!("tensor `{name}` missing"),
            })?;
            if tensor.shape() != var.shape() {
                return Err(Error::Weights {
                    path: path.to_path_buf(),
                    reason: format!("tensor `{name}` has shape {:?}, expected {:?}", tensor.shape(), var.shape()),
                });
            }
            var.set(&tensor.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }

    fn init_tensor(&self, shape: &Shape, name: &str, init: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        let n = shape.elem_count();
        let mut rng = seed::rng(seed::derive(self.seed, seed::name_key(name)));
        let values: Vec<f64> = match init {
            Init::Const(v) => vec![v; n],
            Init::Randn { mean, stdev } => (0..n)
                .map(|_| mean + stdev * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect(),
            Init::Uniform { lo, up } => (0..n).map(|_| rng.random_range(lo..up)).collect(),
            Init::Kaiming { dist, fan, non_linearity } => {
                let fan = match fan {
                    FanInOut::FanIn => FanInOut::FanIn.for_shape(shape),
                    FanInOut::FanOut => FanInOut::FanOut.for_shape(shape),
                };
                let std = non_linearity.gain() / (fan as f64).sqrt();
                match dist {
                    NormalOrUniform::Normal => (0..n)
                        .map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect(),
                    NormalOrUniform::Uniform => {
                        let bound = 3f64.sqrt() * std;
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    }
                }
            }
        };
        Tensor::from_vec(values, shape.clone(), dev)?.to_dtype(dtype)
    }
}

impl SimpleBackend for ParamStore {
    fn get(&self, s: Shape, name: &str, h: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        {
            let inner = self.inner.lock().expect("store lock");
            if let Some(var) = inner.vars.get(name) {
                if var.shape() != &s {
                    candle_core::bail!("parameter `{name}` requested with shape {s:?} but has {:?}", var.shape());
                }
                return Ok(var.as_tensor().clone());
            }
        }
        let preset = self.inner.lock().expect("store lock").preset.get(name).cloned();
        let tensor = match preset {
            Some(t) => {
                if t.shape() != &s {
                    candle_core::bail!("loaded tensor `{name}` has shape {:?}, expected {s:?}", t.shape());
                }
                t.to_dtype(dtype)?.to_device(dev)?
            }
            None => {
                if let Some(prefix) = &self.strict_prefix {
                    if name.starts_with(prefix.as_str()) {
                        candle_core::bail!("tensor `{name}` missing from the loaded weights");
                    }
                }
                self.init_tensor(&s, name, h, dtype, dev)?
            }
        };
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        self.inner.lock().expect("store lock").vars.insert(name.to_string(), var);
        Ok(out)
    }

    fn get_unchecked(&self, name: &str, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        let inner = self.inner.lock().expect("store lock");
        if let Some(var) = inner.vars.get(name) {
            return var.as_tensor().to_dtype(dtype)?.to_device(dev);
        }
        match inner.preset.get(name) {
            Some(t) => t.to_dtype(dtype)?.to_device(dev),
            None => candle_core::bail!("no tensor named `{name}`"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        let inner = self.inner.lock().expect("store lock");
        inner.vars.contains_key(name) || inner.preset.contains_key(name)
    }
}
