//! Named, seeded parameter storage.
//!
//! Parameters are created lazily by layer constructors through a [`Scope`],
//! initialized from a ChaCha stream so that model construction is fully
//! deterministic for a given seed.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Const(f64),
    /// Gaussian with mean 0.
    Normal(f64),
    /// He initialization for ReLU networks.
    Kaiming { fan_in: usize },
}

#[derive(Debug, Clone)]
pub struct Param {
    pub var: Var,
    pub trainable: bool,
}

struct Inner {
    params: BTreeMap<String, Param>,
    rng: ChaCha8Rng,
}

#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("dtype", &self.dtype)
            .field("len", &self.len())
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                params: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope {
        Scope { store: self.clone(), prefix: String::new() }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters and buffers, ordered by name.
    pub fn entries(&self) -> Vec<(String, Param)> {
        let inner = self.inner.lock().unwrap();
        inner.params.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.entries()
            .into_iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, p)| (k, p.var))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.inner.lock().unwrap().params.get(name).map(|p| p.var.clone())
    }

    /// Overwrite an existing entry, checking its shape.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        if var.dims() != value.dims() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for `{name}`: model {:?}, file {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    fn create(&self, name: String, shape: Shape, init: Init, trainable: bool) -> Result<Var> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(p) = inner.params.get(&name) {
            if p.var.shape() != &shape {
                return Err(Error::InvalidInput(format!(
                    "parameter `{name}` requested with shape {shape:?}, exists as {:?}",
                    p.var.shape()
                )));
            }
            return Ok(p.var.clone());
        }
        let n = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => sample_normal(&mut inner.rng, std, n),
            Init::Kaiming { fan_in } => {
                sample_normal(&mut inner.rng, (2.0 / fan_in.max(1) as f64).sqrt(), n)
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        inner.params.insert(name, Param { var: var.clone(), trainable });
        Ok(var)
    }
}

fn sample_normal(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n];
    }
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Hierarchical name prefix into a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Scope {
    store: ParamStore,
    prefix: String,
}

impl Scope {
    pub fn pp(&self, name: impl AsRef<str>) -> Scope {
        let name = name.as_ref();
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Scope { store: self.store.clone(), prefix }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn param(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Tensor> {
        Ok(self.store.create(self.full(name), shape.into(), init, true)?.as_tensor().clone())
    }

    /// Non-trainable state such as batch-norm running statistics.
    pub fn buffer(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Var> {
        self.store.create(self.full(name), shape.into(), init, false)
    }

    /// Overwrite an already-created entry with a constant.
    pub fn fill(&self, name: &str, value: f64) -> Result<()> {
        let full = self.full(name);
        let var = self
            .store
            .get(&full)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{full}`")))?;
        let t = (var.as_tensor().ones_like()? * value)?;
        var.set(&t)?;
        Ok(())
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}
