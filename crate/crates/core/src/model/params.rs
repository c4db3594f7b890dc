use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SspdError};

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    Kaiming { fan_in: usize },
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform { fan_in: usize },
    Const(f64),
}

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
    index: HashMap<String, usize>,
    dtype: DType,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn insert(&mut self, name: &str, var: Var) -> Result<()> {
        if var.dtype() != self.dtype {
            return Err(SspdError::Shape(format!(
                "parameter {name} has dtype {:?}, store holds {:?}",
                var.dtype(),
                self.dtype
            )));
        }
        if let Some(&i) = self.index.get(name) {
            self.entries[i].1 = var;
        } else {
            self.index.insert(name.to_string(), self.entries.len());
            self.entries.push((name.to_string(), var));
        }
        Ok(())
    }

    pub fn init(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Result<()> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Kaiming { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| normal.sample(rng)).collect()
            }
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        self.insert(name, Var::from_tensor(&t)?)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn var(&self, name: &str) -> Result<&Var> {
        self.get(name)
            .ok_or_else(|| SspdError::Shape(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count, optionally restricted to names with a given prefix.
    pub fn count(&self, prefix: Option<&str>) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| prefix.is_none_or(|p| n.starts_with(p)))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Independent copy with fresh storage.
    pub fn deep_clone(&self) -> Result<Self> {
        let mut out = Self::new(self.dtype);
        for (name, var) in &self.entries {
            out.insert(name, Var::from_tensor(&var.as_tensor().copy()?)?)?;
        }
        Ok(out)
    }

    /// Copy without the parameters whose names start with `prefix`.
    pub fn without_prefix(&self, prefix: &str) -> Result<Self> {
        let mut out = Self::new(self.dtype);
        for (name, var) in self.entries.iter().filter(|(n, _)| !n.starts_with(prefix)) {
            out.insert(name, Var::from_tensor(&var.as_tensor().copy()?)?)?;
        }
        Ok(out)
    }

    /// Overwrites every parameter here with the same-named one from `other`.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        for (name, var) in &self.entries {
            let src = other.var(name)?;
            if src.shape() != var.shape() {
                return Err(SspdError::Shape(format!(
                    "parameter {name}: {:?} vs {:?}",
                    var.shape(),
                    src.shape()
                )));
            }
            var.set(&src.as_tensor().copy()?)?;
        }
        Ok(())
    }

    /// Read-only view used by forward passes.
    pub fn view(&self, track: bool) -> ParamView<'_> {
        ParamView { store: self, track }
    }

    pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}

/// Parameter access for a forward pass: tracked (gradients flow) or detached.
#[derive(Debug, Clone, Copy)]
pub struct ParamView<'a> {
    store: &'a ParamStore,
    track: bool,
}

impl ParamView<'_> {
    pub fn get(&self, name: &str) -> Result<Tensor> {
        let var = self.store.var(name)?;
        Ok(if self.track {
            var.as_tensor().clone()
        } else {
            var.as_detached_tensor()
        })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn tracks(&self) -> bool {
        self.track
    }
}
