use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::tensor::{BatchNormParams, Real, Tensor};

/// One named tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T = f32> {
    pub tensor: Tensor<T>,
    /// Logical extents as serialized (rank 1 for biases and BN vectors).
    pub dims: Vec<usize>,
    /// `false` for BN running statistics, which are buffers.
    pub trainable: bool,
}

impl<T: Real> ParamEntry<T> {
    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }
}

/// How [`ParamStore::init`] fills a freshly declared tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-√(6/fan_in), √(6/fan_in))`
    KaimingUniform {
        fan_in: usize,
    },
    /// `U(-1/√fan_in, 1/√fan_in)`
    Bias {
        fan_in: usize,
    },
    Const(f64),
}

/// Named parameters and buffers in graph-construction order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: IndexMap<String, ParamEntry<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: ParamEntry<T>) -> Result<()> {
        let name = name.into();
        if entry.dims.iter().product::<usize>() != entry.tensor.len() {
            return config_err(format!("{name}: dims {:?} disagree with tensor", entry.dims));
        }
        if self.entries.contains_key(&name) {
            return config_err(format!("duplicate parameter name {name}"));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub(crate) fn declare(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: String,
        dims: Vec<usize>,
        init: Init,
        trainable: bool,
    ) -> Result<()> {
        let shape = match dims.as_slice() {
            [a] => [*a, 1, 1, 1],
            [a, b, c, d] => [*a, *b, *c, *d],
            other => return config_err(format!("{name}: unsupported rank {}", other.len())),
        };
        let bound = match init {
            Init::KaimingUniform { fan_in } => (6.0 / fan_in as f64).sqrt(),
            Init::Bias { fan_in } => 1.0 / (fan_in as f64).sqrt(),
            Init::Const(_) => 0.0,
        };
        let tensor = match init {
            Init::Const(v) => Tensor::full(shape, T::of(v)),
            _ => Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound))),
        };
        self.insert(
            name,
            ParamEntry {
                tensor,
                dims,
                trainable,
            },
        )
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<T>> {
        self.entries.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        match self.entries.get(name) {
            Some(e) => Ok(&e.tensor),
            None => config_err(format!("missing parameter {name}")),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Trainable element count.
    pub fn num_params(&self) -> usize {
        self.entries.values().filter(|e| e.trainable).map(ParamEntry::len).sum()
    }

    /// Buffer (running statistics) element count.
    pub fn num_buffers(&self) -> usize {
        self.entries
            .values()
            .filter(|e| !e.trainable)
            .map(ParamEntry::len)
            .sum()
    }

    /// Sets every element of every entry whose name starts with `prefix` and
    /// ends with `suffix`. Returns the number of entries touched.
    pub fn fill(&mut self, prefix: &str, suffix: &str, value: f64) -> usize {
        let mut touched = 0;
        for (name, e) in self.entries.iter_mut() {
            if name.starts_with(prefix) && name.ends_with(suffix) {
                e.tensor.data_mut().iter_mut().for_each(|v| *v = T::of(value));
                touched += 1;
            }
        }
        touched
    }

    /// Zeros the convolution and linear weights under `prefix`, leaving BN
    /// layers untouched. Returns the number of tensors zeroed.
    pub fn zero_weights(&mut self, prefix: &str) -> usize {
        let mut touched = 0;
        for (name, e) in self.entries.iter_mut() {
            if name.starts_with(prefix) && name.ends_with(".weight") && !name.ends_with(".bn.weight") {
                e.tensor.data_mut().iter_mut().for_each(|v| *v = T::zero());
                touched += 1;
            }
        }
        touched
    }

    /// Draws every BN layer's scale and variance from U(0.5, 1.5) and its
    /// shift and mean from U(-0.3, 0.3). Finite-difference checks need this:
    /// with identity BN, channels zeroed by an upstream ReLU6 reach the next
    /// activation at exactly 0, which is a kink.
    pub fn randomize_batchnorm(&mut self, seed: u64) {
        let mut rng = seeded_rng(seed);
        for (name, e) in self.entries.iter_mut() {
            let (lo, hi) = if name.ends_with(".bn.weight") || name.ends_with(".bn.running_var") {
                (0.5, 1.5)
            } else if name.ends_with(".bn.bias") || name.ends_with(".bn.running_mean") {
                (-0.3, 0.3)
            } else {
                continue;
            };
            e.tensor
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = T::of(rng.gen_range(lo..hi)));
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry {
                            tensor: e.tensor.cast(),
                            dims: e.dims.clone(),
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Frozen batch-norm parameters stored under `prefix`.
    pub fn batchnorm(&self, prefix: &str, eps: f64) -> Result<BatchNormParams<T>> {
        let v = |s: &str| self.tensor(&format!("{prefix}.{s}")).map(|t| t.data().to_vec());
        Ok(BatchNormParams {
            gamma: v("weight")?,
            beta: v("bias")?,
            mean: v("running_mean")?,
            var: v("running_var")?,
            eps: T::of(eps),
        })
    }
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
