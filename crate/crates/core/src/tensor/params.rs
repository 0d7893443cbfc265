use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dense::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Named trainable tensors. Iteration order is lexicographic by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for name in self.params.keys().filter(|n| n.starts_with(prefix)) {
            if frozen {
                self.frozen.insert(name.clone());
            } else {
                self.frozen.remove(name);
            }
        }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn trainable(&self) -> impl Iterator<Item = &str> {
        self.names().filter(|n| !self.frozen.contains(*n))
    }

    /// Dense layer weights `fan_in × fan_out` with scaled normal init, plus zero bias `1 × fan_out`.
    pub fn init_linear(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) {
        let std = gain / (fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let w = Tensor::from_fn(fan_in, fan_out, |_, _| normal.sample(rng));
        self.insert(format!("{prefix}.weight"), w);
        self.insert(format!("{prefix}.bias"), Tensor::zeros(1, fan_out));
    }

    /// Zeroes every parameter under `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn to_container(&self) -> ParamContainer {
        ParamContainer {
            format_version: FORMAT_VERSION,
            params: self
                .params
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: vec![t.rows(), t.cols()],
                            values: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_container(c: ParamContainer) -> Result<Self> {
        if c.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                c.format_version
            )));
        }
        let mut store = ParamStore::new();
        for (name, st) in c.params {
            let (r, cols) = match st.shape.as_slice() {
                [r, c] => (*r, *c),
                [n] => (1, *n),
                other => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has unsupported shape {other:?}"
                    )))
                }
            };
            let t = Tensor::new(r, cols, st.values)
                .map_err(|e| Error::Checkpoint(format!("parameter `{name}`: {e}")))?;
            store.insert(name, t);
        }
        Ok(store)
    }
}

/// On-disk form: parameter name → shape + row-major values.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamContainer {
    pub format_version: u32,
    pub params: BTreeMap<String, StoredTensor>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}
