//! Named trainable tensors and their checkpoint container.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// All trainable tensors of a model, keyed by a dotted id such as
/// `scan1.wq`. Iteration order is the lexicographic id order, which makes
/// every pass over the store deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    seed: u64,
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            params: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Adds a tensor under a fresh id.
    pub fn insert(&mut self, id: impl Into<String>, value: Tensor) -> Result<()> {
        let id = id.into();
        if self.params.contains_key(&id) {
            return Err(Error::config(format!("duplicate parameter id {id:?}")));
        }
        self.params.insert(id, value);
        Ok(())
    }

    /// Weight matrix drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// with `fan_in = rows`. The stream is derived from the store seed and the
    /// id, so adding a parameter never perturbs the others.
    pub fn insert_uniform(&mut self, id: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert_uniform_fan(id, rows, cols, rows)
    }

    pub fn insert_uniform_fan(&mut self, id: &str, rows: usize, cols: usize, fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = SplitMix64::new(derive_seed(self.seed, id));
        let t = Tensor::from_fn(rows, cols, |_, _| rng.uniform(-bound, bound));
        self.insert(id, t)
    }

    pub fn insert_zeros(&mut self, id: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert(id, Tensor::zeros(rows, cols))
    }

    pub fn get(&self, id: &str) -> Result<&Tensor> {
        self.params
            .get(id)
            .ok_or_else(|| Error::State(format!("unknown parameter {id:?}")))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(id)
            .ok_or_else(|| Error::State(format!("unknown parameter {id:?}")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.params.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of scalar entries across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Same ids and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    pub fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        for t in self.params.values_mut() {
            for v in t.data_mut() {
                *v = f(*v);
            }
        }
    }

    pub fn to_container(&self) -> ParamContainer {
        ParamContainer {
            format: CONTAINER_FORMAT.to_string(),
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.clone(),
                    shape: [t.rows(), t.cols()],
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_container(container: &ParamContainer) -> Result<Self> {
        if container.format != CONTAINER_FORMAT {
            return Err(Error::config(format!(
                "unsupported parameter container format {:?}",
                container.format
            )));
        }
        let mut store = Self::new(container.seed);
        for e in &container.params {
            let t = Tensor::from_vec(e.shape[0], e.shape[1], e.values.clone())
                .map_err(|err| Error::config(format!("parameter {:?}: {err}", e.name)))?;
            store.insert(e.name.clone(), t)?;
        }
        Ok(store)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_container())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let container: ParamContainer = serde_json::from_str(&text)?;
        Self::from_container(&container)
    }
}

pub const CONTAINER_FORMAT: &str = "caf-params/1";

/// Self-describing checkpoint layout: named shapes and flat row-major values.
/// Values are written with shortest round-trip formatting, so a save/load
/// cycle reproduces every bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamContainer {
    pub format: String,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}
