use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors of one network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

/// The store's parameters placed on a graph.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Weights drawn from N(0, std); a `std` of 0 gives zeros.
    pub fn add_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = if std > 0.0 {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| dist.sample(rng)).collect()
        } else {
            vec![0.0; n]
        };
        self.add(name, Tensor::from_vec(shape, data).expect("shape matches"))
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> ParamId {
        self.names.push(name.to_string());
        self.values.push(Arc::new(t));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.values.iter().map(|a| a.as_ref())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| g.param(t, trainable)).collect(),
        }
    }

    /// Replace all values, checking names and shapes against the current layout.
    pub fn load(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.values.len() {
            return Err(Error::config(format!(
                "parameter count mismatch: expected {}, found {}",
                self.values.len(),
                entries.len()
            )));
        }
        for (i, (name, t)) in entries.iter().enumerate() {
            if *name != self.names[i] || t.shape() != self.values[i].shape() {
                return Err(Error::config(format!(
                    "parameter {i} mismatch: expected {} {:?}, found {name} {:?}",
                    self.names[i],
                    self.values[i].shape(),
                    t.shape()
                )));
            }
        }
        self.values = entries.into_iter().map(|(_, t)| Arc::new(t)).collect();
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.values.iter().map(|t| (**t).clone())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|t| t.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |s: &ParamStore| s.tensors().map(|t| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Self {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn matches(&self, store: &ParamStore) -> bool {
        self.m.len() == store.len() && self.m.iter().zip(store.tensors()).all(|(m, t)| m.shape() == t.shape())
    }

    /// One update from the gradients of the bound parameters; missing gradients count as zero.
    pub fn update(&mut self, store: &mut ParamStore, bound: &Bound, grads: &Gradients, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..store.values.len() {
            let g = grads.get(bound.vars[i]);
            let mut p = (*store.values[i]).clone();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.numel() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                let mj = beta1 * m.data()[j] + (1.0 - beta1) * gj;
                let vj = beta2 * v.data()[j] + (1.0 - beta2) * gj * gj;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                p.data_mut()[j] -= lr * (mj / bc1) / ((vj / bc2).sqrt() + eps);
            }
            store.values[i] = Arc::new(p);
        }
    }
}
