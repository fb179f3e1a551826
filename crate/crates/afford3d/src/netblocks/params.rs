//! Named parameter storage with per-block trainability flags.

use crate::rng::Rng;
use crate::tensor::{Tensor, Var};
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered map of every named parameter and buffer in the model. Ordering
/// is lexicographic, which makes hashing, checkpoints and optimizer sweeps
/// deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) {
        let prev = self
            .params
            .insert(name.to_string(), Param { value, trainable });
        assert!(prev.is_none(), "duplicate parameter name `{name}`");
    }

    pub fn get(&self, name: &str) -> &Param {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    /// Graph leaf for a parameter: trainable ones track gradients, frozen
    /// ones enter the graph as constants so backward skips them entirely.
    pub fn var(&self, name: &str) -> Var {
        let p = self.get(name);
        if p.trainable {
            Var::param(p.value.clone(), name)
        } else {
            Var::constant(p.value.clone())
        }
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) {
        let p = self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        assert_eq!(p.value.shape(), value.shape(), "shape change for `{name}`");
        p.value = value;
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Content hash of every parameter whose name starts with `prefix`.
    pub fn hash_prefix(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for (name, p) in &self.params {
            if !name.starts_with(prefix) {
                continue;
            }
            h ^= crate::rng::fnv1a(name.as_bytes());
            h = h.wrapping_mul(0x100000001b3);
            h ^= crate::rng::hash_f64s(p.value.data());
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// Xavier-style init for dense layers.
pub fn init_linear(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let scale = (2.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(
        (0..rows * cols).map(|_| rng.normal() * scale).collect(),
        &[rows, cols],
    )
}

/// He init for convolutions, fan-in based.
pub fn init_conv(rng: &mut Rng, cout: usize, cin: usize, kh: usize, kw: usize) -> Tensor {
    let fan_in = (cin * kh * kw) as f64;
    let scale = (2.0 / fan_in).sqrt();
    Tensor::from_vec(
        (0..cout * cin * kh * kw)
            .map(|_| rng.normal() * scale)
            .collect(),
        &[cout, cin, kh, kw],
    )
}

pub fn init_table(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_vec(
        (0..rows * cols).map(|_| rng.normal() * scale).collect(),
        &[rows, cols],
    )
}
