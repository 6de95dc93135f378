//! Hand-written layers with explicit forward caches and backward passes.
//!
//! Every trainable structure implements [`Module`], which exposes its
//! tensors by name. The same traversal drives the optimizer, gradient
//! containers (a zeroed clone of the model), and checkpoints.

pub mod attention;
pub mod audio;
pub mod cf_encoder;
pub mod checkpoint;
pub mod conv;
pub mod genre;
pub mod layers;
pub mod optim;

use rand::{Rng as _, SeedableRng};

use crate::rng::Rng;

pub use audio::{AudioConfig, AudioEncoder};
pub use cf_encoder::{CfEncoder, CfEncoderConfig};
pub use genre::{GenreConfig, GenreEncoder};
pub use layers::{BatchNorm, LayerNorm, Linear, Sequential, SequentialLayer};
pub use optim::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

#[derive(Debug, PartialEq)]
pub struct ParamRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    pub trainable: bool,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
    pub trainable: bool,
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub trait Module {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>);

    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out
    }

    fn num_trainable(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.data.len())
            .sum()
    }

    /// A same-shaped clone with every tensor zeroed; used as a gradient buffer.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.data.fill(0.0);
        }
        z
    }

    fn scale(&mut self, factor: f64) {
        for p in self.params_mut() {
            p.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// `self += other` for trainable tensors.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            if a.trainable {
                a.data.iter_mut().zip(b.data).for_each(|(x, y)| *x += y);
            }
        }
    }
}

impl<M: Module> Module for Option<M> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        if let Some(m) = self {
            m.visit(prefix, out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        if let Some(m) = self {
            m.visit_mut(prefix, out);
        }
    }
}

/// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub(crate) fn fan_in_uniform(rng: &mut Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Independent per-item streams drawn from a parent, so per-sample work can
/// run in parallel without changing results.
pub(crate) fn child_rngs(rng: &mut Rng, n: usize) -> Vec<Rng> {
    (0..n).map(|_| Rng::seed_from_u64(rng.random())).collect()
}
