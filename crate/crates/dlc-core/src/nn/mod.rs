//! Minimal dense-network machinery: MLPs, one self-attention block family,
//! AdamW, and a finite-difference gradient checker.
//!
//! Every model keeps its trainable parameters in a single flat `Vec<f32>`
//! described by a [`ParamLayout`] of named arrays. That one representation
//! serves the optimizer, the checkpoint writer, and the gradient checker
//! without adapters. Forward kernels are generic over [`crate::math::Real`]
//! so the checker can evaluate losses in f64 (see [`gradcheck`]).

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

pub mod adamw;
pub mod attention;
pub mod gradcheck;
pub mod kernels;
pub mod mlp;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use attention::{AttentionStack, AttentionStackCache};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use mlp::{Mlp, MlpArch, MlpCache};

use crate::rng::Rng;

/// Nonlinearity used by MLP hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    SiLU,
    ReLU,
}

/// One named parameter array inside a flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Names and shapes of every array in a model's flat parameter vector.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Range<usize> {
        let entry = ParamEntry {
            name: name.into(),
            shape,
            offset: self.total,
        };
        let range = entry.range();
        self.total = range.end;
        self.entries.push(entry);
        range
    }

    /// Appends every entry of `other` under `prefix.`; returns the span the
    /// merged component occupies.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamLayout) -> Range<usize> {
        let start = self.total;
        for e in &other.entries {
            self.push(alloc::format!("{prefix}.{}", e.name), e.shape.clone());
        }
        start..self.total
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Name of the array containing flat index `i`.
    pub fn name_of_index(&self, i: usize) -> &str {
        self.entries
            .iter()
            .find(|e| e.range().contains(&i))
            .map(|e| e.name.as_str())
            .unwrap_or("<unknown>")
    }
}

/// Fills `out` with N(0, scale²) entries.
pub fn init_normal(out: &mut [f32], scale: f32, rng: &mut Rng) {
    for v in out.iter_mut() {
        *v = rng.standard_normal() * scale;
    }
}
