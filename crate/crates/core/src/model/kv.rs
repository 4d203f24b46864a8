use std::ops::Range;

use super::ModelError;

/// Per-position activations entering layer `layer` (the residual stream).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateBlock {
    pub layer: usize,
    pub first_position: usize,
    pub hidden_dim: usize,
    /// Row-major `num_positions x hidden_dim`.
    pub activations: Vec<f32>,
}

impl HiddenStateBlock {
    pub fn new(layer: usize, first_position: usize, hidden_dim: usize, activations: Vec<f32>) -> Self {
        debug_assert!(hidden_dim > 0 && activations.len() % hidden_dim == 0);
        HiddenStateBlock { layer, first_position, hidden_dim, activations }
    }

    pub fn num_positions(&self) -> usize {
        self.activations.len() / self.hidden_dim
    }

    pub fn positions(&self) -> Range<usize> {
        self.first_position..self.first_position + self.num_positions()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.activations[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }

    pub fn last_row(&self) -> &[f32] {
        self.row(self.num_positions() - 1)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.activations.chunks_exact(self.hidden_dim)
    }
}

/// Keys and values for a contiguous layer range, all layers at the same length.
#[derive(Debug, Clone)]
pub struct KvCache {
    layers: Range<usize>,
    hidden_dim: usize,
    max_seq_len: usize,
    len: usize,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

impl KvCache {
    pub fn new(layers: Range<usize>, hidden_dim: usize, max_seq_len: usize) -> Self {
        let n = layers.len();
        KvCache {
            layers,
            hidden_dim,
            max_seq_len,
            len: 0,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
        }
    }

    pub fn layer_range(&self) -> Range<usize> {
        self.layers.clone()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    pub fn clear(&mut self) {
        self.len = 0;
        self.keys.iter_mut().for_each(Vec::clear);
        self.values.iter_mut().for_each(Vec::clear);
    }

    pub(crate) fn check_append(&self, first_position: usize, n: usize) -> Result<(), ModelError> {
        if first_position != self.len {
            return Err(ModelError::NonContiguous { cached: self.len, first_position });
        }
        if first_position + n > self.max_seq_len {
            return Err(ModelError::SequenceOverflow { needed: first_position + n, max: self.max_seq_len });
        }
        Ok(())
    }

    pub(crate) fn push(&mut self, layer: usize, k: &[f32], v: &[f32]) {
        let i = layer - self.layers.start;
        self.keys[i].extend_from_slice(k);
        self.values[i].extend_from_slice(v);
    }

    pub(crate) fn layer_kv(&self, layer: usize) -> (&[f32], &[f32]) {
        let i = layer - self.layers.start;
        (&self.keys[i], &self.values[i])
    }

    pub(crate) fn set_len(&mut self, len: usize) {
        debug_assert!(self
            .keys
            .iter()
            .all(|k| k.len() == len * self.hidden_dim));
        self.len = len;
    }
}
