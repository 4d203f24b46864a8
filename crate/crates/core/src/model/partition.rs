use std::ops::Range;

use super::config::ModelConfig;
use super::forward::{embed, head_logits, run_layers};
use super::kv::{HiddenStateBlock, KvCache};
use super::weights::{HeadWeights, LayerWeights, Model};
use super::{Logits, ModelError};

/// Layers `[0, k)` with the embedding table and every exit head.
#[derive(Debug, Clone)]
pub struct EdgePartition {
    config: ModelConfig,
    embedding: Vec<f32>,
    layers: Vec<LayerWeights>,
    exits: Vec<HeadWeights>,
}

/// Layers `[k, L)` with the final norm and LM head.
#[derive(Debug, Clone)]
pub struct CloudPartition {
    config: ModelConfig,
    layers: Vec<LayerWeights>,
    final_head: HeadWeights,
}

impl Model {
    /// Splits at layer `k`. Every weight lands in exactly one partition.
    pub fn split(&self, k: usize) -> Result<(EdgePartition, CloudPartition), ModelError> {
        let config = ModelConfig { split_layer: k, ..self.config.clone() };
        config.validate()?;
        let edge = EdgePartition {
            config: config.clone(),
            embedding: self.embedding.clone(),
            layers: self.layers[..k].to_vec(),
            exits: self.exits.clone(),
        };
        let cloud = CloudPartition {
            config,
            layers: self.layers[k..].to_vec(),
            final_head: self.final_head.clone(),
        };
        Ok((edge, cloud))
    }
}

impl EdgePartition {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn split_layer(&self) -> usize {
        self.config.split_layer
    }

    pub fn layer_range(&self) -> Range<usize> {
        0..self.config.split_layer
    }

    pub fn exit_layers(&self) -> &[usize] {
        &self.config.exit_layers
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(self.layer_range(), self.config.hidden_dim, self.config.max_seq_len)
    }

    pub fn embed(&self, tokens: &[u32], first_position: usize) -> Result<HiddenStateBlock, ModelError> {
        embed(&self.config, &self.embedding, tokens, first_position)
    }

    /// Runs every edge layer; `after_layer(l, block)` fires once layer `l` is done.
    pub fn forward(
        &self,
        input: &HiddenStateBlock,
        cache: &mut KvCache,
        after_layer: impl FnMut(usize, &HiddenStateBlock),
    ) -> Result<HiddenStateBlock, ModelError> {
        run_layers(&self.config, &self.layers, self.layer_range(), input, cache, after_layer)
    }

    pub fn exit_logits(&self, exit_index: usize, activation: &[f32]) -> Result<Logits, ModelError> {
        let head = self.exits.get(exit_index).ok_or(ModelError::InvalidExit(exit_index))?;
        Ok(head_logits(&self.config, head, activation))
    }

    pub fn weight_count(&self) -> usize {
        self.embedding.len()
            + self.layers.iter().map(LayerWeights::weight_count).sum::<usize>()
            + self.exits.iter().map(HeadWeights::weight_count).sum::<usize>()
    }
}

impl CloudPartition {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn split_layer(&self) -> usize {
        self.config.split_layer
    }

    pub fn layer_range(&self) -> Range<usize> {
        self.config.split_layer..self.config.num_layers
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(self.layer_range(), self.config.hidden_dim, self.config.max_seq_len)
    }

    pub fn forward(&self, input: &HiddenStateBlock, cache: &mut KvCache) -> Result<HiddenStateBlock, ModelError> {
        if self.layers.is_empty() {
            // Nothing to run, but keep the position bookkeeping honest.
            cache.check_append(input.first_position, input.num_positions())?;
            cache.set_len(input.first_position + input.num_positions());
            let mut out = input.clone();
            out.layer = self.config.num_layers;
            return Ok(out);
        }
        run_layers(&self.config, &self.layers, self.layer_range(), input, cache, |_, _| {})
    }

    pub fn final_logits(&self, activation: &[f32]) -> Logits {
        head_logits(&self.config, &self.final_head, activation)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(LayerWeights::weight_count).sum::<usize>() + self.final_head.weight_count()
    }
}
