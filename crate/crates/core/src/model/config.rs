use serde::{Deserialize, Serialize};

use super::ModelError;

/// Byte-level vocabulary: 256 byte tokens followed by four specials.
pub const BYTE_VOCAB: u32 = 256;
pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
pub const UNK: u32 = 259;
pub const DESK_VOCAB: u32 = BYTE_VOCAB + 4;

/// Positional encoding scheme. Only fixed sinusoidal positions exist today;
/// the id is written to the model file so the format can grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionScheme {
    Sinusoidal,
}

impl PositionScheme {
    pub fn id(self) -> u32 {
        match self {
            PositionScheme::Sinusoidal => 0,
        }
    }

    pub fn from_id(id: u32) -> Result<Self, ModelError> {
        match id {
            0 => Ok(PositionScheme::Sinusoidal),
            other => Err(ModelError::InvalidConfig(format!("unknown position scheme id {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Edge-side exit points, counted as "after this many layers".
    pub exit_layers: Vec<usize>,
    /// Edge partition is layers `[0, split_layer)`.
    pub split_layer: usize,
    pub position_scheme: PositionScheme,
}

impl Default for ModelConfig {
    /// The desk configuration: 8 layers, hidden 256, exits after layers 2 and 4, split at 4.
    fn default() -> Self {
        ModelConfig {
            num_layers: 8,
            hidden_dim: 256,
            num_heads: 4,
            ffn_dim: 1024,
            vocab_size: DESK_VOCAB as usize,
            max_seq_len: 640,
            exit_layers: vec![2, 4],
            split_layer: 4,
            position_scheme: PositionScheme::Sinusoidal,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.num_layers == 0 {
            return fail("num_layers must be positive".into());
        }
        if self.split_layer == 0 || self.split_layer > self.num_layers {
            return fail(format!(
                "split layer {} outside (0, {}]",
                self.split_layer, self.num_layers
            ));
        }
        if self.hidden_dim == 0 || self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.ffn_dim == 0 {
            return fail("ffn_dim must be positive".into());
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size {} < 2", self.vocab_size));
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be at least 1".into());
        }
        if self.exit_layers.is_empty() {
            return fail("at least one exit layer is required".into());
        }
        for pair in self.exit_layers.windows(2) {
            if pair[0] >= pair[1] {
                return fail(format!("exit layers not strictly increasing: {:?}", self.exit_layers));
            }
        }
        for &e in &self.exit_layers {
            if e == 0 || e > self.split_layer {
                return fail(format!("exit layer {e} outside [1, {}]", self.split_layer));
            }
        }
        // Everything below is serialized as u32.
        let max = u32::MAX as usize;
        if [self.num_layers, self.hidden_dim, self.num_heads, self.ffn_dim, self.vocab_size, self.max_seq_len]
            .iter()
            .any(|&v| v > max)
        {
            return fail("dimension does not fit in u32".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn num_exits(&self) -> usize {
        self.exit_layers.len()
    }

    /// Scale applied to every LM head's logits. Keeps random-weight heads from
    /// collapsing to a uniform distribution.
    pub fn logit_scale(&self) -> f32 {
        (self.hidden_dim as f32).sqrt()
    }

    /// Scale applied to token embeddings before positions are added.
    pub fn embedding_scale(&self) -> f32 {
        (self.hidden_dim as f32).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_split_beyond_depth() {
        let cfg = ModelConfig { split_layer: 9, ..ModelConfig::default() };
        assert!(matches!(cfg.validate(), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn rejects_exit_after_split() {
        let cfg = ModelConfig { exit_layers: vec![2, 5], ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { exit_layers: vec![3, 3], ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { exit_layers: vec![0], ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_bad_heads_and_vocab() {
        let cfg = ModelConfig { num_heads: 3, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { vocab_size: 1, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { max_seq_len: 0, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn split_at_full_depth_is_allowed() {
        let cfg = ModelConfig { split_layer: 8, ..ModelConfig::default() };
        cfg.validate().unwrap();
    }
}
