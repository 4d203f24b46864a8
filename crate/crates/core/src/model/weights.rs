use std::sync::OnceLock;

use super::config::ModelConfig;
use super::prng::TensorStream;
use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub ffn_norm: Vec<f32>,
    /// `ffn_dim x hidden_dim`
    pub w1: Vec<f32>,
    /// `hidden_dim x ffn_dim`
    pub w2: Vec<f32>,
}

/// Norm gain plus a bias-free `vocab x hidden` projection.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub norm: Vec<f32>,
    pub proj: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        TensorSpec { name: name.into(), shape: shape.to_vec() }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Norm gains start near one; everything else is a raw draw.
    fn is_gain(&self) -> bool {
        self.name.ends_with("norm")
    }
}

/// Canonical tensor order shared by generation, the file format and `Model::tensors`.
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let (d, f, v) = (cfg.hidden_dim, cfg.ffn_dim, cfg.vocab_size);
    let mut specs = vec![TensorSpec::new("tok_embedding", &[v, d])];
    for l in 0..cfg.num_layers {
        let p = format!("layers.{l}");
        specs.push(TensorSpec::new(format!("{p}.attn_norm"), &[d]));
        specs.push(TensorSpec::new(format!("{p}.wq"), &[d, d]));
        specs.push(TensorSpec::new(format!("{p}.wk"), &[d, d]));
        specs.push(TensorSpec::new(format!("{p}.wv"), &[d, d]));
        specs.push(TensorSpec::new(format!("{p}.wo"), &[d, d]));
        specs.push(TensorSpec::new(format!("{p}.ffn_norm"), &[d]));
        specs.push(TensorSpec::new(format!("{p}.w1"), &[f, d]));
        specs.push(TensorSpec::new(format!("{p}.w2"), &[d, f]));
    }
    for i in 0..cfg.num_exits() {
        specs.push(TensorSpec::new(format!("exits.{i}.norm"), &[d]));
        specs.push(TensorSpec::new(format!("exits.{i}.head"), &[v, d]));
    }
    specs.push(TensorSpec::new("final.norm", &[d]));
    specs.push(TensorSpec::new("final.head", &[v, d]));
    specs
}

#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub embedding: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    pub exits: Vec<HeadWeights>,
    pub final_head: HeadWeights,
    fingerprint: OnceLock<[u8; 32]>,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            embedding: self.embedding.clone(),
            layers: self.layers.clone(),
            exits: self.exits.clone(),
            final_head: self.final_head.clone(),
            fingerprint: self.fingerprint.clone(),
        }
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.embedding == other.embedding
            && self.layers == other.layers
            && self.exits == other.exits
            && self.final_head == other.final_head
    }
}

impl Model {
    /// Deterministic random weights keyed on `(seed, tensor name, element index)`.
    pub fn generate(config: &ModelConfig, seed: u64) -> Result<Model, ModelError> {
        config.validate()?;
        let tensors = tensor_specs(config)
            .into_iter()
            .map(|spec| {
                let stream = TensorStream::new(seed, &spec.name);
                let mut data = stream.fill(spec.numel());
                if spec.is_gain() {
                    data.iter_mut().for_each(|w| *w += 1.0);
                }
                data
            })
            .collect();
        Model::from_tensors(config.clone(), tensors)
    }

    /// Assembles a model from tensors in canonical order, checking sizes and finiteness.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Vec<f32>>) -> Result<Model, ModelError> {
        config.validate()?;
        let specs = tensor_specs(&config);
        if specs.len() != tensors.len() {
            return Err(ModelError::Format(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if spec.numel() != t.len() {
                return Err(ModelError::Format(format!(
                    "tensor {} has {} elements, expected {}",
                    spec.name,
                    t.len(),
                    spec.numel()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(spec.name.clone()));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked above");
        let embedding = next();
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                attn_norm: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ffn_norm: next(),
                w1: next(),
                w2: next(),
            })
            .collect();
        let exits = (0..config.num_exits())
            .map(|_| HeadWeights { norm: next(), proj: next() })
            .collect();
        let final_head = HeadWeights { norm: next(), proj: next() };
        Ok(Model { config, embedding, layers, exits, final_head, fingerprint: OnceLock::new() })
    }

    /// Tensors in canonical order, paired with their specs.
    pub fn tensors(&self) -> Vec<(TensorSpec, &[f32])> {
        let mut out: Vec<&[f32]> = vec![&self.embedding];
        for l in &self.layers {
            out.extend([
                &l.attn_norm[..],
                &l.wq,
                &l.wk,
                &l.wv,
                &l.wo,
                &l.ffn_norm,
                &l.w1,
                &l.w2,
            ]);
        }
        for h in &self.exits {
            out.extend([&h.norm[..], &h.proj]);
        }
        out.extend([&self.final_head.norm[..], &self.final_head.proj]);
        tensor_specs(&self.config).into_iter().zip(out).collect()
    }

    /// Backbone weights: embedding, all layers and the final norm/head. Exit heads excluded.
    pub fn backbone_weight_count(&self) -> usize {
        self.embedding.len()
            + self.layers.iter().map(LayerWeights::weight_count).sum::<usize>()
            + self.final_head.weight_count()
    }

    pub fn exit_weight_count(&self) -> usize {
        self.exits.iter().map(HeadWeights::weight_count).sum()
    }

    /// SHA-256 of the serialized model file, computed once.
    pub fn fingerprint(&self) -> [u8; 32] {
        *self.fingerprint.get_or_init(|| {
            use sha2::{Digest, Sha256};
            let mut hasher = Sha256::new();
            hasher.update(super::file::to_bytes(self));
            hasher.finalize().into()
        })
    }
}

impl LayerWeights {
    pub fn weight_count(&self) -> usize {
        self.attn_norm.len()
            + self.wq.len()
            + self.wk.len()
            + self.wv.len()
            + self.wo.len()
            + self.ffn_norm.len()
            + self.w1.len()
            + self.w2.len()
    }
}

impl HeadWeights {
    pub fn weight_count(&self) -> usize {
        self.norm.len() + self.proj.len()
    }
}
