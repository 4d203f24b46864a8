//! `.celm` model file.
//!
//! ```text
//! "CELM"                    4 bytes
//! version                   u16 (= 1)
//! num_layers .. position_scheme, num_exits, exit_layers[..]   u32 each
//! tensor_count              u32
//! manifest, per tensor:     name_len u16, name bytes, rank u8, dims u32 x rank
//! data, per tensor:         f32 x numel
//! ```
//!
//! All integers and floats little-endian, no padding. See `docs/MODEL_FORMAT.md`.

use std::fs;
use std::path::Path;

use super::config::{ModelConfig, PositionScheme};
use super::weights::{tensor_specs, Model, TensorSpec};
use super::ModelError;

pub const MAGIC: &[u8; 4] = b"CELM";
pub const FORMAT_VERSION: u16 = 1;

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let cfg = &model.config;
    let tensors = model.tensors();
    let data_len: usize = tensors.iter().map(|(s, _)| s.numel() * 4).sum();
    let mut out = Vec::with_capacity(data_len + 4096);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let header = [
        cfg.num_layers,
        cfg.hidden_dim,
        cfg.num_heads,
        cfg.ffn_dim,
        cfg.vocab_size,
        cfg.max_seq_len,
        cfg.split_layer,
        cfg.position_scheme.id() as usize,
        cfg.exit_layers.len(),
    ];
    for v in header.iter().chain(&cfg.exit_layers) {
        out.extend_from_slice(&(*v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (spec, _) in &tensors {
        out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.push(spec.shape.len() as u8);
        for &d in &spec.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, data) in &tensors {
        for v in data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::Format(format!("unexpected end of file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model, ModelError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::Format("bad magic, not a CELM model file".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Format(format!("unsupported format version {version}")));
    }
    let num_layers = r.u32()?;
    let hidden_dim = r.u32()?;
    let num_heads = r.u32()?;
    let ffn_dim = r.u32()?;
    let vocab_size = r.u32()?;
    let max_seq_len = r.u32()?;
    let split_layer = r.u32()?;
    let position_scheme = PositionScheme::from_id(r.u32()? as u32)?;
    let num_exits = r.u32()?;
    if num_exits > num_layers.max(1) {
        return Err(ModelError::Format(format!("implausible exit count {num_exits}")));
    }
    let exit_layers = (0..num_exits).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let config = ModelConfig {
        num_layers,
        hidden_dim,
        num_heads,
        ffn_dim,
        vocab_size,
        max_seq_len,
        exit_layers,
        split_layer,
        position_scheme,
    };
    config.validate()?;

    let expected = tensor_specs(&config);
    let count = r.u32()?;
    if count != expected.len() {
        return Err(ModelError::Format(format!(
            "manifest lists {count} tensors, config implies {}",
            expected.len()
        )));
    }
    for want in &expected {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ModelError::Format("tensor name is not utf-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let got = TensorSpec { name: name.to_string(), shape };
        if &got != want {
            return Err(ModelError::Format(format!(
                "manifest entry {got:?} does not match expected {want:?}"
            )));
        }
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for spec in &expected {
        let bytes = r.take(spec.numel() * 4)?;
        tensors.push(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    if r.pos != buf.len() {
        return Err(ModelError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Model::from_tensors(config, tensors)
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        to_bytes(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, to_bytes(self))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelError> {
        let bytes = fs::read(path)?;
        from_bytes(&bytes)
    }
}

/// Generates a model and writes it to `path`.
pub fn generate_model(config: &ModelConfig, seed: u64, path: impl AsRef<Path>) -> Result<Model, ModelError> {
    let model = Model::generate(config, seed)?;
    model.save(path)?;
    Ok(model)
}
