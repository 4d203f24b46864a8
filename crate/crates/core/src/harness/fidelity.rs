use crate::codec::{decode_f16, encode_f16};
use crate::model::{HiddenStateBlock, Model, ModelError};

/// How a generated continuation compares with the full model run on the same prefix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Fidelity {
    pub tokens: usize,
    /// Tokens that differ from the full model's argmax given the emitted prefix.
    pub disagreements: usize,
    /// Largest final-logit change from rounding split-layer rows through f16.
    pub f16_max_logit_dev: f64,
    /// Positions whose argmax changes under that rounding.
    pub f16_flips: usize,
}

impl Fidelity {
    pub fn merge(&mut self, other: &Fidelity) {
        self.tokens += other.tokens;
        self.disagreements += other.disagreements;
        self.f16_max_logit_dev = self.f16_max_logit_dev.max(other.f16_max_logit_dev);
        self.f16_flips += other.f16_flips;
    }
}

/// Teacher-forced comparison: position `P - 1 + i` of `prompt ++ generated`
/// is scored against `generated[i]`. One batched forward pass per call.
pub fn fidelity(model: &Model, prompt: &[u32], generated: &[u32]) -> Result<Fidelity, ModelError> {
    if generated.is_empty() {
        return Ok(Fidelity::default());
    }
    let cfg = &model.config;
    let k = cfg.split_layer;
    let mut seq = prompt.to_vec();
    seq.extend_from_slice(&generated[..generated.len() - 1]);

    let x = model.embed(&seq, 0)?;
    let mut edge_cache = model.new_cache(0..k);
    let split = model.forward_layers(0..k, &x, &mut edge_cache)?;
    let rounded = HiddenStateBlock::new(
        split.layer,
        split.first_position,
        split.hidden_dim,
        split.activations.iter().map(|&v| decode_f16(encode_f16(v))).collect(),
    );
    let tail = k..cfg.num_layers;
    let exact = model.forward_layers(tail.clone(), &split, &mut model.new_cache(tail.clone()))?;
    let lossy = model.forward_layers(tail.clone(), &rounded, &mut model.new_cache(tail))?;

    let mut out = Fidelity { tokens: generated.len(), ..Fidelity::default() };
    for (i, &token) in generated.iter().enumerate() {
        let row = prompt.len() - 1 + i;
        let a = model.final_logits(exact.row(row));
        let b = model.final_logits(lossy.row(row));
        if a.argmax() != token {
            out.disagreements += 1;
        }
        if a.argmax() != b.argmax() {
            out.f16_flips += 1;
        }
        let dev = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max);
        out.f16_max_logit_dev = out.f16_max_logit_dev.max(dev);
    }
    Ok(out)
}
