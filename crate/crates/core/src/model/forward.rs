use std::ops::Range;

use super::config::ModelConfig;
use super::kv::{HiddenStateBlock, KvCache};
use super::math::{dot, matvec, rms_norm, silu, sinusoidal};
use super::weights::{HeadWeights, LayerWeights, Model};
use super::{Logits, ModelError};

/// Token embedding (scaled) plus sinusoidal position, one row per token.
pub(crate) fn embed(
    cfg: &ModelConfig,
    table: &[f32],
    tokens: &[u32],
    first_position: usize,
) -> Result<HiddenStateBlock, ModelError> {
    let d = cfg.hidden_dim;
    if first_position + tokens.len() > cfg.max_seq_len {
        return Err(ModelError::SequenceOverflow { needed: first_position + tokens.len(), max: cfg.max_seq_len });
    }
    let scale = cfg.embedding_scale();
    let mut out = vec![0.0f32; tokens.len() * d];
    let mut pe = vec![0.0f32; d];
    for (i, &tok) in tokens.iter().enumerate() {
        if tok as usize >= cfg.vocab_size {
            return Err(ModelError::InvalidToken { token: tok, vocab_size: cfg.vocab_size });
        }
        sinusoidal(first_position + i, d, &mut pe);
        let row = &table[tok as usize * d..(tok as usize + 1) * d];
        for ((o, &e), &p) in out[i * d..(i + 1) * d].iter_mut().zip(row).zip(&pe) {
            *o = e * scale + p;
        }
    }
    Ok(HiddenStateBlock::new(0, first_position, d, out))
}

struct Scratch {
    h: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    attn: Vec<f32>,
    o: Vec<f32>,
    scores: Vec<f32>,
    up: Vec<f32>,
    down: Vec<f32>,
}

impl Scratch {
    fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.hidden_dim;
        Scratch {
            h: vec![0.0; d],
            q: vec![0.0; d],
            k: vec![0.0; d],
            v: vec![0.0; d],
            attn: vec![0.0; d],
            o: vec![0.0; d],
            scores: Vec::new(),
            up: vec![0.0; cfg.ffn_dim],
            down: vec![0.0; d],
        }
    }
}

/// One decoder layer over a single row at `position`, appending its K/V.
fn layer_row(
    cfg: &ModelConfig,
    w: &LayerWeights,
    layer: usize,
    position: usize,
    x: &mut [f32],
    cache: &mut KvCache,
    s: &mut Scratch,
) {
    let d = cfg.hidden_dim;
    let hd = cfg.head_dim();
    rms_norm(x, &w.attn_norm, &mut s.h);
    matvec(&w.wq, &s.h, &mut s.q);
    matvec(&w.wk, &s.h, &mut s.k);
    matvec(&w.wv, &s.h, &mut s.v);
    cache.push(layer, &s.k, &s.v);
    let (keys, values) = cache.layer_kv(layer);
    let n = position + 1;
    let inv_sqrt = 1.0 / (hd as f32).sqrt();
    s.scores.resize(n, 0.0);
    for head in 0..cfg.num_heads {
        let span = head * hd..(head + 1) * hd;
        let q = &s.q[span.clone()];
        let mut max = f32::NEG_INFINITY;
        for (j, sc) in s.scores.iter_mut().enumerate() {
            *sc = dot(q, &keys[j * d + span.start..j * d + span.end]) * inv_sqrt;
            max = max.max(*sc);
        }
        let mut sum = 0.0f32;
        for sc in s.scores.iter_mut() {
            *sc = (*sc - max).exp();
            sum += *sc;
        }
        let out = &mut s.attn[span.clone()];
        out.fill(0.0);
        for (j, &p) in s.scores.iter().enumerate() {
            let p = p / sum;
            for (o, &v) in out.iter_mut().zip(&values[j * d + span.start..j * d + span.end]) {
                *o += p * v;
            }
        }
    }
    matvec(&w.wo, &s.attn, &mut s.o);
    for (xi, oi) in x.iter_mut().zip(&s.o) {
        *xi += oi;
    }
    rms_norm(x, &w.ffn_norm, &mut s.h);
    matvec(&w.w1, &s.h, &mut s.up);
    s.up.iter_mut().for_each(|u| *u = silu(*u));
    matvec(&w.w2, &s.up, &mut s.down);
    for (xi, di) in x.iter_mut().zip(&s.down) {
        *xi += di;
    }
}

/// Runs `layers` (absolute indices `range`) over `input`, calling `after_layer(l, block)`
/// once layer `l` has been applied to every row.
pub(crate) fn run_layers(
    cfg: &ModelConfig,
    layers: &[LayerWeights],
    range: Range<usize>,
    input: &HiddenStateBlock,
    cache: &mut KvCache,
    mut after_layer: impl FnMut(usize, &HiddenStateBlock),
) -> Result<HiddenStateBlock, ModelError> {
    debug_assert_eq!(layers.len(), range.len());
    if range.is_empty() {
        return Ok(input.clone());
    }
    if input.layer != range.start {
        return Err(ModelError::LayerMismatch { expected: range.start, got: input.layer });
    }
    if cache.layer_range() != range {
        return Err(ModelError::CacheRange { cache: cache.layer_range(), requested: range });
    }
    if input.hidden_dim != cfg.hidden_dim {
        return Err(ModelError::Shape(format!(
            "block width {} != hidden_dim {}",
            input.hidden_dim, cfg.hidden_dim
        )));
    }
    let n = input.num_positions();
    if n == 0 {
        return Err(ModelError::Shape("empty hidden-state block".into()));
    }
    cache.check_append(input.first_position, n)?;
    let mut block = input.clone();
    let mut scratch = Scratch::new(cfg);
    let d = cfg.hidden_dim;
    for (w, layer) in layers.iter().zip(range.clone()) {
        for i in 0..n {
            let row = &mut block.activations[i * d..(i + 1) * d];
            layer_row(cfg, w, layer, input.first_position + i, row, cache, &mut scratch);
        }
        block.layer = layer + 1;
        after_layer(layer, &block);
    }
    cache.set_len(input.first_position + n);
    Ok(block)
}

pub(crate) fn head_logits(cfg: &ModelConfig, head: &HeadWeights, x: &[f32]) -> Logits {
    let mut normed = vec![0.0f32; cfg.hidden_dim];
    rms_norm(x, &head.norm, &mut normed);
    let mut logits = vec![0.0f32; cfg.vocab_size];
    matvec(&head.proj, &normed, &mut logits);
    let scale = cfg.logit_scale();
    logits.iter_mut().for_each(|z| *z *= scale);
    Logits::new_unchecked(logits)
}

impl Model {
    pub fn embed(&self, tokens: &[u32], first_position: usize) -> Result<HiddenStateBlock, ModelError> {
        embed(&self.config, &self.embedding, tokens, first_position)
    }

    pub fn new_cache(&self, layers: Range<usize>) -> KvCache {
        KvCache::new(layers, self.config.hidden_dim, self.config.max_seq_len)
    }

    /// Runs a contiguous layer range. `cache` must cover exactly that range and
    /// hold `input.first_position` positions. An empty range is the identity.
    pub fn forward_layers(
        &self,
        range: Range<usize>,
        input: &HiddenStateBlock,
        cache: &mut KvCache,
    ) -> Result<HiddenStateBlock, ModelError> {
        if range.end > self.config.num_layers || range.start > range.end {
            return Err(ModelError::CacheRange { cache: cache.layer_range(), requested: range });
        }
        run_layers(&self.config, &self.layers[range.clone()], range, input, cache, |_, _| {})
    }

    pub fn exit_head(&self, exit_index: usize, activation: &[f32]) -> Result<Logits, ModelError> {
        let head = self.exits.get(exit_index).ok_or(ModelError::InvalidExit(exit_index))?;
        Ok(head_logits(&self.config, head, activation))
    }

    pub fn final_logits(&self, activation: &[f32]) -> Logits {
        head_logits(&self.config, &self.final_head, activation)
    }

    /// Final-head logits at the last position of `tokens`, computed from scratch.
    pub fn logits_from_scratch(&self, tokens: &[u32]) -> Result<Logits, ModelError> {
        let mut cache = self.new_cache(0..self.config.num_layers);
        let x = self.embed(tokens, 0)?;
        let out = self.forward_layers(0..self.config.num_layers, &x, &mut cache)?;
        Ok(self.final_logits(out.last_row()))
    }
}
