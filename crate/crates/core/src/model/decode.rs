use serde::{Deserialize, Serialize};

use super::config::EOS;
use super::weights::Model;
use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f32>);

impl Logits {
    pub fn new(values: Vec<f32>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::Shape("empty logits".into()));
        }
        if let Some(i) = values.iter().position(|z| !z.is_finite()) {
            return Err(ModelError::NonFinite(format!("logit {i}")));
        }
        Ok(Logits(values))
    }

    pub(crate) fn new_unchecked(values: Vec<f32>) -> Self {
        Logits(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn softmax(&self) -> Vec<f32> {
        let mut p = self.0.clone();
        super::math::softmax_in_place(&mut p);
        p
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lowest index among the maxima.
    pub fn argmax(&self) -> u32 {
        let mut best = 0;
        for (i, &z) in self.0.iter().enumerate() {
            if z > self.0[best] {
                best = i;
            }
        }
        best as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub conf: f64,
    pub token: u32,
}

/// Max softmax probability and its argmax: `conf = 1 / sum_j exp(z_j - z_max)`.
pub fn confidence(logits: &Logits) -> Result<Confidence, ModelError> {
    let z = logits.values();
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite(format!("logit {i}")));
    }
    let token = logits.argmax();
    let max = z[token as usize] as f64;
    let denom: f64 = z.iter().map(|&v| (v as f64 - max).exp()).sum();
    Ok(Confidence { conf: 1.0 / denom, token })
}

/// Outcome of evaluating one exit against a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitDecision {
    pub conf: f64,
    pub token: u32,
    pub exited: bool,
    pub exit_index: Option<usize>,
}

impl ExitDecision {
    pub fn gate(c: Confidence, theta: f64, exit_index: usize) -> Self {
        let exited = should_exit(c.conf, theta);
        ExitDecision { conf: c.conf, token: c.token, exited, exit_index: Some(exit_index) }
    }
}

/// The exit predicate: emit locally when `conf >= theta`.
pub fn should_exit(conf: f64, theta: f64) -> bool {
    conf >= theta
}

impl Model {
    /// Full-model greedy decoding with a KV cache. Stops after `max_new_tokens`
    /// or after emitting EOS.
    pub fn greedy_decode(&self, prompt: &[u32], max_new_tokens: usize) -> Result<Vec<u32>, ModelError> {
        let cfg = &self.config;
        if prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        if prompt.len() + max_new_tokens > cfg.max_seq_len {
            return Err(ModelError::SequenceOverflow {
                needed: prompt.len() + max_new_tokens,
                max: cfg.max_seq_len,
            });
        }
        let mut out = Vec::with_capacity(max_new_tokens);
        if max_new_tokens == 0 {
            return Ok(out);
        }
        let all = 0..cfg.num_layers;
        let mut cache = self.new_cache(all.clone());
        let x = self.embed(prompt, 0)?;
        let mut h = self.forward_layers(all.clone(), &x, &mut cache)?;
        loop {
            let token = self.final_logits(h.last_row()).argmax();
            out.push(token);
            if out.len() == max_new_tokens || token == EOS {
                return Ok(out);
            }
            let x = self.embed(&[token], cache.len())?;
            h = self.forward_layers(all.clone(), &x, &mut cache)?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let c = confidence(&Logits::new(vec![0.25; 256]).unwrap()).unwrap();
        assert!((c.conf - 1.0 / 256.0).abs() < 1e-12);
        assert_eq!(c.token, 0);
    }

    #[test]
    fn three_way_reference() {
        // 1 / (1 + e^-1 + e^-2), evaluated in f64.
        let c = confidence(&Logits::new(vec![2.0, 1.0, 0.0]).unwrap()).unwrap();
        assert!((c.conf - 0.665_240_955_774_821_4).abs() < 1e-9, "{}", c.conf);
        assert_eq!(c.token, 0);
    }

    #[test]
    fn ties_break_low() {
        let c = confidence(&Logits::new(vec![5.0, 5.0, 1.0]).unwrap()).unwrap();
        assert_eq!(c.token, 0);
        let c = confidence(&Logits::new(vec![1.0, 5.0, 5.0]).unwrap()).unwrap();
        assert_eq!(c.token, 1);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Logits::new(vec![1.0, f32::NAN]).is_err());
        let bad = Logits::new_unchecked(vec![1.0, f32::INFINITY]);
        assert!(matches!(confidence(&bad), Err(ModelError::NonFinite(_))));
    }

    fn tiny() -> Model {
        let cfg = ModelConfig {
            num_layers: 2,
            hidden_dim: 16,
            num_heads: 2,
            ffn_dim: 32,
            vocab_size: 260,
            max_seq_len: 40,
            exit_layers: vec![1],
            split_layer: 1,
            ..ModelConfig::default()
        };
        Model::generate(&cfg, 11).unwrap()
    }

    #[test]
    fn greedy_boundaries() {
        let m = tiny();
        assert!(m.greedy_decode(&[1, 2, 3], 0).unwrap().is_empty());
        assert!(matches!(m.greedy_decode(&[], 3), Err(ModelError::EmptyPrompt)));
        assert!(matches!(m.greedy_decode(&[1; 30], 11), Err(ModelError::SequenceOverflow { .. })));
        let a = m.greedy_decode(&[1, 2, 3], 10).unwrap();
        assert_eq!(a, m.greedy_decode(&[1, 2, 3], 10).unwrap());
        assert!(!a.is_empty() && a.len() <= 10);
    }

    #[test]
    fn greedy_matches_from_scratch_argmax() {
        let m = tiny();
        let prompt = [10u32, 20, 30, 40];
        let out = m.greedy_decode(&prompt, 8).unwrap();
        let mut seq = prompt.to_vec();
        for &t in &out {
            assert_eq!(m.logits_from_scratch(&seq).unwrap().argmax(), t);
            seq.push(t);
        }
    }

    proptest! {
        #[test]
        fn softmax_confidence_bounds(z in prop::collection::vec(-30.0f32..30.0, 2..300)) {
            let v = z.len() as f64;
            let c = confidence(&Logits::new(z.clone()).unwrap()).unwrap();
            prop_assert!(c.conf >= 1.0 / v - 1e-12);
            prop_assert!(c.conf < 1.0);
            let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let total: f64 = z.iter().map(|&x| (x as f64 - max).exp()).sum();
            let probs_sum: f64 = z.iter().map(|&x| (x as f64 - max).exp() / total).sum();
            prop_assert!((probs_sum - 1.0).abs() < 1e-6);
        }

        #[test]
        fn argmax_shift_invariant(z in prop::collection::vec(-20.0f32..20.0, 2..64), shift in -50.0f32..50.0) {
            let a = confidence(&Logits::new(z.clone()).unwrap()).unwrap();
            // Shifting can merge near-ties under rounding; only check when the winner is clear.
            let top = z[a.token as usize];
            let clear = z.iter().enumerate().all(|(i, &x)| i == a.token as usize || top - x > 1e-3);
            prop_assume!(clear);
            let shifted: Vec<f32> = z.iter().map(|x| x + shift).collect();
            let b = confidence(&Logits::new(shifted).unwrap()).unwrap();
            prop_assert_eq!(a.token, b.token);
        }

        #[test]
        fn exit_predicate_monotone(conf in 0.0f64..1.0, t1 in 0.0f64..1.5, t2 in 0.0f64..1.5) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            if should_exit(conf, hi) {
                prop_assert!(should_exit(conf, lo));
            }
        }
    }
}
