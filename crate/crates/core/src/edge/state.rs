use crate::model::{confidence, EdgePartition, ExitDecision, HiddenStateBlock, KvCache, ModelError};

/// Result of pushing new positions through the edge layers.
#[derive(Debug, Clone)]
pub struct EdgeStep {
    /// Activations leaving layer `k - 1` for every new position.
    pub split: HiddenStateBlock,
    /// Last-position activation at each exit layer, in exit order.
    pub exit_activations: Vec<Vec<f32>>,
}

/// Edge partition plus its KV cache for one sequence.
pub struct EdgeState<'a> {
    edge: &'a EdgePartition,
    cache: KvCache,
    exit_evaluations: u64,
}

impl<'a> EdgeState<'a> {
    pub fn new(edge: &'a EdgePartition) -> Self {
        EdgeState { edge, cache: edge.new_cache(), exit_evaluations: 0 }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.len()
    }

    /// Exit heads evaluated so far.
    pub fn exit_evaluations(&self) -> u64 {
        self.exit_evaluations
    }

    /// Runs all edge layers over `tokens` placed at `first_position`. The cache
    /// is always extended through layer `k - 1`, whether or not a token exits.
    pub fn process(&mut self, tokens: &[u32], first_position: usize) -> Result<EdgeStep, ModelError> {
        let x = self.edge.embed(tokens, first_position)?;
        let exits = self.edge.exit_layers().to_vec();
        let mut exit_activations = vec![Vec::new(); exits.len()];
        let split = self.edge.forward(&x, &mut self.cache, |l, block| {
            for (i, &e) in exits.iter().enumerate() {
                if e == l + 1 {
                    exit_activations[i] = block.last_row().to_vec();
                }
            }
        })?;
        Ok(EdgeStep { split, exit_activations })
    }

    /// Evaluates exits in ascending order and stops at the first with
    /// `conf >= theta`. The returned list ends with the decisive exit, or
    /// covers every exit when none fired.
    pub fn decide(&mut self, step: &EdgeStep, theta: f64) -> Result<Vec<ExitDecision>, ModelError> {
        let mut out = Vec::with_capacity(step.exit_activations.len());
        for (i, act) in step.exit_activations.iter().enumerate() {
            let logits = self.edge.exit_logits(i, act)?;
            self.exit_evaluations += 1;
            let d = ExitDecision::gate(confidence(&logits)?, theta, i);
            out.push(d);
            if d.exited {
                break;
            }
        }
        Ok(out)
    }

    /// `process` followed by `decide` on the last new position.
    pub fn step_edge(
        &mut self,
        tokens: &[u32],
        first_position: usize,
        theta: f64,
    ) -> Result<(HiddenStateBlock, Vec<ExitDecision>), ModelError> {
        let step = self.process(tokens, first_position)?;
        let decisions = self.decide(&step, theta)?;
        Ok((step.split, decisions))
    }
}
