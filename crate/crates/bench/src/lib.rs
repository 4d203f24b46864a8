//! Fixtures shared by the benchmarks.

use cecollm::model::{Model, ModelConfig};

pub fn desk_model() -> Model {
    Model::generate(&ModelConfig::default(), 7).expect("default config is valid")
}

/// A deterministic activation row with a spread of magnitudes.
pub fn sample_row(len: usize) -> Vec<f32> {
    (0..len).map(|i| ((i as f32) * 0.37).sin() * (1.0 + (i % 17) as f32)).collect()
}
