//! Argument groups shared by the command-line tools.

use std::path::PathBuf;

use anyhow::{Context, Result};
use cecollm::harness::LinkSpec;
use cecollm::model::{Model, ModelConfig};
use cecollm::transport::LinkParams;
use clap::Args;

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model file written by ce-genmodel.
    #[arg(long, conflicts_with = "model_seed")]
    pub model: Option<PathBuf>,
    /// Generate the default desk model in memory from this seed instead of loading a file.
    #[arg(long, default_value_t = 7)]
    pub model_seed: u64,
}

impl ModelArgs {
    pub fn load(&self) -> Result<Model> {
        match &self.model {
            Some(path) => Model::load(path).with_context(|| format!("loading {}", path.display())),
            None => Ok(Model::generate(&ModelConfig::default(), self.model_seed)?),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LinkArgs {
    #[arg(long, default_value_t = 100.0)]
    pub bandwidth_mbps: f64,
    #[arg(long, default_value_t = 20.0)]
    pub rtt_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter_ms: f64,
}

impl LinkArgs {
    pub fn params(&self) -> Result<LinkParams> {
        let spec = LinkSpec { bandwidth_mbps: self.bandwidth_mbps, rtt_ms: self.rtt_ms, jitter_ms: self.jitter_ms };
        Ok(spec.params()?)
    }
}

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
}

pub fn join_tokens(tokens: &[u32]) -> String {
    tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}
