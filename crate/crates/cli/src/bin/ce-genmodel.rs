use std::path::PathBuf;

use anyhow::Result;
use cecollm::model::{generate_model, ModelConfig};
use clap::Parser;

/// Writes a deterministic random-weight model file.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    /// Exit points as layer counts, e.g. `2,4`.
    #[arg(long, value_delimiter = ',')]
    exits: Option<Vec<usize>>,
    #[arg(long)]
    split_layer: Option<usize>,
}

fn main() -> Result<()> {
    cecollm_cli::init_logging();
    let cli = Cli::parse();
    let mut cfg = ModelConfig::default();
    cfg.num_layers = cli.layers.unwrap_or(cfg.num_layers);
    cfg.hidden_dim = cli.hidden_dim.unwrap_or(cfg.hidden_dim);
    cfg.num_heads = cli.heads.unwrap_or(cfg.num_heads);
    cfg.ffn_dim = cli.ffn_dim.unwrap_or(cfg.ffn_dim);
    cfg.max_seq_len = cli.max_seq_len.unwrap_or(cfg.max_seq_len);
    cfg.exit_layers = cli.exits.unwrap_or(cfg.exit_layers);
    cfg.split_layer = cli.split_layer.unwrap_or(cfg.split_layer);
    let model = generate_model(&cfg, cli.seed, &cli.out)?;
    log::info!(
        "wrote {} ({} backbone + {} exit weights, fingerprint {})",
        cli.out.display(),
        model.backbone_weight_count(),
        model.exit_weight_count(),
        model.fingerprint().iter().take(8).map(|b| format!("{b:02x}")).collect::<String>()
    );
    Ok(())
}
