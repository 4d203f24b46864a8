use std::io::{stdin, stdout};
use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Result};
use cecollm::cloud::{serve_stream, serve_tcp, CloudServer, EvictionPolicy, ServerMode};
use cecollm_cli::ModelArgs;
use clap::Parser;

/// Cloud side of the split model.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(flatten)]
    model: ModelArgs,
    /// full, partition or naive.
    #[arg(long, default_value = "partition")]
    mode: ServerMode,
    /// Overrides the split layer stored in the model.
    #[arg(long)]
    split_layer: Option<usize>,
    #[arg(long, conflicts_with = "sim")]
    listen: Option<String>,
    /// Speak the wire protocol over stdin/stdout instead of TCP.
    #[arg(long)]
    sim: bool,
    #[arg(long, default_value_t = 300.0)]
    ttl_s: f64,
    #[arg(long, default_value_t = 30.0)]
    sweep_s: f64,
    /// How long an infer request may wait for missing context.
    #[arg(long, default_value_t = 10.0)]
    infer_timeout_s: f64,
}

fn main() -> Result<()> {
    cecollm_cli::init_logging();
    let cli = Cli::parse();
    let policy = EvictionPolicy::from_secs(cli.ttl_s, cli.sweep_s).map_err(|e| anyhow::anyhow!("{}", e.detail))?;
    let model = Arc::new(cli.model.load()?);
    let server = Arc::new(CloudServer::new(model, cli.mode, cli.split_layer, policy)?);
    if cli.sim {
        serve_stream(&server, stdin().lock(), stdout().lock())?;
        return Ok(());
    }
    let Some(addr) = cli.listen else {
        bail!("pass --listen <addr> or --sim");
    };
    let handle = serve_tcp(server, TcpListener::bind(&addr)?, Duration::from_secs_f64(cli.infer_timeout_s))?;
    log::info!("{} server listening on {}", cli.mode, handle.local_addr());
    loop {
        std::thread::park();
    }
}
