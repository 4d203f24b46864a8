use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cecollm::cloud::{CloudServer, EvictionPolicy};
use cecollm::codec::Encoding;
use cecollm::edge::{CloudLink, CostModel, EdgeClient, EdgeConfig, EdgeMode, OfflineLink, SimCloudLink, TcpCloudLink, UploadPolicy};
use cecollm::harness::{load_prompts, write_trace, TraceRecord};
use cecollm::transport::secs;
use cecollm_cli::{join_tokens, LinkArgs, ModelArgs};
use clap::Parser;

/// Edge side: runs the first layers and the exits, offloading low-confidence tokens.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "collaborative")]
    mode: EdgeMode,
    #[arg(long, default_value_t = 0.8)]
    theta: f64,
    #[arg(long, default_value = "f16")]
    wire_precision: Encoding,
    /// always, on-first-offload or never (standalone forces never).
    #[arg(long)]
    upload_policy: Option<UploadPolicy>,
    #[arg(long, default_value_t = 100)]
    max_new_tokens: usize,
    #[arg(long, default_value_t = 8)]
    upload_queue: usize,
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, conflicts_with = "sim")]
    connect: Option<String>,
    /// Run against an in-process server over a simulated link.
    #[arg(long)]
    sim: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON-lines trace, one record per prompt.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[command(flatten)]
    link: LinkArgs,
}

fn main() -> Result<()> {
    cecollm_cli::init_logging();
    let cli = Cli::parse();
    let upload_policy = cli.upload_policy.unwrap_or(match cli.mode {
        EdgeMode::Standalone => UploadPolicy::Never,
        _ => UploadPolicy::Always,
    });
    let config = EdgeConfig {
        theta: cli.theta,
        mode: cli.mode,
        upload_policy,
        wire_precision: cli.wire_precision,
        max_new_tokens: cli.max_new_tokens,
        upload_queue_capacity: cli.upload_queue,
    };
    let model = Arc::new(cli.model.load()?);
    let client = EdgeClient::new(&model, config)?;
    let prompts = load_prompts(&cli.prompts)?;
    let server = match (cli.mode.server_mode(), cli.sim) {
        (Some(mode), true) => Some(Arc::new(CloudServer::new(model.clone(), mode, None, EvictionPolicy::default())?)),
        _ => None,
    };
    if cli.mode != EdgeMode::Standalone && !cli.sim && cli.connect.is_none() {
        bail!("{} mode needs --connect <addr> or --sim", cli.mode);
    }
    let mut trace = match &cli.trace_out {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };

    let mut stdout = std::io::stdout().lock();
    for (i, prompt) in prompts.iter().enumerate() {
        let session = i as u64 + 1;
        let mut link: Box<dyn CloudLink> = match (&server, &cli.connect) {
            (Some(server), _) => {
                let seed = cli.seed ^ i as u64;
                Box::new(SimCloudLink::new(server.clone(), cli.link.params()?, seed, CostModel::default(), cli.upload_queue)?)
            }
            (None, Some(addr)) if cli.mode != EdgeMode::Standalone => Box::new(TcpCloudLink::connect(addr.as_str(), cli.upload_queue)?),
            _ => Box::new(OfflineLink::default()),
        };
        let out = client.run(prompt, session, link.as_mut()).with_context(|| format!("prompt {i}"))?;
        writeln!(stdout, "{}", join_tokens(&out.tokens))?;
        log::info!(
            "prompt {i}: {} tokens, {} cloud, total {:.4}s (edge {:.4} cloud {:.4} comm {:.4}), {} B up, {} B down",
            out.tokens.len(),
            out.cloud_requests,
            secs(out.timeline.total_ns()),
            secs(out.timeline.edge_ns),
            secs(out.timeline.cloud_ns),
            secs(out.timeline.comm_ns),
            out.ledger.bytes_up,
            out.ledger.bytes_down
        );
        if let Some(w) = trace.as_mut() {
            write_trace(w, &TraceRecord { prompt_index: i, prompt: prompt.clone(), output: out })?;
        }
    }
    if let Some(mut w) = trace {
        w.flush()?;
    }
    Ok(())
}
