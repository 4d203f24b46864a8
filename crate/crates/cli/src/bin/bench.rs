use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use cecollm::codec::Encoding;
use cecollm::edge::EdgeMode;
use cecollm::harness::{
    analytic_bytes, confidence_histogram, format_prompts, generate_prompts, payload_reduction, read_traces, run_scenario, write_trace,
    ReportFile, Scenario, TraceRecord,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(version, about = "Scenario runner and report tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every `[[scenario]]` in a TOML file and write report.json and report.csv.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "reports")]
        out_dir: PathBuf,
        /// Only run scenarios with these names.
        #[arg(long)]
        only: Vec<String>,
        /// Also write a JSON-lines trace per scenario (first repetition).
        #[arg(long)]
        traces: bool,
    },
    /// Closed-form transfer sizes for one prompt.
    Bytes {
        #[arg(long, default_value_t = 30)]
        prompt_len: u64,
        #[arg(long, default_value_t = 100)]
        new_tokens: u64,
        #[arg(long, default_value_t = 4096)]
        hidden_dim: u64,
        #[arg(long, default_value = "f16")]
        precision: Encoding,
        /// Omit to print every strategy.
        #[arg(long)]
        strategy: Option<EdgeMode>,
    },
    /// Per-exit confidence histogram of a trace file, as CSV.
    Hist {
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic prompt file.
    Prompts {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        min_len: usize,
        #[arg(long)]
        max_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    cecollm_cli::init_logging();
    match Cli::parse().command {
        Command::Run { config, out_dir, only, traces } => run(config, out_dir, only, traces),
        Command::Bytes { prompt_len, new_tokens, hidden_dim, precision, strategy } => {
            let strategies = strategy.map(|s| vec![s]).unwrap_or_else(|| EdgeMode::ALL.to_vec());
            println!("strategy,precision,payload_up,framed_up,framed_down");
            for s in strategies {
                let p = if s == EdgeMode::NaiveSplit { Encoding::F32 } else { precision };
                let e = analytic_bytes(prompt_len, new_tokens, hidden_dim, p, s)?;
                println!("{s},{},{},{},{}", p_name(p), e.payload_up, e.framed_up, e.framed_down);
            }
            let r = payload_reduction(prompt_len, new_tokens, hidden_dim, precision)?;
            eprintln!("collaborative payload is {:.2}% smaller than naive split", 100.0 * r);
            Ok(())
        }
        Command::Hist { trace, out } => {
            let file = File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let records = read_traces(BufReader::new(file))?;
            let hist = confidence_histogram(records.iter().flat_map(|r| &r.output.traces))?;
            for e in &hist.exits {
                let high: u64 = e.counts[16..].iter().sum();
                eprintln!(
                    "exit {}: {} evaluated, p25 {:.3} p50 {:.3} p75 {:.3}, {:.1}% at or above 0.8",
                    e.exit_index,
                    e.evaluated,
                    e.p25.unwrap_or(f64::NAN),
                    e.p50.unwrap_or(f64::NAN),
                    e.p75.unwrap_or(f64::NAN),
                    100.0 * high as f64 / e.evaluated.max(1) as f64
                );
            }
            match out {
                Some(path) => {
                    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    hist.write_csv(BufWriter::new(f))?;
                }
                None => hist.write_csv(std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Prompts { count, min_len, max_len, seed, out } => {
            let prompts = generate_prompts(count, min_len, max_len, seed)?;
            let header = format!("{count} uniform random byte-token prompts, lengths {min_len}..={max_len}, seed {seed}");
            fs::write(&out, format_prompts(&prompts, &header)).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
    }
}

fn p_name(p: Encoding) -> &'static str {
    match p {
        Encoding::F16 => "f16",
        Encoding::F32 => "f32",
    }
}

fn run(config: PathBuf, out_dir: PathBuf, only: Vec<String>, traces: bool) -> Result<()> {
    let mut scenarios = Scenario::load_all(&config)?;
    if !only.is_empty() {
        scenarios.retain(|s| only.contains(&s.name));
        if scenarios.is_empty() {
            bail!("no scenario named {only:?} in {}", config.display());
        }
    }
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut reports = Vec::new();
    for s in &scenarios {
        log::info!("running {} ({} repetitions)", s.name, s.repetitions);
        let result = run_scenario(s)?;
        let m = &result.report;
        log::info!(
            "{}: total {:.3}±{:.3}s edge {:.3} cloud {:.3} comm {:.3}, {} B up, request rate {:.3}, disagreement {:.3}",
            s.name,
            m.total_s.mean,
            m.total_s.std,
            m.edge_s.mean,
            m.cloud_s.mean,
            m.comm_s.mean,
            m.bytes_up,
            m.cloud_req_rate,
            m.disagreement_rate
        );
        if traces {
            let prompts = s.load_prompts()?;
            let path = out_dir.join(format!("{}.trace.jsonl", s.name));
            let mut w = BufWriter::new(File::create(&path)?);
            for (i, (output, prompt)) in result.runs.into_iter().zip(prompts).enumerate() {
                write_trace(&mut w, &TraceRecord { prompt_index: i, prompt, output })?;
            }
            w.flush()?;
        }
        reports.push(result.report);
    }
    let file = ReportFile::new(reports);
    file.export(out_dir.join("report.json"))?;
    file.export(out_dir.join("report.csv"))?;
    println!("{:<28} {:>10} {:>10} {:>10} {:>10} {:>14} {:>8}", "scenario", "total_s", "edge_s", "cloud_s", "comm_s", "bytes_up", "req");
    for m in &file.reports {
        println!(
            "{:<28} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>14} {:>8.3}",
            m.scenario, m.total_s.mean, m.edge_s.mean, m.cloud_s.mean, m.comm_s.mean, m.bytes_up, m.cloud_req_rate
        );
    }
    Ok(())
}
