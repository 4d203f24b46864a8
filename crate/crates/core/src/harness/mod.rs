//! Scenario runner, aggregate metrics and report export.

mod bytes;
mod fidelity;
mod hist;
mod prompts;
mod report;
mod trace;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudServer, EvictionPolicy};
use crate::codec::Encoding;
use crate::edge::{CostModel, EdgeClient, EdgeConfig, EdgeError, EdgeMode, OfflineLink, Origin, RunOutput, SimCloudLink, UploadPolicy};
use crate::model::{Model, ModelConfig, ModelError};
use crate::transport::{secs, LinkParams};

pub use bytes::{analytic_bytes, analytic_bytes_with_requests, payload_reduction, ByteEstimate};
pub use fidelity::{fidelity, Fidelity};
pub use hist::{bin_of, confidence_histogram, quantile, ConfidenceHistogram, ExitHistogram, BINS};
pub use prompts::{format_prompts, generate_prompts, load_prompts, parse_prompts};
pub use trace::{read_traces, write_trace, TraceRecord};
pub use report::{read_csv, read_json, report_schema, write_csv, write_json, ReportFile, ReportRow, CSV_COLUMNS, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("byte count overflows u64")]
    Overflow,
    #[error("no confidences in the trace set")]
    EmptyTrace,
    #[error("prompt file line {line}: {message}")]
    Prompt { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scenario {scenario}, repetition {repetition}, prompt {prompt}: {source}")]
    Run { scenario: String, repetition: usize, prompt: usize, source: EdgeError },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSpec {
    pub bandwidth_mbps: f64,
    pub rtt_ms: f64,
    pub jitter_ms: f64,
}

impl Default for LinkSpec {
    fn default() -> Self {
        LinkSpec { bandwidth_mbps: 100.0, rtt_ms: 20.0, jitter_ms: 0.0 }
    }
}

impl LinkSpec {
    pub fn params(&self) -> Result<LinkParams, HarnessError> {
        let p = LinkParams::from_mbps(self.bandwidth_mbps, self.rtt_ms, self.jitter_ms);
        p.validate().map_err(|e| HarnessError::Invalid(format!("link: {e}")))?;
        Ok(p)
    }
}

/// Where a scenario's prompts come from: a prompt file or a seeded generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PromptSource {
    File(PathBuf),
    Generated { count: usize, min_len: usize, max_len: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Model file; when absent the desk model is generated from `model_seed`.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_model_seed")]
    pub model_seed: u64,
    pub mode: EdgeMode,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_precision")]
    pub wire_precision: Encoding,
    /// Defaults to `never` for standalone and `always` otherwise.
    #[serde(default)]
    pub upload_policy: Option<UploadPolicy>,
    #[serde(default)]
    pub link: LinkSpec,
    pub prompts: PromptSource,
    #[serde(default)]
    pub max_prompts: Option<usize>,
    #[serde(default = "default_max_new")]
    pub max_new_tokens: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub costs: CostModel,
    #[serde(default = "default_queue")]
    pub upload_queue_capacity: usize,
}

fn default_model_seed() -> u64 {
    7
}
fn default_theta() -> f64 {
    0.8
}
fn default_precision() -> Encoding {
    Encoding::F16
}
fn default_max_new() -> usize {
    100
}
fn default_repetitions() -> usize {
    5
}
fn default_queue() -> usize {
    8
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: Vec<Scenario>,
}

impl Scenario {
    /// A scenario with every optional field at its default.
    pub fn new(name: impl Into<String>, mode: EdgeMode, prompts: PromptSource) -> Self {
        Scenario {
            name: name.into(),
            model: None,
            model_seed: default_model_seed(),
            mode,
            theta: default_theta(),
            wire_precision: default_precision(),
            upload_policy: None,
            link: LinkSpec::default(),
            prompts,
            max_prompts: None,
            max_new_tokens: default_max_new(),
            repetitions: default_repetitions(),
            seed: 0,
            costs: CostModel::default(),
            upload_queue_capacity: default_queue(),
        }
    }

    /// Parses `[[scenario]]` tables. Relative paths resolve against `base`.
    pub fn parse_all(text: &str, base: &Path) -> Result<Vec<Scenario>, HarnessError> {
        let file: ScenarioFile = toml::from_str(text)?;
        let mut out = file.scenario;
        for s in &mut out {
            if let Some(m) = &mut s.model {
                *m = base.join(&*m);
            }
            if let PromptSource::File(p) = &mut s.prompts {
                *p = base.join(&*p);
            }
            s.validate()?;
        }
        Ok(out)
    }

    pub fn load_all(path: impl AsRef<Path>) -> Result<Vec<Scenario>, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Scenario::parse_all(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn upload_policy(&self) -> UploadPolicy {
        self.upload_policy.unwrap_or(match self.mode {
            EdgeMode::Standalone => UploadPolicy::Never,
            _ => UploadPolicy::Always,
        })
    }

    pub fn edge_config(&self) -> EdgeConfig {
        EdgeConfig {
            theta: self.theta,
            mode: self.mode,
            upload_policy: self.upload_policy(),
            wire_precision: self.wire_precision,
            max_new_tokens: self.max_new_tokens,
            upload_queue_capacity: self.upload_queue_capacity,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Invalid(format!("{}: {m}", self.name)));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if !self.theta.is_finite() {
            return bad(format!("theta must be finite, got {}", self.theta));
        }
        if self.max_prompts == Some(0) {
            return bad("max_prompts must be positive".into());
        }
        self.link.params()?;
        self.edge_config().validate().map_err(|e| HarnessError::Invalid(format!("{}: {e}", self.name)))
    }

    pub fn load_model(&self) -> Result<Model, HarnessError> {
        Ok(match &self.model {
            Some(path) => Model::load(path)?,
            None => Model::generate(&ModelConfig::default(), self.model_seed)?,
        })
    }

    pub fn load_prompts(&self) -> Result<Vec<Vec<u32>>, HarnessError> {
        let mut prompts = match &self.prompts {
            PromptSource::File(path) => load_prompts(path)?,
            PromptSource::Generated { count, min_len, max_len, seed } => generate_prompts(*count, *min_len, *max_len, *seed)?,
        };
        if let Some(n) = self.max_prompts {
            prompts.truncate(n);
        }
        if prompts.is_empty() {
            return Err(HarnessError::Invalid(format!("{}: prompt set is empty", self.name)));
        }
        Ok(prompts)
    }
}

/// Mean and sample standard deviation; the deviation is 0 for a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(samples: &[f64]) -> Stat {
        if samples.is_empty() {
            return Stat::default();
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = if samples.len() < 2 {
            0.0
        } else {
            (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

/// Aggregate over a scenario. Times are per repetition, summed over prompts.
/// Byte, request and fidelity figures come from the first repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub strategy: EdgeMode,
    pub theta: f64,
    pub wire_precision: Encoding,
    pub upload_policy: UploadPolicy,
    pub repetitions: usize,
    pub prompts: usize,
    pub generated_tokens: u64,
    pub total_s: Stat,
    pub edge_s: Stat,
    pub cloud_s: Stat,
    pub comm_s: Stat,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub cloud_requests: u64,
    pub cloud_req_rate: f64,
    /// Tokens emitted at each exit, in exit order.
    pub exit_tokens: Vec<u64>,
    pub cloud_tokens: u64,
    pub disagreement_rate: f64,
    /// Only for collaborative runs on an f16 wire.
    pub f16_max_logit_dev: Option<f64>,
    pub f16_flip_rate: Option<f64>,
}

pub struct ScenarioResult {
    pub report: MetricsReport,
    /// Per-prompt outputs of the first repetition, in prompt order.
    pub runs: Vec<RunOutput>,
}

/// Loads the model and prompts, then runs the scenario.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult, HarnessError> {
    scenario.validate()?;
    let model = Arc::new(scenario.load_model()?);
    let prompts = scenario.load_prompts()?;
    run_scenario_with(scenario, &model, &prompts)
}

/// Repetitions run in parallel, each against its own server.
pub fn run_scenario_with(scenario: &Scenario, model: &Arc<Model>, prompts: &[Vec<u32>]) -> Result<ScenarioResult, HarnessError> {
    scenario.validate()?;
    let link = scenario.link.params()?;
    let client = EdgeClient::with_costs(model, scenario.edge_config(), scenario.costs)
        .map_err(|e| HarnessError::Invalid(format!("{}: {e}", scenario.name)))?;

    let reps: Vec<Vec<RunOutput>> = (0..scenario.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(scenario, model, &client, link, prompts, rep))
        .collect::<Result<_, _>>()?;

    let sum = |runs: &[RunOutput], f: fn(&RunOutput) -> u64| runs.iter().map(f).sum::<u64>();
    let stat = |f: fn(&RunOutput) -> u64| Stat::of(&reps.iter().map(|r| secs(sum(r, f))).collect::<Vec<_>>());
    let total_s = stat(|o| o.timeline.total_ns());
    let edge_s = stat(|o| o.timeline.edge_ns);
    let cloud_s = stat(|o| o.timeline.cloud_ns);
    let comm_s = stat(|o| o.timeline.comm_ns);

    let runs = reps.into_iter().next().expect("at least one repetition");
    let generated_tokens = sum(&runs, |o| o.tokens.len() as u64);
    let cloud_requests = sum(&runs, |o| o.cloud_requests as u64);
    let mut exit_tokens = vec![0u64; model.config.num_exits()];
    let mut cloud_tokens = 0;
    for t in runs.iter().flat_map(|o| &o.traces) {
        match t.origin {
            Origin::Exit(i) => exit_tokens[i] += 1,
            Origin::Cloud => cloud_tokens += 1,
        }
    }

    let mut fid = Fidelity::default();
    let per_prompt: Vec<Fidelity> = runs
        .par_iter()
        .zip(prompts)
        .map(|(o, p)| fidelity(model, p, &o.tokens))
        .collect::<Result<_, _>>()?;
    per_prompt.iter().for_each(|f| fid.merge(f));
    let rate = |n: usize| if fid.tokens == 0 { 0.0 } else { n as f64 / fid.tokens as f64 };
    let lossy_wire = scenario.mode == EdgeMode::Collaborative && scenario.wire_precision == Encoding::F16;

    let report = MetricsReport {
        scenario: scenario.name.clone(),
        strategy: scenario.mode,
        theta: scenario.theta,
        wire_precision: scenario.wire_precision,
        upload_policy: scenario.upload_policy(),
        repetitions: scenario.repetitions,
        prompts: prompts.len(),
        generated_tokens,
        total_s,
        edge_s,
        cloud_s,
        comm_s,
        bytes_up: runs.iter().map(|o| o.ledger.bytes_up).sum(),
        bytes_down: runs.iter().map(|o| o.ledger.bytes_down).sum(),
        cloud_requests,
        cloud_req_rate: if generated_tokens == 0 { 0.0 } else { cloud_requests as f64 / generated_tokens as f64 },
        exit_tokens,
        cloud_tokens,
        disagreement_rate: rate(fid.disagreements),
        f16_max_logit_dev: lossy_wire.then_some(fid.f16_max_logit_dev),
        f16_flip_rate: lossy_wire.then(|| rate(fid.f16_flips)),
    };
    Ok(ScenarioResult { report, runs })
}

fn run_repetition(
    scenario: &Scenario,
    model: &Arc<Model>,
    client: &EdgeClient,
    link: LinkParams,
    prompts: &[Vec<u32>],
    rep: usize,
) -> Result<Vec<RunOutput>, HarnessError> {
    let fail = |prompt: usize, source: EdgeError| HarnessError::Run { scenario: scenario.name.clone(), repetition: rep, prompt, source };
    let server = match scenario.mode.server_mode() {
        Some(mode) => Some(Arc::new(CloudServer::new(model.clone(), mode, None, EvictionPolicy::default())?)),
        None => None,
    };
    let mut outputs = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let out = match &server {
            None => client.run(prompt, i as u64 + 1, &mut OfflineLink::default()),
            Some(server) => {
                let seed = scenario.seed ^ ((rep as u64) << 32) ^ i as u64;
                let mut sim = SimCloudLink::new(server.clone(), link, seed, scenario.costs, scenario.upload_queue_capacity)
                    .map_err(|e| fail(i, e.into()))?;
                client.run(prompt, i as u64 + 1, &mut sim)
            }
        };
        outputs.push(out.map_err(|e| fail(i, e))?);
    }
    Ok(outputs)
}
