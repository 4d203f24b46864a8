//! Edge side: the edge partition with confidence-gated exits, background
//! context upload, cloud offload, and the baseline deployment modes.

mod link;
mod state;
mod tcp;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Activations, ContextUpload, Encoding, ErrorCode, Message};
use crate::model::{EdgePartition, ExitDecision, HiddenStateBlock, Model, ModelError, EOS};
use crate::transport::{Nanos, TransferLedger, TransportError};

pub use link::{CloudLink, CostModel, OfflineLink, SimCloudLink};
pub use state::{EdgeState, EdgeStep};
pub use tcp::TcpCloudLink;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeMode {
    Standalone,
    Collaborative,
    NaiveSplit,
    CloudOnly,
}

impl EdgeMode {
    pub const ALL: [EdgeMode; 4] = [EdgeMode::CloudOnly, EdgeMode::NaiveSplit, EdgeMode::Collaborative, EdgeMode::Standalone];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeMode::Standalone => "standalone",
            EdgeMode::Collaborative => "collaborative",
            EdgeMode::NaiveSplit => "naive-split",
            EdgeMode::CloudOnly => "cloud-only",
        }
    }

    /// The server mode this edge mode talks to, if any.
    pub fn server_mode(self) -> Option<crate::cloud::ServerMode> {
        use crate::cloud::ServerMode;
        match self {
            EdgeMode::Standalone => None,
            EdgeMode::Collaborative => Some(ServerMode::Partition),
            EdgeMode::NaiveSplit => Some(ServerMode::Naive),
            EdgeMode::CloudOnly => Some(ServerMode::Full),
        }
    }
}

impl fmt::Display for EdgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standalone" => Ok(EdgeMode::Standalone),
            "collaborative" => Ok(EdgeMode::Collaborative),
            "naive-split" | "naive" => Ok(EdgeMode::NaiveSplit),
            "cloud-only" | "cloud" => Ok(EdgeMode::CloudOnly),
            other => Err(format!(
                "unknown mode {other:?}, expected standalone, collaborative, naive-split or cloud-only"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UploadPolicy {
    /// Every new position's split-layer rows go out in the background once.
    Always,
    /// Nothing is sent until the first offload, which ships the backlog; after that, as `Always`.
    OnFirstOffload,
    /// No background uploads; missing rows are sent synchronously with each offload.
    Never,
}

impl FromStr for UploadPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "always" => Ok(UploadPolicy::Always),
            "on-first-offload" => Ok(UploadPolicy::OnFirstOffload),
            "never" => Ok(UploadPolicy::Never),
            other => Err(format!("unknown upload policy {other:?}, expected always, on-first-offload or never")),
        }
    }
}

impl fmt::Display for UploadPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UploadPolicy::Always => "always",
            UploadPolicy::OnFirstOffload => "on-first-offload",
            UploadPolicy::Never => "never",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig {
    /// Exit threshold; anything above 1 forces every token to the cloud.
    pub theta: f64,
    pub mode: EdgeMode,
    pub upload_policy: UploadPolicy,
    pub wire_precision: Encoding,
    pub max_new_tokens: usize,
    pub upload_queue_capacity: usize,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig {
            theta: 0.8,
            mode: EdgeMode::Collaborative,
            upload_policy: UploadPolicy::Always,
            wire_precision: Encoding::F16,
            max_new_tokens: 100,
            upload_queue_capacity: 8,
        }
    }
}

impl EdgeConfig {
    pub fn validate(&self) -> Result<(), EdgeError> {
        let bad = |m: String| Err(EdgeError::Config(m));
        if !(self.theta >= 0.0) {
            return bad(format!("theta must be a non-negative number, got {}", self.theta));
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1".into());
        }
        if self.upload_queue_capacity == 0 {
            return bad("upload_queue_capacity must be at least 1".into());
        }
        if self.mode == EdgeMode::Standalone && self.upload_policy != UploadPolicy::Never {
            return bad(format!("standalone mode has no cloud; upload policy must be never, got {}", self.upload_policy));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("invalid edge config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("cloud returned {code}: {detail}")]
    Cloud { code: ErrorCode, detail: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("no cloud link in this mode")]
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "index")]
pub enum Origin {
    Exit(usize),
    Cloud,
}

/// Per-token record. `position` is the sequence index whose output produced the token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTrace {
    pub position: u32,
    pub token: u32,
    pub origin: Origin,
    /// Confidence at each exit evaluated for this token, in exit order.
    pub confidences: Vec<f64>,
    pub edge_ns: Nanos,
    /// Time blocked on the network for this token, including cloud compute.
    pub wait_ns: Nanos,
    pub cloud_ns: Nanos,
    pub comm_ns: Nanos,
}

/// Critical-path time split. `total` is exactly the sum of the parts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub edge_ns: Nanos,
    pub cloud_ns: Nanos,
    pub comm_ns: Nanos,
}

impl Timeline {
    pub fn total_ns(&self) -> Nanos {
        self.edge_ns + self.cloud_ns + self.comm_ns
    }

    pub fn add(&mut self, other: &Timeline) {
        self.edge_ns += other.edge_ns;
        self.cloud_ns += other.cloud_ns;
        self.comm_ns += other.comm_ns;
    }

    /// Books a network wait: the cloud's reported compute counts as cloud
    /// time (never more than the wait itself), the rest as communication.
    fn wait(&mut self, wait: Nanos, cloud_compute: Nanos) {
        let cloud = cloud_compute.min(wait);
        self.cloud_ns += cloud;
        self.comm_ns += wait - cloud;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub mode: EdgeMode,
    pub prompt_len: usize,
    pub tokens: Vec<u32>,
    pub traces: Vec<TokenTrace>,
    /// Edge time spent on the prompt before the first decision.
    pub prompt: Timeline,
    pub timeline: Timeline,
    pub ledger: TransferLedger,
    /// Tokens answered by the cloud. A cloud-only stream counts one per token
    /// even though it is started by a single request frame.
    pub cloud_requests: usize,
    pub exit_evaluations: u64,
    /// Positions whose split-layer rows were sent to the cloud (counting repeats).
    pub uploaded_positions: u64,
}

impl RunOutput {
    pub fn cloud_request_rate(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.cloud_requests as f64 / self.tokens.len() as f64
        }
    }
}

/// Tracks which split-layer positions have been shipped so each goes at most once.
#[derive(Debug, Default, Clone)]
pub struct UploadTracker {
    uploaded_upto: usize,
    backlog: Vec<HiddenStateBlock>,
}

impl UploadTracker {
    pub fn uploaded_upto(&self) -> usize {
        self.uploaded_upto
    }

    /// Drops rows already shipped; returns what is left, if anything, and marks it shipped.
    pub fn take_new(&mut self, block: &HiddenStateBlock) -> Option<HiddenStateBlock> {
        let end = block.first_position + block.num_positions();
        if end <= self.uploaded_upto {
            return None;
        }
        let skip = self.uploaded_upto.saturating_sub(block.first_position);
        let d = block.hidden_dim;
        let first = block.first_position + skip;
        self.uploaded_upto = end;
        Some(HiddenStateBlock::new(block.layer, first, d, block.activations[skip * d..].to_vec()))
    }

    pub fn defer(&mut self, block: HiddenStateBlock) {
        self.backlog.push(block);
    }

    /// Everything deferred so far that has not been shipped, merged into one block.
    pub fn drain_backlog(&mut self) -> Option<HiddenStateBlock> {
        let blocks = std::mem::take(&mut self.backlog);
        let mut merged: Option<HiddenStateBlock> = None;
        for b in blocks {
            if let Some(nb) = self.take_new(&b) {
                match &mut merged {
                    None => merged = Some(nb),
                    Some(m) => m.activations.extend_from_slice(&nb.activations),
                }
            }
        }
        merged
    }
}

fn upload_message(block: &HiddenStateBlock, encoding: Encoding) -> Message {
    Message::ContextUpload(ContextUpload {
        layer: block.layer as u16,
        first_position: block.first_position as u32,
        num_positions: block.num_positions() as u32,
        activations: Activations::encode(&block.activations, encoding),
    })
}

/// Edge runtime for one model. Sessions are identified by the caller.
pub struct EdgeClient {
    edge: EdgePartition,
    model_hash: [u8; 32],
    config: EdgeConfig,
    costs: CostModel,
}

struct Session<'l> {
    id: u64,
    link: &'l mut dyn CloudLink,
    opened: bool,
    hash: [u8; 32],
}

impl Session<'_> {
    fn open(&mut self, prompt: &[u32]) -> Result<(), EdgeError> {
        if !self.opened {
            self.link.send(self.id, &Message::OpenSession { model_hash: self.hash, prompt: prompt.to_vec() })?;
            self.opened = true;
        }
        Ok(())
    }

    fn close(&mut self) -> Result<(), EdgeError> {
        if self.opened {
            self.link.send(self.id, &Message::CloseSession)?;
            self.link.flush()?;
            self.opened = false;
        }
        Ok(())
    }

    /// Next reply for this session. Error frames become `EdgeError::Cloud`.
    fn recv_response(&mut self) -> Result<(u32, Nanos), EdgeError> {
        let (sid, msg) = self.link.recv()?;
        match msg {
            Message::InferResponse { token, cloud_compute_ns } if sid == self.id => Ok((token, cloud_compute_ns)),
            Message::Error { code, detail } => Err(EdgeError::Cloud { code, detail }),
            other => Err(EdgeError::Protocol(format!("unexpected {:?} for session {sid}", other.message_type()))),
        }
    }
}

impl EdgeClient {
    pub fn new(model: &Model, config: EdgeConfig) -> Result<Self, EdgeError> {
        Self::with_costs(model, config, CostModel::default())
    }

    pub fn with_costs(model: &Model, config: EdgeConfig, costs: CostModel) -> Result<Self, EdgeError> {
        config.validate()?;
        let (edge, _) = model.split(model.config.split_layer)?;
        Ok(EdgeClient { edge, model_hash: model.fingerprint(), config, costs })
    }

    pub fn config(&self) -> &EdgeConfig {
        &self.config
    }

    pub fn partition(&self) -> &EdgePartition {
        &self.edge
    }

    fn check_prompt(&self, prompt: &[u32]) -> Result<(), EdgeError> {
        let cfg = self.edge.config();
        if prompt.is_empty() {
            return Err(ModelError::EmptyPrompt.into());
        }
        let needed = prompt.len() + self.config.max_new_tokens;
        if needed > cfg.max_seq_len {
            return Err(ModelError::SequenceOverflow { needed, max: cfg.max_seq_len }.into());
        }
        if let Some(&t) = prompt.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(ModelError::InvalidToken { token: t, vocab_size: cfg.vocab_size }.into());
        }
        Ok(())
    }

    /// Runs the configured mode.
    pub fn run(&self, prompt: &[u32], session_id: u64, link: &mut dyn CloudLink) -> Result<RunOutput, EdgeError> {
        match self.config.mode {
            EdgeMode::Standalone => self.run_standalone(prompt, link),
            EdgeMode::Collaborative => self.run_collaborative(prompt, session_id, link),
            EdgeMode::NaiveSplit => self.run_naive_split(prompt, session_id, link),
            EdgeMode::CloudOnly => self.run_cloud_only(prompt, session_id, link),
        }
    }

    /// Edge layers over new positions, booked on the link's clock.
    fn process(&self, state: &mut EdgeState, link: &mut dyn CloudLink, tokens: &[u32], first: usize) -> Result<(EdgeStep, Nanos), EdgeError> {
        let t0 = Instant::now();
        let step = state.process(tokens, first)?;
        let modeled = self.costs.edge(tokens.len(), self.edge.split_layer(), 0);
        let ns = link.compute(modeled, t0.elapsed().as_nanos() as Nanos);
        Ok((step, ns))
    }

    fn decide(&self, state: &mut EdgeState, link: &mut dyn CloudLink, step: &EdgeStep) -> Result<(Vec<ExitDecision>, Nanos), EdgeError> {
        let t0 = Instant::now();
        let before = state.exit_evaluations();
        let decisions = state.decide(step, self.config.theta)?;
        let modeled = self.costs.edge(0, 0, state.exit_evaluations() - before);
        let ns = link.compute(modeled, t0.elapsed().as_nanos() as Nanos);
        Ok((decisions, ns))
    }

    /// Edge-only decoding: the last exit's argmax is taken when no exit is
    /// confident. Never touches the link beyond its clock.
    pub fn run_standalone(&self, prompt: &[u32], link: &mut dyn CloudLink) -> Result<RunOutput, EdgeError> {
        self.decode_with_exits(prompt, 0, link, false)
    }

    /// Exits locally when confident, otherwise asks the cloud for the token.
    pub fn run_collaborative(&self, prompt: &[u32], session_id: u64, link: &mut dyn CloudLink) -> Result<RunOutput, EdgeError> {
        if self.config.mode == EdgeMode::Standalone {
            return Err(EdgeError::Config("collaborative run in standalone mode".into()));
        }
        self.decode_with_exits(prompt, session_id, link, true)
    }

    fn decode_with_exits(&self, prompt: &[u32], session_id: u64, link: &mut dyn CloudLink, cloud: bool) -> Result<RunOutput, EdgeError> {
        self.check_prompt(prompt)?;
        let policy = self.config.upload_policy;
        let enc = self.config.wire_precision;
        let mut state = EdgeState::new(&self.edge);
        let mut tracker = UploadTracker::default();
        let mut timeline = Timeline::default();
        let mut traces = Vec::with_capacity(self.config.max_new_tokens);
        let mut tokens = Vec::with_capacity(self.config.max_new_tokens);
        let mut cloud_requests = 0;
        let mut uploaded_positions = 0u64;
        let mut offloaded = false;
        let mut session = Session { id: session_id, link, opened: false, hash: self.model_hash };

        // Ships or defers a freshly computed split block. Returns time blocked on the queue.
        let stage = |session: &mut Session, tracker: &mut UploadTracker, block: HiddenStateBlock, offloaded: bool, uploaded: &mut u64| -> Result<Nanos, EdgeError> {
            let background = match policy {
                UploadPolicy::Always => true,
                UploadPolicy::OnFirstOffload => offloaded,
                UploadPolicy::Never => false,
            };
            if !cloud {
                return Ok(0);
            }
            if !background {
                tracker.defer(block);
                return Ok(0);
            }
            match tracker.take_new(&block) {
                Some(b) => {
                    session.open(&[])?;
                    *uploaded += b.num_positions() as u64;
                    session.link.upload(session.id, &upload_message(&b, enc))
                }
                None => Ok(0),
            }
        };

        let (mut step, ns) = self.process(&mut state, session.link, prompt, 0)?;
        let blocked = stage(&mut session, &mut tracker, step.split.clone(), offloaded, &mut uploaded_positions)?;
        let prompt_time = Timeline { edge_ns: ns, cloud_ns: 0, comm_ns: blocked };
        timeline.add(&prompt_time);
        let mut position = prompt.len() - 1;

        loop {
            let mut tl = Timeline::default();
            let (decisions, ns) = self.decide(&mut state, session.link, &step)?;
            tl.edge_ns += ns;
            let last = *decisions.last().expect("at least one exit");
            let confidences = decisions.iter().map(|d| d.conf).collect();
            let mut wait_ns = 0;
            let (token, origin) = if last.exited || !cloud {
                (last.token, Origin::Exit(last.exit_index.expect("exit decisions carry an index")))
            } else {
                cloud_requests += 1;
                session.open(&[])?;
                let t0 = session.link.now();
                if !offloaded && policy == UploadPolicy::OnFirstOffload {
                    if let Some(b) = tracker.drain_backlog() {
                        uploaded_positions += b.num_positions() as u64;
                        session.link.upload(session.id, &upload_message(&b, enc))?;
                    }
                }
                offloaded = true;
                if policy == UploadPolicy::Never {
                    if let Some(b) = tracker.drain_backlog() {
                        uploaded_positions += b.num_positions() as u64;
                        session.link.send(session.id, &upload_message(&b, enc))?;
                    }
                }
                let request = Message::InferRequest { target_position: position as u32 };
                session.link.send(session.id, &request)?;
                let (token, cloud_ns) = match session.recv_response() {
                    Err(EdgeError::Cloud { code: ErrorCode::ContextTimeout, detail }) => {
                        log::warn!("context timeout at position {position} ({detail}); flushing and retrying once");
                        session.link.flush()?;
                        session.link.send(session.id, &request)?;
                        session.recv_response()?
                    }
                    other => other?,
                };
                wait_ns = session.link.now() - t0;
                tl.wait(wait_ns, cloud_ns);
                (token, Origin::Cloud)
            };
            tokens.push(token);

            // Every emitted token is pushed through the edge so its context exists.
            let (next, ns) = self.process(&mut state, session.link, &[token], position + 1)?;
            tl.edge_ns += ns;
            let blocked = stage(&mut session, &mut tracker, next.split.clone(), offloaded, &mut uploaded_positions)?;
            tl.comm_ns += blocked;
            traces.push(TokenTrace {
                position: position as u32,
                token,
                origin,
                confidences,
                edge_ns: tl.edge_ns,
                wait_ns,
                cloud_ns: tl.cloud_ns,
                comm_ns: tl.comm_ns,
            });
            timeline.add(&tl);
            step = next;
            position += 1;
            if token == EOS || tokens.len() == self.config.max_new_tokens {
                break;
            }
        }
        session.close()?;
        let ledger = session.link.ledger();
        Ok(RunOutput {
            mode: self.config.mode,
            prompt_len: prompt.len(),
            tokens,
            traces,
            prompt: prompt_time,
            timeline,
            ledger,
            cloud_requests,
            exit_evaluations: state.exit_evaluations(),
            uploaded_positions,
        })
    }

    /// Stateless-cloud baseline: every token ships the whole prefix's
    /// split-layer rows in f32 and waits for the answer. No exits, no overlap.
    pub fn run_naive_split(&self, prompt: &[u32], session_id: u64, link: &mut dyn CloudLink) -> Result<RunOutput, EdgeError> {
        self.check_prompt(prompt)?;
        let mut state = EdgeState::new(&self.edge);
        let mut session = Session { id: session_id, link, opened: false, hash: self.model_hash };
        let mut tokens = Vec::with_capacity(self.config.max_new_tokens);
        let mut traces = Vec::with_capacity(self.config.max_new_tokens);
        let mut uploaded_positions = 0u64;

        let (step, ns) = self.process(&mut state, session.link, prompt, 0)?;
        let prompt_time = Timeline { edge_ns: ns, ..Timeline::default() };
        let mut timeline = prompt_time;
        let mut prefix = step.split;
        let mut position = prompt.len() - 1;
        session.open(&[])?;
        loop {
            let mut tl = Timeline::default();
            let t0 = session.link.now();
            uploaded_positions += prefix.num_positions() as u64;
            session.link.send(session.id, &upload_message(&prefix, Encoding::F32))?;
            session.link.send(session.id, &Message::InferRequest { target_position: position as u32 })?;
            let (token, cloud_ns) = session.recv_response()?;
            let wait_ns = session.link.now() - t0;
            tl.wait(wait_ns, cloud_ns);
            tokens.push(token);
            let done = token == EOS || tokens.len() == self.config.max_new_tokens;
            if !done {
                let (next, ns) = self.process(&mut state, session.link, &[token], position + 1)?;
                tl.edge_ns += ns;
                prefix.activations.extend_from_slice(&next.split.activations);
            }
            traces.push(TokenTrace {
                position: position as u32,
                token,
                origin: Origin::Cloud,
                confidences: Vec::new(),
                edge_ns: tl.edge_ns,
                wait_ns,
                cloud_ns: tl.cloud_ns,
                comm_ns: tl.comm_ns,
            });
            timeline.add(&tl);
            position += 1;
            if done {
                break;
            }
        }
        session.close()?;
        let cloud_requests = tokens.len();
        Ok(RunOutput {
            mode: EdgeMode::NaiveSplit,
            prompt_len: prompt.len(),
            tokens,
            traces,
            prompt: prompt_time,
            timeline,
            ledger: session.link.ledger(),
            cloud_requests,
            exit_evaluations: 0,
            uploaded_positions,
        })
    }

    /// Whole model in the cloud: the prompt goes up once, tokens stream back.
    pub fn run_cloud_only(&self, prompt: &[u32], session_id: u64, link: &mut dyn CloudLink) -> Result<RunOutput, EdgeError> {
        self.check_prompt(prompt)?;
        let mut session = Session { id: session_id, link, opened: false, hash: self.model_hash };
        let mut tokens = Vec::with_capacity(self.config.max_new_tokens);
        let mut traces = Vec::with_capacity(self.config.max_new_tokens);
        let mut timeline = Timeline::default();
        let first = prompt.len() - 1;
        let target = (first + self.config.max_new_tokens - 1) as u32;
        let mut t0 = session.link.now();
        session.open(prompt)?;
        session.link.send(session.id, &Message::InferRequest { target_position: target })?;
        loop {
            let (token, cloud_ns) = session.recv_response()?;
            let now = session.link.now();
            let mut tl = Timeline::default();
            tl.wait(now - t0, cloud_ns);
            traces.push(TokenTrace {
                position: (first + tokens.len()) as u32,
                token,
                origin: Origin::Cloud,
                confidences: Vec::new(),
                edge_ns: 0,
                wait_ns: now - t0,
                cloud_ns: tl.cloud_ns,
                comm_ns: tl.comm_ns,
            });
            timeline.add(&tl);
            t0 = now;
            tokens.push(token);
            if token == EOS || tokens.len() == self.config.max_new_tokens {
                break;
            }
        }
        session.close()?;
        Ok(RunOutput {
            mode: EdgeMode::CloudOnly,
            prompt_len: prompt.len(),
            cloud_requests: tokens.len(),
            tokens,
            traces,
            prompt: Timeline::default(),
            timeline,
            ledger: session.link.ledger(),
            exit_evaluations: 0,
            uploaded_positions: 0,
        })
    }
}
