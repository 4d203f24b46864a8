//! Cloud side: hosts the cloud partition (or the full model), keeps per-session
//! context rows and KV caches, answers one token per infer request.

mod serve;
mod session;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::codec::{ContextUpload, ErrorCode, Message};
use crate::model::{CloudPartition, HiddenStateBlock, Logits, Model, ModelError, EOS};
use crate::transport::{nanos_from_secs, Nanos};

pub use serve::{serve_stream, serve_tcp, ServerHandle};
use session::Session;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServerMode {
    /// Whole model server-side; the edge only sends the prompt.
    Full,
    /// Layers `[k, L)` with a persistent per-session KV cache.
    Partition,
    /// Layers `[k, L)`, stateless: the cache and context are dropped after every answer.
    Naive,
}

impl FromStr for ServerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(ServerMode::Full),
            "partition" => Ok(ServerMode::Partition),
            "naive" | "naive-split" => Ok(ServerMode::Naive),
            other => Err(format!("unknown server mode {other:?}, expected full, partition or naive")),
        }
    }
}

impl fmt::Display for ServerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServerMode::Full => "full",
            ServerMode::Partition => "partition",
            ServerMode::Naive => "naive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionPolicy {
    pub ttl_ns: Nanos,
    pub sweep_interval_ns: Nanos,
}

impl Default for EvictionPolicy {
    fn default() -> Self {
        EvictionPolicy { ttl_ns: nanos_from_secs(300.0), sweep_interval_ns: nanos_from_secs(30.0) }
    }
}

impl EvictionPolicy {
    pub fn from_secs(ttl_s: f64, sweep_s: f64) -> Result<Self, ServerError> {
        if !(ttl_s.is_finite() && ttl_s > 0.0) {
            return Err(ServerError::new(ErrorCode::Internal, format!("ttl must be positive, got {ttl_s}")));
        }
        if !(sweep_s.is_finite() && sweep_s > 0.0) {
            return Err(ServerError::new(ErrorCode::Internal, format!("sweep interval must be positive, got {sweep_s}")));
        }
        Ok(EvictionPolicy { ttl_ns: nanos_from_secs(ttl_s), sweep_interval_ns: nanos_from_secs(sweep_s) })
    }
}

/// A failure reported to the peer as an `Error` frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerError {
    pub code: ErrorCode,
    pub detail: String,
}

impl ServerError {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerError { code, detail: detail.into() }
    }

    pub fn to_message(&self) -> Message {
        Message::error(self.code, self.detail.clone())
    }
}

impl fmt::Display for ServerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail)
    }
}

impl std::error::Error for ServerError {}

impl From<ModelError> for ServerError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::SequenceOverflow { .. } => ErrorCode::SequenceOverflow,
            ModelError::NonContiguous { .. } => ErrorCode::BadPosition,
            ModelError::InvalidToken { .. } | ModelError::EmptyPrompt => ErrorCode::MalformedPayload,
            _ => ErrorCode::Internal,
        };
        ServerError::new(code, e.to_string())
    }
}

/// One answered infer request.
#[derive(Debug, Clone)]
pub struct InferStep {
    pub position: u32,
    pub token: u32,
    /// Positions pushed through the server's layers for this answer.
    pub new_positions: usize,
    pub layers: usize,
    pub wall_ns: Nanos,
    pub logits: Option<Logits>,
}

#[derive(Debug, Clone)]
pub enum InferPoll {
    Ready(InferStep),
    /// Context is incomplete; `missing` is the first absent position.
    Pending { missing: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionInfo {
    pub processed_upto: usize,
    pub pending_positions: Vec<u32>,
    pub positions_computed: u64,
    pub last_activity: Nanos,
}

#[derive(Debug, Default)]
struct Counters {
    positions: AtomicU64,
    layer_positions: AtomicU64,
    evicted: AtomicU64,
}

pub struct CloudServer {
    mode: ServerMode,
    model: Arc<Model>,
    cloud: Option<CloudPartition>,
    model_hash: [u8; 32],
    policy: EvictionPolicy,
    sessions: Mutex<HashMap<u64, Arc<Session>>>,
    counters: Counters,
}

impl CloudServer {
    /// `split_layer` overrides the model's configured split for partition modes.
    pub fn new(
        model: Arc<Model>,
        mode: ServerMode,
        split_layer: Option<usize>,
        policy: EvictionPolicy,
    ) -> Result<Self, ModelError> {
        let cloud = match mode {
            ServerMode::Full => None,
            ServerMode::Partition | ServerMode::Naive => {
                Some(model.split(split_layer.unwrap_or(model.config.split_layer))?.1)
            }
        };
        Ok(CloudServer {
            mode,
            model_hash: model.fingerprint(),
            model,
            cloud,
            policy,
            sessions: Mutex::default(),
            counters: Counters::default(),
        })
    }

    pub fn mode(&self) -> ServerMode {
        self.mode
    }

    pub fn model_hash(&self) -> [u8; 32] {
        self.model_hash
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    pub fn split_layer(&self) -> Option<usize> {
        self.cloud.as_ref().map(|c| c.split_layer())
    }

    fn layers_served(&self) -> usize {
        match &self.cloud {
            Some(c) => c.layer_range().len(),
            None => self.model.config.num_layers,
        }
    }

    fn session(&self, id: u64) -> Result<Arc<Session>, ServerError> {
        self.sessions
            .lock()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or_else(|| ServerError::new(ErrorCode::UnknownSession, format!("no session {id}")))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Positions run through the server's layers across all sessions.
    pub fn positions_computed(&self) -> u64 {
        self.counters.positions.load(Ordering::Relaxed)
    }

    pub fn layer_positions_computed(&self) -> u64 {
        self.counters.layer_positions.load(Ordering::Relaxed)
    }

    pub fn evicted_total(&self) -> u64 {
        self.counters.evicted.load(Ordering::Relaxed)
    }

    pub fn session_info(&self, id: u64) -> Option<SessionInfo> {
        let s = self.sessions.lock().unwrap().get(&id).cloned()?;
        let st = s.compute.lock().unwrap();
        let ctx = s.context.lock();
        Some(SessionInfo {
            processed_upto: st.cache.len(),
            pending_positions: ctx.rows.keys().copied().collect(),
            positions_computed: st.positions_computed,
            last_activity: s.last_activity(),
        })
    }

    pub fn open_session(&self, id: u64, model_hash: &[u8; 32], prompt: &[u32], now: Nanos) -> Result<(), ServerError> {
        if model_hash != &self.model_hash {
            return Err(ServerError::new(ErrorCode::ModelMismatch, "model hash does not match the loaded model"));
        }
        let cfg = &self.model.config;
        let cache = match &self.cloud {
            Some(c) => c.new_cache(),
            None => {
                if prompt.is_empty() {
                    return Err(ServerError::new(ErrorCode::MalformedPayload, "full-model session needs a prompt"));
                }
                if prompt.len() > cfg.max_seq_len {
                    return Err(ServerError::new(
                        ErrorCode::SequenceOverflow,
                        format!("prompt of {} tokens exceeds max_seq_len {}", prompt.len(), cfg.max_seq_len),
                    ));
                }
                if let Some(t) = prompt.iter().find(|&&t| t as usize >= cfg.vocab_size) {
                    return Err(ServerError::new(ErrorCode::MalformedPayload, format!("token {t} outside vocabulary")));
                }
                self.model.new_cache(0..cfg.num_layers)
            }
        };
        let prompt = if self.cloud.is_some() { Vec::new() } else { prompt.to_vec() };
        let mut sessions = self.sessions.lock().unwrap();
        if sessions.contains_key(&id) {
            return Err(ServerError::new(ErrorCode::DuplicateSession, format!("session {id} already open")));
        }
        sessions.insert(id, Arc::new(Session::new(cache, prompt, now)));
        Ok(())
    }

    /// Stores split-layer rows. Returns how many positions were new.
    pub fn upload(&self, id: u64, upload: &ContextUpload, now: Nanos) -> Result<usize, ServerError> {
        let cloud = self
            .cloud
            .as_ref()
            .ok_or_else(|| ServerError::new(ErrorCode::WrongMode, "full-model server takes no context uploads"))?;
        let session = self.session(id)?;
        session.touch(now);
        if upload.layer as usize != cloud.split_layer() {
            return Err(ServerError::new(
                ErrorCode::WrongLayer,
                format!("upload for layer {}, server split is {}", upload.layer, cloud.split_layer()),
            ));
        }
        let d = self.model.config.hidden_dim;
        let n = upload.num_positions as usize;
        if n == 0 || upload.activations.len() != n * d {
            return Err(ServerError::new(
                ErrorCode::ShapeMismatch,
                format!("{} values for {n} positions of width {d}", upload.activations.len()),
            ));
        }
        let end = upload.first_position as u64 + n as u64;
        if end > self.model.config.max_seq_len as u64 {
            return Err(ServerError::new(
                ErrorCode::SequenceOverflow,
                format!("positions up to {end} exceed max_seq_len {}", self.model.config.max_seq_len),
            ));
        }
        let values = upload.activations.to_f32();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ServerError::new(ErrorCode::MalformedPayload, "non-finite activation"));
        }
        let rows = values.chunks_exact(d).map(<[f32]>::to_vec);
        Ok(session.context.insert(upload.first_position, rows))
    }

    /// Non-blocking infer: answers if the context for `[processed_upto, target]` is present.
    pub fn poll_infer(&self, id: u64, target: u32, now: Nanos) -> Result<InferPoll, ServerError> {
        self.infer_inner(id, target, now, None)
    }

    /// Blocks up to `timeout` for missing context, then fails with `CONTEXT_TIMEOUT`.
    pub fn infer_blocking(&self, id: u64, target: u32, now: Nanos, timeout: Duration) -> Result<InferStep, ServerError> {
        match self.infer_inner(id, target, now, Some(timeout))? {
            InferPoll::Ready(step) => Ok(step),
            InferPoll::Pending { missing } => Err(ServerError::new(
                ErrorCode::ContextTimeout,
                format!("context for position {missing} did not arrive"),
            )),
        }
    }

    fn infer_inner(&self, id: u64, target: u32, now: Nanos, wait: Option<Duration>) -> Result<InferPoll, ServerError> {
        let cloud = self
            .cloud
            .as_ref()
            .ok_or_else(|| ServerError::new(ErrorCode::WrongMode, "use next_full_token on a full-model server"))?;
        let session = self.session(id)?;
        session.touch(now);
        let mut st = session.compute.lock().unwrap();
        let processed = st.cache.len() as u32;
        if processed > 0 && target + 1 == processed {
            // Repeat of the last answer; nothing left to compute.
            let token = st.last_token.expect("answered position has a token");
            return Ok(InferPoll::Ready(InferStep {
                position: target,
                token,
                new_positions: 0,
                layers: cloud.layer_range().len(),
                wall_ns: 0,
                logits: None,
            }));
        }
        if target < processed {
            return Err(ServerError::new(
                ErrorCode::BadPosition,
                format!("position {target} is behind the session ({processed} processed)"),
            ));
        }
        if target as usize >= self.model.config.max_seq_len {
            return Err(ServerError::new(ErrorCode::SequenceOverflow, format!("position {target} past max_seq_len")));
        }
        let mut ctx = match wait {
            None => session.context.lock(),
            Some(t) => session.context.wait_for(processed, target, t),
        };
        if ctx.closed {
            return Err(ServerError::new(ErrorCode::UnknownSession, format!("session {id} closed")));
        }
        if let Some(missing) = ctx.first_missing(processed, target) {
            return Ok(InferPoll::Pending { missing });
        }
        let d = self.model.config.hidden_dim;
        let mut rows = Vec::with_capacity((target - processed + 1) as usize * d);
        for p in processed..=target {
            rows.extend(ctx.rows.remove(&p).expect("coverage checked"));
        }
        ctx.consumed_upto = target + 1;
        drop(ctx);

        let started = Instant::now();
        let block = HiddenStateBlock::new(cloud.split_layer(), processed as usize, d, rows);
        let n = block.num_positions();
        let out = cloud.forward(&block, &mut st.cache)?;
        let logits = cloud.final_logits(out.last_row());
        let token = logits.argmax();
        let wall_ns = started.elapsed().as_nanos() as Nanos;
        st.positions_computed += n as u64;
        st.last_token = Some(token);
        self.count(n);
        if self.mode == ServerMode::Naive {
            st.cache.clear();
            st.last_token = None;
            let mut ctx = session.context.lock();
            ctx.rows.clear();
            ctx.consumed_upto = 0;
        }
        session.touch(now);
        Ok(InferPoll::Ready(InferStep {
            position: target,
            token,
            new_positions: n,
            layers: cloud.layer_range().len(),
            wall_ns,
            logits: Some(logits),
        }))
    }

    /// Full-model mode: produces the next greedy token if the session has not
    /// yet answered position `target` and has not emitted EOS.
    pub fn next_full_token(&self, id: u64, target: u32, now: Nanos) -> Result<Option<InferStep>, ServerError> {
        if self.cloud.is_some() {
            return Err(ServerError::new(ErrorCode::WrongMode, "partition server answers from uploaded context"));
        }
        let session = self.session(id)?;
        session.touch(now);
        let cfg = &self.model.config;
        if target as usize + 1 >= cfg.max_seq_len {
            return Err(ServerError::new(
                ErrorCode::SequenceOverflow,
                format!("generating past position {target} exceeds max_seq_len {}", cfg.max_seq_len),
            ));
        }
        let mut st = session.compute.lock().unwrap();
        let position = st.tokens.len() as u32 - 1;
        if position > target || (st.last_token == Some(EOS)) {
            return Ok(None);
        }
        let started = Instant::now();
        let first = st.cache.len();
        let block = self.model.embed(&st.tokens[first..], first)?;
        let n = block.num_positions();
        let out = self.model.forward_layers(0..cfg.num_layers, &block, &mut st.cache)?;
        let logits = self.model.final_logits(out.last_row());
        let token = logits.argmax();
        let wall_ns = started.elapsed().as_nanos() as Nanos;
        st.tokens.push(token);
        st.last_token = Some(token);
        st.positions_computed += n as u64;
        self.count(n);
        session.touch(now);
        Ok(Some(InferStep { position, token, new_positions: n, layers: cfg.num_layers, wall_ns, logits: Some(logits) }))
    }

    fn count(&self, positions: usize) {
        self.counters.positions.fetch_add(positions as u64, Ordering::Relaxed);
        self.counters
            .layer_positions
            .fetch_add((positions * self.layers_served()) as u64, Ordering::Relaxed);
    }

    pub fn close_session(&self, id: u64) -> Result<(), ServerError> {
        let s = self
            .sessions
            .lock()
            .unwrap()
            .remove(&id)
            .ok_or_else(|| ServerError::new(ErrorCode::UnknownSession, format!("no session {id}")))?;
        s.context.close();
        Ok(())
    }

    /// Drops sessions idle for longer than the ttl. Returns how many went.
    pub fn evict(&self, now: Nanos) -> usize {
        let ttl = self.policy.ttl_ns;
        let mut sessions = self.sessions.lock().unwrap();
        let stale: Vec<u64> = sessions
            .iter()
            .filter(|(_, s)| now.saturating_sub(s.last_activity()) > ttl)
            .map(|(&id, _)| id)
            .collect();
        for id in &stale {
            if let Some(s) = sessions.remove(id) {
                s.context.close();
            }
        }
        self.counters.evicted.fetch_add(stale.len() as u64, Ordering::Relaxed);
        if !stale.is_empty() {
            log::debug!("evicted {} idle sessions", stale.len());
        }
        stale.len()
    }

    /// Handles everything except infer requests. Returns an error frame to send back, if any.
    pub fn handle_control(&self, id: u64, msg: &Message, now: Nanos) -> Option<Message> {
        let result = match msg {
            Message::OpenSession { model_hash, prompt } => self.open_session(id, model_hash, prompt, now),
            Message::ContextUpload(u) => self.upload(id, u, now).map(|_| ()),
            Message::CloseSession => self.close_session(id),
            Message::Error { code, detail } => {
                log::warn!("peer reported {code} on session {id}: {detail}");
                Ok(())
            }
            Message::InferRequest { .. } | Message::InferResponse { .. } => Err(ServerError::new(
                ErrorCode::WrongMode,
                format!("unexpected {:?} on the control path", msg.message_type()),
            )),
        };
        result.err().map(|e| e.to_message())
    }
}
