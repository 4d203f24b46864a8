use serde::{Deserialize, Serialize};

use crate::codec::{Encoding, CONTEXT_UPLOAD_FIXED, HEADER_LEN, INFER_REQUEST_LEN, INFER_RESPONSE_LEN, OPEN_SESSION_FIXED};
use crate::edge::EdgeMode;

use super::HarnessError;

/// Closed-form traffic for one prompt. `payload_up` counts activation bytes only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteEstimate {
    pub payload_up: u64,
    pub framed_up: u64,
    pub framed_down: u64,
}

impl ByteEstimate {
    pub fn framed_total(&self) -> u64 {
        self.framed_up + self.framed_down
    }
}

struct Acc(u64);

impl Acc {
    fn add(&mut self, v: u64) -> Result<(), HarnessError> {
        self.0 = self.0.checked_add(v).ok_or(HarnessError::Overflow)?;
        Ok(())
    }
}

fn mul(a: u64, b: u64) -> Result<u64, HarnessError> {
    a.checked_mul(b).ok_or(HarnessError::Overflow)
}

const H: u64 = HEADER_LEN as u64;
const OPEN: u64 = H + OPEN_SESSION_FIXED as u64;
const UPLOAD: u64 = H + CONTEXT_UPLOAD_FIXED as u64;
const REQUEST: u64 = H + INFER_REQUEST_LEN as u64;
const RESPONSE: u64 = H + INFER_RESPONSE_LEN as u64;
const CLOSE: u64 = H;

/// Bytes for a run that generates `new_tokens` from a `prompt_len` prompt,
/// assuming every token goes to the cloud in the collaborative case.
pub fn analytic_bytes(
    prompt_len: u64,
    new_tokens: u64,
    hidden_dim: u64,
    precision: Encoding,
    strategy: EdgeMode,
) -> Result<ByteEstimate, HarnessError> {
    analytic_bytes_with_requests(prompt_len, new_tokens, new_tokens, hidden_dim, precision, strategy)
}

/// As [`analytic_bytes`] with an explicit cloud request count (only the
/// collaborative strategy can offload fewer than all tokens). Collaborative
/// traffic is for the `always` upload policy: one frame for the prompt block
/// and one per generated position.
pub fn analytic_bytes_with_requests(
    prompt_len: u64,
    new_tokens: u64,
    requests: u64,
    hidden_dim: u64,
    precision: Encoding,
    strategy: EdgeMode,
) -> Result<ByteEstimate, HarnessError> {
    if prompt_len == 0 || hidden_dim == 0 {
        return Err(HarnessError::Invalid("prompt_len and hidden_dim must be positive".into()));
    }
    if requests > new_tokens {
        return Err(HarnessError::Invalid(format!("{requests} requests for {new_tokens} tokens")));
    }
    let row = |width: u64| mul(hidden_dim, width);
    let mut payload = Acc(0);
    let mut up = Acc(0);
    let mut down = Acc(0);
    match strategy {
        EdgeMode::Standalone => {}
        EdgeMode::CloudOnly => {
            up.add(OPEN + mul(4, prompt_len)?)?;
            if new_tokens > 0 {
                up.add(REQUEST)?;
            }
            up.add(CLOSE)?;
            down.add(mul(RESPONSE, new_tokens)?)?;
        }
        EdgeMode::NaiveSplit => {
            // Token t ships the prefix of length prompt_len + t - 1 in f32.
            let r = row(4)?;
            up.add(OPEN + CLOSE)?;
            for t in 1..=new_tokens {
                let positions = prompt_len.checked_add(t - 1).ok_or(HarnessError::Overflow)?;
                let p = mul(positions, r)?;
                payload.add(p)?;
                up.add(UPLOAD + p + REQUEST)?;
            }
            down.add(mul(RESPONSE, new_tokens)?)?;
        }
        EdgeMode::Collaborative => {
            let positions = prompt_len.checked_add(new_tokens).ok_or(HarnessError::Overflow)?;
            let p = mul(positions, row(precision.width() as u64)?)?;
            payload.add(p)?;
            up.add(OPEN + CLOSE)?;
            up.add(mul(UPLOAD, 1 + new_tokens)?)?;
            up.add(p)?;
            up.add(mul(REQUEST, requests)?)?;
            down.add(mul(RESPONSE, requests)?)?;
        }
    }
    Ok(ByteEstimate { payload_up: payload.0, framed_up: up.0, framed_down: down.0 })
}

/// Fractional reduction of collaborative over naive activation payload.
pub fn payload_reduction(prompt_len: u64, new_tokens: u64, hidden_dim: u64, precision: Encoding) -> Result<f64, HarnessError> {
    let naive = analytic_bytes(prompt_len, new_tokens, hidden_dim, Encoding::F32, EdgeMode::NaiveSplit)?;
    let ce = analytic_bytes(prompt_len, new_tokens, hidden_dim, precision, EdgeMode::Collaborative)?;
    Ok(1.0 - ce.payload_up as f64 / naive.payload_up as f64)
}
