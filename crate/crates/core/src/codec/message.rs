use std::fmt;

use super::half::{decode_f16, encode_f16};
use super::CodecError;

pub const FRAME_MAGIC: &[u8; 4] = b"CECO";
pub const PROTOCOL_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
/// Largest payload accepted from the wire (256 MiB).
pub const MAX_PAYLOAD: usize = 256 << 20;

pub const OPEN_SESSION_FIXED: usize = 32 + 4;
pub const CONTEXT_UPLOAD_FIXED: usize = 2 + 4 + 4 + 1;
pub const INFER_REQUEST_LEN: usize = 4;
pub const INFER_RESPONSE_LEN: usize = 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    OpenSession = 1,
    ContextUpload = 2,
    InferRequest = 3,
    InferResponse = 4,
    CloseSession = 5,
    Error = 6,
}

impl MessageType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MessageType::OpenSession,
            2 => MessageType::ContextUpload,
            3 => MessageType::InferRequest,
            4 => MessageType::InferResponse,
            5 => MessageType::CloseSession,
            6 => MessageType::Error,
            _ => return None,
        })
    }
}

/// Wire error codes, shared by codec failures and server-side errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    BadMagic,
    BadVersion,
    Truncated,
    LengthMismatch,
    UnknownType,
    MalformedPayload,
    FrameTooLarge,
    ModelMismatch,
    DuplicateSession,
    UnknownSession,
    WrongLayer,
    BadPosition,
    ContextTimeout,
    SequenceOverflow,
    WrongMode,
    ShapeMismatch,
    Internal,
    /// A code this build does not know; preserved for round-tripping.
    Other(u16),
}

impl ErrorCode {
    pub const fn code(self) -> u16 {
        match self {
            ErrorCode::BadMagic => 1,
            ErrorCode::BadVersion => 2,
            ErrorCode::Truncated => 3,
            ErrorCode::LengthMismatch => 4,
            ErrorCode::UnknownType => 5,
            ErrorCode::MalformedPayload => 6,
            ErrorCode::FrameTooLarge => 7,
            ErrorCode::ModelMismatch => 16,
            ErrorCode::DuplicateSession => 17,
            ErrorCode::UnknownSession => 18,
            ErrorCode::WrongLayer => 19,
            ErrorCode::BadPosition => 20,
            ErrorCode::ContextTimeout => 21,
            ErrorCode::SequenceOverflow => 22,
            ErrorCode::WrongMode => 23,
            ErrorCode::ShapeMismatch => 24,
            ErrorCode::Internal => 255,
            ErrorCode::Other(c) => c,
        }
    }

    pub fn from_code(c: u16) -> Self {
        match c {
            1 => ErrorCode::BadMagic,
            2 => ErrorCode::BadVersion,
            3 => ErrorCode::Truncated,
            4 => ErrorCode::LengthMismatch,
            5 => ErrorCode::UnknownType,
            6 => ErrorCode::MalformedPayload,
            7 => ErrorCode::FrameTooLarge,
            16 => ErrorCode::ModelMismatch,
            17 => ErrorCode::DuplicateSession,
            18 => ErrorCode::UnknownSession,
            19 => ErrorCode::WrongLayer,
            20 => ErrorCode::BadPosition,
            21 => ErrorCode::ContextTimeout,
            22 => ErrorCode::SequenceOverflow,
            23 => ErrorCode::WrongMode,
            24 => ErrorCode::ShapeMismatch,
            255 => ErrorCode::Internal,
            other => ErrorCode::Other(other),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::BadMagic => "BAD_MAGIC",
            ErrorCode::BadVersion => "BAD_VERSION",
            ErrorCode::Truncated => "TRUNCATED",
            ErrorCode::LengthMismatch => "LENGTH_MISMATCH",
            ErrorCode::UnknownType => "UNKNOWN_TYPE",
            ErrorCode::MalformedPayload => "MALFORMED_PAYLOAD",
            ErrorCode::FrameTooLarge => "FRAME_TOO_LARGE",
            ErrorCode::ModelMismatch => "MODEL_MISMATCH",
            ErrorCode::DuplicateSession => "DUPLICATE_SESSION",
            ErrorCode::UnknownSession => "UNKNOWN_SESSION",
            ErrorCode::WrongLayer => "WRONG_LAYER",
            ErrorCode::BadPosition => "BAD_POSITION",
            ErrorCode::ContextTimeout => "CONTEXT_TIMEOUT",
            ErrorCode::SequenceOverflow => "SEQUENCE_OVERFLOW",
            ErrorCode::WrongMode => "WRONG_MODE",
            ErrorCode::ShapeMismatch => "SHAPE_MISMATCH",
            ErrorCode::Internal => "INTERNAL",
            ErrorCode::Other(_) => "UNKNOWN_CODE",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name(), self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    F32,
    F16,
}

impl Encoding {
    pub fn id(self) -> u8 {
        match self {
            Encoding::F32 => 0,
            Encoding::F16 => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Encoding::F32),
            1 => Some(Encoding::F16),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Encoding::F32 => 4,
            Encoding::F16 => 2,
        }
    }
}

impl std::str::FromStr for Encoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "float32" => Ok(Encoding::F32),
            "f16" | "float16" => Ok(Encoding::F16),
            other => Err(format!("unknown wire precision {other:?}, expected f16 or f32")),
        }
    }
}

/// Activation rows as they travel. Equality compares bit patterns so NaN
/// payloads still round-trip.
#[derive(Debug, Clone)]
pub enum Activations {
    F32(Vec<f32>),
    F16(Vec<u16>),
}

impl PartialEq for Activations {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Activations::F32(a), Activations::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Activations::F16(a), Activations::F16(b)) => a == b,
            _ => false,
        }
    }
}

impl Activations {
    pub fn encode(values: &[f32], encoding: Encoding) -> Self {
        match encoding {
            Encoding::F32 => Activations::F32(values.to_vec()),
            Encoding::F16 => Activations::F16(values.iter().map(|&v| encode_f16(v)).collect()),
        }
    }

    pub fn encoding(&self) -> Encoding {
        match self {
            Activations::F32(_) => Encoding::F32,
            Activations::F16(_) => Encoding::F16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Activations::F32(v) => v.len(),
            Activations::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            Activations::F32(v) => v.clone(),
            Activations::F16(v) => v.iter().map(|&h| decode_f16(h)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextUpload {
    pub layer: u16,
    pub first_position: u32,
    pub num_positions: u32,
    pub activations: Activations,
}

impl ContextUpload {
    /// Row width implied by the payload.
    pub fn hidden_dim(&self) -> usize {
        if self.num_positions == 0 {
            0
        } else {
            self.activations.len() / self.num_positions as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    OpenSession { model_hash: [u8; 32], prompt: Vec<u32> },
    ContextUpload(ContextUpload),
    InferRequest { target_position: u32 },
    InferResponse { token: u32, cloud_compute_ns: u64 },
    CloseSession,
    Error { code: ErrorCode, detail: String },
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::OpenSession { .. } => MessageType::OpenSession,
            Message::ContextUpload(_) => MessageType::ContextUpload,
            Message::InferRequest { .. } => MessageType::InferRequest,
            Message::InferResponse { .. } => MessageType::InferResponse,
            Message::CloseSession => MessageType::CloseSession,
            Message::Error { .. } => MessageType::Error,
        }
    }

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        Message::Error { code, detail: detail.into() }
    }

    pub fn payload_len(&self) -> usize {
        match self {
            Message::OpenSession { prompt, .. } => OPEN_SESSION_FIXED + 4 * prompt.len(),
            Message::ContextUpload(u) => CONTEXT_UPLOAD_FIXED + u.activations.len() * u.activations.encoding().width(),
            Message::InferRequest { .. } => INFER_REQUEST_LEN,
            Message::InferResponse { .. } => INFER_RESPONSE_LEN,
            Message::CloseSession => 0,
            Message::Error { detail, .. } => 2 + detail.len(),
        }
    }

    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }
}

/// Frame header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub msg_type: MessageType,
    pub session_id: u64,
    pub payload_len: u32,
}

impl FrameHeader {
    /// Validates magic, version and type, in that order.
    pub fn parse(buf: &[u8; HEADER_LEN]) -> Result<Self, CodecError> {
        if &buf[0..4] != FRAME_MAGIC {
            return Err(CodecError::BadMagic([buf[0], buf[1], buf[2], buf[3]]));
        }
        if buf[4] != PROTOCOL_VERSION {
            return Err(CodecError::BadVersion(buf[4]));
        }
        let msg_type = MessageType::from_u8(buf[5]).ok_or(CodecError::UnknownType(buf[5]))?;
        let session_id = u64::from_le_bytes(buf[6..14].try_into().unwrap());
        let payload_len = u32::from_le_bytes(buf[14..18].try_into().unwrap());
        if payload_len as usize > MAX_PAYLOAD {
            return Err(CodecError::FrameTooLarge(payload_len as usize));
        }
        Ok(FrameHeader { msg_type, session_id, payload_len })
    }
}

pub fn encode_message(session_id: u64, msg: &Message) -> Vec<u8> {
    let payload_len = msg.payload_len();
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len);
    out.extend_from_slice(FRAME_MAGIC);
    out.push(PROTOCOL_VERSION);
    out.push(msg.message_type() as u8);
    out.extend_from_slice(&session_id.to_le_bytes());
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    match msg {
        Message::OpenSession { model_hash, prompt } => {
            out.extend_from_slice(model_hash);
            out.extend_from_slice(&(prompt.len() as u32).to_le_bytes());
            for t in prompt {
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        Message::ContextUpload(u) => {
            out.extend_from_slice(&u.layer.to_le_bytes());
            out.extend_from_slice(&u.first_position.to_le_bytes());
            out.extend_from_slice(&u.num_positions.to_le_bytes());
            out.push(u.activations.encoding().id());
            match &u.activations {
                Activations::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Activations::F16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Message::InferRequest { target_position } => out.extend_from_slice(&target_position.to_le_bytes()),
        Message::InferResponse { token, cloud_compute_ns } => {
            out.extend_from_slice(&token.to_le_bytes());
            out.extend_from_slice(&cloud_compute_ns.to_le_bytes());
        }
        Message::CloseSession => {}
        Message::Error { code, detail } => {
            out.extend_from_slice(&code.code().to_le_bytes());
            out.extend_from_slice(detail.as_bytes());
        }
    }
    debug_assert_eq!(out.len(), HEADER_LEN + payload_len);
    out
}

/// Decodes exactly one frame occupying all of `buf`.
pub fn decode_message(buf: &[u8]) -> Result<(u64, Message), CodecError> {
    if buf.len() < HEADER_LEN {
        return Err(CodecError::Truncated { needed: HEADER_LEN, available: buf.len() });
    }
    let header = FrameHeader::parse(buf[..HEADER_LEN].try_into().unwrap())?;
    let total = HEADER_LEN + header.payload_len as usize;
    if buf.len() < total {
        return Err(CodecError::Truncated { needed: total, available: buf.len() });
    }
    if buf.len() > total {
        return Err(CodecError::LengthMismatch(format!(
            "{} bytes present, header declares {total}",
            buf.len()
        )));
    }
    let msg = decode_payload(header.msg_type, &buf[HEADER_LEN..])?;
    Ok((header.session_id, msg))
}

fn u32_at(p: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(p[at..at + 4].try_into().unwrap())
}

fn expect_len(what: &str, p: &[u8], want: usize) -> Result<(), CodecError> {
    if p.len() != want {
        return Err(CodecError::LengthMismatch(format!("{what} payload is {} bytes, expected {want}", p.len())));
    }
    Ok(())
}

pub fn decode_payload(msg_type: MessageType, p: &[u8]) -> Result<Message, CodecError> {
    Ok(match msg_type {
        MessageType::OpenSession => {
            if p.len() < OPEN_SESSION_FIXED {
                return Err(CodecError::LengthMismatch(format!("OpenSession payload is {} bytes", p.len())));
            }
            let model_hash: [u8; 32] = p[..32].try_into().unwrap();
            let n = u32_at(p, 32) as usize;
            expect_len("OpenSession", p, OPEN_SESSION_FIXED + 4 * n)?;
            let prompt = (0..n).map(|i| u32_at(p, OPEN_SESSION_FIXED + 4 * i)).collect();
            Message::OpenSession { model_hash, prompt }
        }
        MessageType::ContextUpload => {
            if p.len() < CONTEXT_UPLOAD_FIXED {
                return Err(CodecError::LengthMismatch(format!("ContextUpload payload is {} bytes", p.len())));
            }
            let layer = u16::from_le_bytes([p[0], p[1]]);
            let first_position = u32_at(p, 2);
            let num_positions = u32_at(p, 6);
            let encoding = Encoding::from_id(p[10])
                .ok_or_else(|| CodecError::Malformed(format!("unknown activation encoding {}", p[10])))?;
            let data = &p[CONTEXT_UPLOAD_FIXED..];
            let width = encoding.width();
            if num_positions == 0 || data.len() % (num_positions as usize * width) != 0 || data.is_empty() {
                return Err(CodecError::LengthMismatch(format!(
                    "{} activation bytes do not form {num_positions} rows of {width}-byte values",
                    data.len()
                )));
            }
            let activations = match encoding {
                Encoding::F32 => {
                    Activations::F32(data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
                }
                Encoding::F16 => {
                    Activations::F16(data.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
                }
            };
            Message::ContextUpload(ContextUpload { layer, first_position, num_positions, activations })
        }
        MessageType::InferRequest => {
            expect_len("InferRequest", p, INFER_REQUEST_LEN)?;
            Message::InferRequest { target_position: u32_at(p, 0) }
        }
        MessageType::InferResponse => {
            expect_len("InferResponse", p, INFER_RESPONSE_LEN)?;
            Message::InferResponse {
                token: u32_at(p, 0),
                cloud_compute_ns: u64::from_le_bytes(p[4..12].try_into().unwrap()),
            }
        }
        MessageType::CloseSession => {
            expect_len("CloseSession", p, 0)?;
            Message::CloseSession
        }
        MessageType::Error => {
            if p.len() < 2 {
                return Err(CodecError::LengthMismatch("Error payload shorter than its code".into()));
            }
            let code = ErrorCode::from_code(u16::from_le_bytes([p[0], p[1]]));
            let detail = String::from_utf8(p[2..].to_vec())
                .map_err(|_| CodecError::Malformed("error detail is not utf-8".into()))?;
            Message::Error { code, detail }
        }
    })
}

/// Payload bytes for `num_positions` rows of `hidden_dim` values.
pub fn payload_bytes(num_positions: u64, hidden_dim: u64, encoding: Encoding) -> Result<u64, CodecError> {
    if num_positions == 0 || hidden_dim == 0 {
        return Err(CodecError::InvalidDimensions { num_positions, hidden_dim });
    }
    num_positions
        .checked_mul(hidden_dim)
        .and_then(|n| n.checked_mul(encoding.width() as u64))
        .ok_or(CodecError::Overflow)
}
