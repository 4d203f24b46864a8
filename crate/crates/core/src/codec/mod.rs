//! Wire format for edge/cloud traffic: fixed 18-byte header, little-endian
//! fields, binary16 activation payloads. `PROTOCOL.md` has the byte tables.

pub mod half;
mod message;

use std::io::{self, Read};

use thiserror::Error;

pub use half::{decode_f16, encode_f16};
pub use message::{
    decode_message, decode_payload, encode_message, payload_bytes, Activations, ContextUpload, Encoding,
    ErrorCode, FrameHeader, Message, MessageType, CONTEXT_UPLOAD_FIXED, FRAME_MAGIC, HEADER_LEN,
    INFER_REQUEST_LEN, INFER_RESPONSE_LEN, MAX_PAYLOAD, OPEN_SESSION_FIXED, PROTOCOL_VERSION,
};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("frame payload of {0} bytes exceeds limit")]
    FrameTooLarge(usize),
    #[error("num_positions ({num_positions}) and hidden_dim ({hidden_dim}) must be positive")]
    InvalidDimensions { num_positions: u64, hidden_dim: u64 },
    #[error("byte count overflows u64")]
    Overflow,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CodecError {
    pub fn code(&self) -> ErrorCode {
        match self {
            CodecError::BadMagic(_) => ErrorCode::BadMagic,
            CodecError::BadVersion(_) => ErrorCode::BadVersion,
            CodecError::Truncated { .. } => ErrorCode::Truncated,
            CodecError::LengthMismatch(_) => ErrorCode::LengthMismatch,
            CodecError::UnknownType(_) => ErrorCode::UnknownType,
            CodecError::Malformed(_) => ErrorCode::MalformedPayload,
            CodecError::FrameTooLarge(_) => ErrorCode::FrameTooLarge,
            CodecError::InvalidDimensions { .. } | CodecError::Overflow => ErrorCode::MalformedPayload,
            CodecError::Io(e) if e.kind() == io::ErrorKind::UnexpectedEof => ErrorCode::Truncated,
            CodecError::Io(_) => ErrorCode::Internal,
        }
    }
}

/// Reads one whole frame (header and payload) from a byte stream.
/// Returns `Ok(None)` on a clean end of stream before any header byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, CodecError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(CodecError::Truncated { needed: HEADER_LEN, available: got }),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let parsed = FrameHeader::parse(&header)?;
    let mut frame = Vec::with_capacity(HEADER_LEN + parsed.payload_len as usize);
    frame.extend_from_slice(&header);
    frame.resize(HEADER_LEN + parsed.payload_len as usize, 0);
    r.read_exact(&mut frame[HEADER_LEN..]).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CodecError::Truncated { needed: frame.len(), available: HEADER_LEN }
        } else {
            e.into()
        }
    })?;
    Ok(Some(frame))
}
