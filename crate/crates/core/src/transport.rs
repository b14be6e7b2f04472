//! Datagram framing. Every datagram is
//!
//! ```text
//! [magic 0x4c 0x58 ("LX")][version 0x01][kind][body]
//! ```
//!
//! | kind | value | body length |
//! |------|-------|-------------|
//! | PACKET    | 0x01 | 1357 (one Sphinx packet) |
//! | PULL_REQ  | 0x02 | 64: client id field (1 length byte + 31 bytes), token 16, nonce 16 |
//! | PULL_ITEM | 0x03 | 1006 (one stored message or dummy) |
//!
//! A PULL_REQ for client `alice` with an all-`0x07` token and zero nonce
//! begins `4c 58 01 02 05 61 6c 69 63 65 00 ..`.

use thiserror::Error;

use crate::packet::{ADDR_FIELD_LEN, MAX_ADDR_LEN, PACKET_LEN};
use crate::provider::ITEM_LEN;
use crate::topology::TOKEN_LEN;

pub const MAGIC: [u8; 2] = *b"LX";
pub const VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 4;
pub const PULL_REQ_LEN: usize = ADDR_FIELD_LEN + TOKEN_LEN + 16;
pub const MAX_DATAGRAM_LEN: usize = FRAME_HEADER_LEN + PACKET_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("{kind:?} body must be {expected} bytes, got {got}")]
    BodyWrongSize { kind: FrameKind, expected: usize, got: usize },
    #[error("cannot deframe datagram: {0}")]
    DeframeError(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Packet = 1,
    PullReq = 2,
    PullItem = 3,
}

impl FrameKind {
    pub fn body_len(self) -> usize {
        match self {
            Self::Packet => PACKET_LEN,
            Self::PullReq => PULL_REQ_LEN,
            Self::PullItem => ITEM_LEN,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Self::Packet),
            2 => Some(Self::PullReq),
            3 => Some(Self::PullItem),
            _ => None,
        }
    }
}

pub fn frame(kind: FrameKind, body: &[u8]) -> Result<Vec<u8>, TransportError> {
    if body.len() != kind.body_len() {
        return Err(TransportError::BodyWrongSize { kind, expected: kind.body_len(), got: body.len() });
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(kind as u8);
    out.extend_from_slice(body);
    Ok(out)
}

pub fn deframe(datagram: &[u8]) -> Result<(FrameKind, &[u8]), TransportError> {
    if datagram.len() < FRAME_HEADER_LEN {
        return Err(TransportError::DeframeError("truncated header"));
    }
    if datagram[..2] != MAGIC {
        return Err(TransportError::DeframeError("bad magic"));
    }
    if datagram[2] != VERSION {
        return Err(TransportError::DeframeError("unsupported version"));
    }
    let kind = FrameKind::from_byte(datagram[3]).ok_or(TransportError::DeframeError("unknown kind"))?;
    let body = &datagram[FRAME_HEADER_LEN..];
    if body.len() != kind.body_len() {
        return Err(TransportError::DeframeError("wrong body length for kind"));
    }
    Ok((kind, body))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PullRequest {
    pub client_id: String,
    pub token: [u8; TOKEN_LEN],
    pub nonce: [u8; 16],
}

impl PullRequest {
    pub fn encode(&self) -> Result<[u8; PULL_REQ_LEN], TransportError> {
        let id = self.client_id.as_bytes();
        if id.len() > MAX_ADDR_LEN {
            return Err(TransportError::DeframeError("client id too long"));
        }
        let mut out = [0u8; PULL_REQ_LEN];
        out[0] = id.len() as u8;
        out[1..1 + id.len()].copy_from_slice(id);
        out[ADDR_FIELD_LEN..ADDR_FIELD_LEN + TOKEN_LEN].copy_from_slice(&self.token);
        out[ADDR_FIELD_LEN + TOKEN_LEN..].copy_from_slice(&self.nonce);
        Ok(out)
    }

    pub fn decode(body: &[u8]) -> Result<Self, TransportError> {
        if body.len() != PULL_REQ_LEN {
            return Err(TransportError::DeframeError("pull request length"));
        }
        let len = body[0] as usize;
        if len > MAX_ADDR_LEN {
            return Err(TransportError::DeframeError("client id length"));
        }
        let client_id = std::str::from_utf8(&body[1..1 + len])
            .map_err(|_| TransportError::DeframeError("client id encoding"))?
            .to_owned();
        Ok(Self {
            client_id,
            token: body[ADDR_FIELD_LEN..ADDR_FIELD_LEN + TOKEN_LEN].try_into().unwrap(),
            nonce: body[ADDR_FIELD_LEN + TOKEN_LEN..].try_into().unwrap(),
        })
    }
}
