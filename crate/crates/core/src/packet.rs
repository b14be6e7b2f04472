//! Sphinx-derived onion packet carrying per-hop delay and flag metadata.
//!
//! The group is Ristretto255 (prime order, 32-byte canonical encodings).
//! A packet is a header `(alpha, beta, mac)` followed by a layered payload and
//! is exactly [`PACKET_LEN`] bytes at every hop and for every path length.
//!
//! Routing block layout (one [`HOP_BLOCK_LEN`]-byte block per hop inside `beta`):
//!
//! ```text
//! [flags: 1][delay_s: f64 big-endian, 8][addr_len: 1][addr: 31, zero padded][mac_next: 16]
//! ```
//!
//! For the final hop the address field holds the recipient id and `mac_next`
//! is zero. Intermediate payload layers are plain ChaCha20 layers; the
//! innermost layer is ChaCha20-Poly1305 under the final hop's key, so payload
//! tampering is detected at delivery.

use bitflags::bitflags;
use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::RistrettoPoint;
use curve25519_dalek::scalar::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::crypto;

pub const GROUP_ELEMENT_LEN: usize = 32;
pub const ADDR_FIELD_LEN: usize = 32;
/// Longest address or recipient id that fits in a routing block.
pub const MAX_ADDR_LEN: usize = ADDR_FIELD_LEN - 1;
pub const ROUTING_LEN: usize = 1 + 8 + ADDR_FIELD_LEN;
pub const MAC_LEN: usize = 16;
pub const HOP_BLOCK_LEN: usize = ROUTING_LEN + MAC_LEN;
pub const MAX_HOPS: usize = 5;
pub const BETA_LEN: usize = MAX_HOPS * HOP_BLOCK_LEN;
pub const HEADER_LEN: usize = GROUP_ELEMENT_LEN + BETA_LEN + MAC_LEN;
pub const PAYLOAD_LEN: usize = 1024;
pub const PACKET_LEN: usize = HEADER_LEN + PAYLOAD_LEN;
pub const REPLAY_TAG_LEN: usize = 16;
const LEN_PREFIX: usize = 2;
/// Largest message `create_packet` accepts.
pub const MAX_MESSAGE_LEN: usize = PAYLOAD_LEN - crypto::AEAD_TAG_LEN - LEN_PREFIX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PacketError {
    #[error("path has {0} hops, must be between 1 and {MAX_HOPS}")]
    PathTooLong(usize),
    #[error("message is {0} bytes, capacity is {MAX_MESSAGE_LEN}")]
    MessageTooLarge(usize),
    #[error("invalid hop: {0}")]
    InvalidHop(String),
    #[error("integrity check failed")]
    MacMismatch,
    #[error("malformed packet: {0}")]
    MalformedPacket(&'static str),
    #[error("invalid group element encoding")]
    InvalidGroupElement,
    #[error("invalid key: {0}")]
    InvalidKey(String),
}

/// Canonical encoding of a Ristretto255 point.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupElement([u8; GROUP_ELEMENT_LEN]);

impl GroupElement {
    /// Accepts only canonical encodings of valid group elements.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PacketError> {
        let arr: [u8; GROUP_ELEMENT_LEN] =
            bytes.try_into().map_err(|_| PacketError::InvalidGroupElement)?;
        crypto::decode_point(&arr).ok_or(PacketError::InvalidGroupElement)?;
        Ok(Self(arr))
    }

    pub fn from_hex(s: &str) -> Result<Self, PacketError> {
        let bytes = hex::decode(s.trim()).map_err(|_| PacketError::InvalidGroupElement)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; GROUP_ELEMENT_LEN] {
        &self.0
    }

    pub(crate) fn from_point(p: &RistrettoPoint) -> Self {
        Self(p.compress().to_bytes())
    }

    pub(crate) fn point(&self) -> RistrettoPoint {
        // Construction guarantees validity.
        crypto::decode_point(&self.0).expect("validated group element")
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({})", self.to_hex())
    }
}

/// A node's long-term private scalar.
#[derive(Clone)]
pub struct SecretKey(Scalar);

impl SecretKey {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(crypto::random_scalar(rng))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PacketError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| PacketError::InvalidKey("secret key must be 32 bytes".into()))?;
        Option::<Scalar>::from(Scalar::from_canonical_bytes(arr))
            .map(Self)
            .ok_or_else(|| PacketError::InvalidKey("non-canonical scalar".into()))
    }

    pub fn from_hex(s: &str) -> Result<Self, PacketError> {
        let bytes = hex::decode(s.trim()).map_err(|e| PacketError::InvalidKey(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0.to_bytes())
    }

    pub fn public_key(&self) -> GroupElement {
        GroupElement::from_point(&(&self.0 * RISTRETTO_BASEPOINT_TABLE))
    }

    pub(crate) fn scalar(&self) -> &Scalar {
        &self.0
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct HopFlags: u8 {
        /// Drop cover: the terminal provider discards the packet.
        const DROP = 0b0001;
        /// Evaluation-only type marker for goodput measurement.
        const DEBUG_REAL = 0b0010;
        const DEBUG_COVER = 0b0100;
        /// Set on the last hop only.
        const FINAL = 0b1000;
    }
}

/// Per-hop plaintext routing metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopSpec {
    pub next_addr: String,
    pub delay_s: f64,
    pub flags: HopFlags,
}

impl HopSpec {
    pub fn relay(next_addr: impl Into<String>, delay_s: f64) -> Self {
        Self { next_addr: next_addr.into(), delay_s, flags: HopFlags::empty() }
    }

    /// Terminal hop. The address is replaced by the recipient id at build time.
    pub fn terminal(delay_s: f64, flags: HopFlags) -> Self {
        Self { next_addr: String::new(), delay_s, flags: flags | HopFlags::FINAL }
    }

    fn encode(&self, out: &mut [u8]) {
        debug_assert_eq!(out.len(), ROUTING_LEN);
        out[0] = self.flags.bits();
        out[1..9].copy_from_slice(&self.delay_s.to_be_bytes());
        let addr = self.next_addr.as_bytes();
        out[9] = addr.len() as u8;
        out[10..10 + addr.len()].copy_from_slice(addr);
        out[10 + addr.len()..].fill(0);
    }

    fn decode(block: &[u8]) -> Result<Self, PacketError> {
        let flags = HopFlags::from_bits(block[0]).ok_or(PacketError::MalformedPacket("flags"))?;
        let delay_s = f64::from_be_bytes(block[1..9].try_into().unwrap());
        if !delay_s.is_finite() || delay_s < 0.0 {
            return Err(PacketError::MalformedPacket("delay"));
        }
        let len = block[9] as usize;
        if len > MAX_ADDR_LEN {
            return Err(PacketError::MalformedPacket("address length"));
        }
        let next_addr = std::str::from_utf8(&block[10..10 + len])
            .map_err(|_| PacketError::MalformedPacket("address encoding"))?
            .to_owned();
        Ok(Self { next_addr, delay_s, flags })
    }

    fn validate(&self, is_last: bool) -> Result<(), PacketError> {
        if !self.delay_s.is_finite() || self.delay_s < 0.0 {
            return Err(PacketError::InvalidHop(format!("delay {} is not >= 0", self.delay_s)));
        }
        if self.next_addr.len() > MAX_ADDR_LEN {
            return Err(PacketError::InvalidHop(format!(
                "address '{}' longer than {MAX_ADDR_LEN} bytes",
                self.next_addr
            )));
        }
        if !is_last && self.flags.intersects(HopFlags::FINAL | HopFlags::DROP) {
            return Err(PacketError::InvalidHop("FINAL/DROP on a non-terminal hop".into()));
        }
        Ok(())
    }
}

/// 16-byte duplicate-detection tag derived from a hop's shared secret.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReplayTag(pub [u8; REPLAY_TAG_LEN]);

#[derive(Clone, PartialEq, Eq)]
pub struct SphinxHeader {
    pub alpha: GroupElement,
    pub beta: [u8; BETA_LEN],
    pub mac: [u8; MAC_LEN],
}

#[derive(Clone, PartialEq, Eq)]
pub struct SphinxPacket {
    pub header: SphinxHeader,
    pub payload: Box<[u8; PAYLOAD_LEN]>,
}

impl fmt::Debug for SphinxPacket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SphinxPacket").field("alpha", &self.header.alpha).finish_non_exhaustive()
    }
}

impl SphinxPacket {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PACKET_LEN);
        out.extend_from_slice(self.header.alpha.as_bytes());
        out.extend_from_slice(&self.header.beta);
        out.extend_from_slice(&self.header.mac);
        out.extend_from_slice(&self.payload[..]);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PacketError> {
        if bytes.len() != PACKET_LEN {
            return Err(PacketError::MalformedPacket("wrong length"));
        }
        let alpha = GroupElement::from_bytes(&bytes[..GROUP_ELEMENT_LEN])?;
        let mut beta = [0u8; BETA_LEN];
        beta.copy_from_slice(&bytes[GROUP_ELEMENT_LEN..GROUP_ELEMENT_LEN + BETA_LEN]);
        let mut mac = [0u8; MAC_LEN];
        mac.copy_from_slice(&bytes[GROUP_ELEMENT_LEN + BETA_LEN..HEADER_LEN]);
        let mut payload = Box::new([0u8; PAYLOAD_LEN]);
        payload.copy_from_slice(&bytes[HEADER_LEN..]);
        Ok(Self { header: SphinxHeader { alpha, beta, mac }, payload })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ProcessResult {
    /// Forward `packet` to `next.next_addr` after `next.delay_s`.
    Relay { next: HopSpec, packet: SphinxPacket, replay_tag: ReplayTag },
    /// Terminal hop reached; `hop` is the terminal routing block.
    Deliver { recipient_id: String, payload: Vec<u8>, hop: HopSpec, replay_tag: ReplayTag },
    /// Drop-flagged cover reached its provider.
    Drop { replay_tag: ReplayTag },
}

impl ProcessResult {
    pub fn replay_tag(&self) -> ReplayTag {
        match self {
            Self::Relay { replay_tag, .. }
            | Self::Deliver { replay_tag, .. }
            | Self::Drop { replay_tag } => *replay_tag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LengthConstants {
    pub header_len: usize,
    pub payload_len: usize,
    pub max_hops: usize,
}

pub fn packet_length_constants() -> LengthConstants {
    LengthConstants { header_len: HEADER_LEN, payload_len: PAYLOAD_LEN, max_hops: MAX_HOPS }
}

/// Per-hop key material derived from a shared secret.
struct HopKeys {
    header_stream: [u8; 32],
    header_mac: [u8; 32],
    payload: [u8; 32],
    blinding: Scalar,
    replay_tag: ReplayTag,
}

impl HopKeys {
    fn derive(alpha: &GroupElement, shared: &RistrettoPoint) -> Self {
        let s = shared.compress().to_bytes();
        let tag = crypto::derive_key(b"replay", &s);
        let mut replay = [0u8; REPLAY_TAG_LEN];
        replay.copy_from_slice(&tag[..REPLAY_TAG_LEN]);
        Self {
            header_stream: crypto::derive_key(b"rho", &s),
            header_mac: crypto::derive_key(b"mu", &s),
            payload: crypto::derive_key(b"pi", &s),
            blinding: crypto::hash_to_scalar(b"blind", &[alpha.as_bytes(), &s]),
            replay_tag: ReplayTag(replay),
        }
    }
}

/// Sender-side view of a packet, used for test vectors and blinding checks.
#[derive(Debug, Clone)]
pub struct SenderTrace {
    /// `alpha_i` as seen by hop `i`.
    pub alphas: Vec<GroupElement>,
    pub replay_tags: Vec<ReplayTag>,
}

/// Builds a packet that, processed hop by hop with each node's key, yields
/// the given hop specs in order and then delivers `message` to `recipient_id`.
///
/// The terminal hop always carries `FINAL`; its address field is set to
/// `recipient_id`.
pub fn create_packet<R: Rng + ?Sized>(
    path: &[(GroupElement, HopSpec)],
    recipient_id: &str,
    message: &[u8],
    rng: &mut R,
) -> Result<SphinxPacket, PacketError> {
    create_packet_with_trace(path, recipient_id, message, rng).map(|(p, _)| p)
}

pub fn create_packet_with_trace<R: Rng + ?Sized>(
    path: &[(GroupElement, HopSpec)],
    recipient_id: &str,
    message: &[u8],
    rng: &mut R,
) -> Result<(SphinxPacket, SenderTrace), PacketError> {
    let hops = path.len();
    if hops == 0 || hops > MAX_HOPS {
        return Err(PacketError::PathTooLong(hops));
    }
    if message.len() > MAX_MESSAGE_LEN {
        return Err(PacketError::MessageTooLarge(message.len()));
    }
    let mut specs: Vec<HopSpec> = path.iter().map(|(_, h)| h.clone()).collect();
    {
        let last = specs.last_mut().unwrap();
        last.next_addr = recipient_id.to_owned();
        last.flags |= HopFlags::FINAL;
    }
    for (i, spec) in specs.iter().enumerate() {
        spec.validate(i + 1 == hops)?;
    }

    // Session keys: alpha_i = g^{x b_0..b_{i-1}}, s_i = y_i^{x b_0..b_{i-1}}.
    let mut exponent = crypto::random_scalar(rng);
    let mut alphas = Vec::with_capacity(hops);
    let mut keys = Vec::with_capacity(hops);
    for (node_pub, _) in path {
        let alpha = GroupElement::from_point(&(&exponent * RISTRETTO_BASEPOINT_TABLE));
        let shared = node_pub.point() * exponent;
        let k = HopKeys::derive(&alpha, &shared);
        exponent *= k.blinding;
        alphas.push(alpha);
        keys.push(k);
    }

    // Filler so that the tail of beta survives every shift.
    let stream_len = BETA_LEN + HOP_BLOCK_LEN;
    let mut filler: Vec<u8> = Vec::new();
    for k in keys.iter().take(hops - 1) {
        filler.extend_from_slice(&[0u8; HOP_BLOCK_LEN]);
        let ks = crypto::keystream(&k.header_stream, stream_len);
        let start = stream_len - filler.len();
        for (f, s) in filler.iter_mut().zip(&ks[start..]) {
            *f ^= s;
        }
    }

    // Innermost routing block, then wrap outwards.
    let mut beta = [0u8; BETA_LEN];
    let open_len = BETA_LEN - filler.len();
    specs[hops - 1].encode(&mut beta[..ROUTING_LEN]);
    crypto::xor_keystream(&keys[hops - 1].header_stream, &mut beta[..open_len]);
    beta[open_len..].copy_from_slice(&filler);
    let mut mac: [u8; MAC_LEN] = crypto::mac(&keys[hops - 1].header_mac, &[&beta]);

    for i in (0..hops - 1).rev() {
        let mut next = [0u8; BETA_LEN];
        specs[i].encode(&mut next[..ROUTING_LEN]);
        next[ROUTING_LEN..HOP_BLOCK_LEN].copy_from_slice(&mac);
        next[HOP_BLOCK_LEN..].copy_from_slice(&beta[..BETA_LEN - HOP_BLOCK_LEN]);
        crypto::xor_keystream(&keys[i].header_stream, &mut next);
        beta = next;
        mac = crypto::mac(&keys[i].header_mac, &[&beta]);
    }

    // Payload: authenticated innermost layer, stream layers outside it.
    let mut payload = Box::new([0u8; PAYLOAD_LEN]);
    payload[..LEN_PREFIX].copy_from_slice(&(message.len() as u16).to_be_bytes());
    payload[LEN_PREFIX..LEN_PREFIX + message.len()].copy_from_slice(message);
    crypto::aead_seal(&keys[hops - 1].payload, &mut payload[..]);
    for k in keys[..hops - 1].iter().rev() {
        crypto::xor_keystream(&k.payload, &mut payload[..]);
    }

    let trace = SenderTrace {
        alphas: alphas.clone(),
        replay_tags: keys.iter().map(|k| k.replay_tag).collect(),
    };
    let packet = SphinxPacket { header: SphinxHeader { alpha: alphas[0], beta, mac }, payload };
    Ok((packet, trace))
}

/// Peels one layer with the node's secret key.
pub fn process_packet(
    secret_key: &SecretKey,
    packet: &SphinxPacket,
) -> Result<ProcessResult, PacketError> {
    let alpha = packet.header.alpha;
    let shared = alpha.point() * secret_key.scalar();
    let keys = HopKeys::derive(&alpha, &shared);

    let expected: [u8; MAC_LEN] = crypto::mac(&keys.header_mac, &[&packet.header.beta]);
    if !crypto::ct_eq(&expected, &packet.header.mac) {
        return Err(PacketError::MacMismatch);
    }

    let mut full = [0u8; BETA_LEN + HOP_BLOCK_LEN];
    full[..BETA_LEN].copy_from_slice(&packet.header.beta);
    crypto::xor_keystream(&keys.header_stream, &mut full);
    let hop = HopSpec::decode(&full[..ROUTING_LEN])?;

    if hop.flags.contains(HopFlags::FINAL) {
        if hop.flags.contains(HopFlags::DROP) {
            return Ok(ProcessResult::Drop { replay_tag: keys.replay_tag });
        }
        let mut body = packet.payload.to_vec();
        if !crypto::aead_open(&keys.payload, &mut body) {
            return Err(PacketError::MacMismatch);
        }
        let len = u16::from_be_bytes([body[0], body[1]]) as usize;
        if len > MAX_MESSAGE_LEN {
            return Err(PacketError::MalformedPacket("message length"));
        }
        let payload = body[LEN_PREFIX..LEN_PREFIX + len].to_vec();
        return Ok(ProcessResult::Deliver {
            recipient_id: hop.next_addr.clone(),
            payload,
            hop,
            replay_tag: keys.replay_tag,
        });
    }

    let mut mac = [0u8; MAC_LEN];
    mac.copy_from_slice(&full[ROUTING_LEN..HOP_BLOCK_LEN]);
    let mut beta = [0u8; BETA_LEN];
    beta.copy_from_slice(&full[HOP_BLOCK_LEN..]);
    let next_alpha = GroupElement::from_point(&(alpha.point() * keys.blinding));
    let mut payload = packet.payload.clone();
    crypto::xor_keystream(&keys.payload, &mut payload[..]);

    Ok(ProcessResult::Relay {
        next: hop,
        packet: SphinxPacket { header: SphinxHeader { alpha: next_alpha, beta, mac }, payload },
        replay_tag: keys.replay_tag,
    })
}
