//! Client behaviour: a FIFO send buffer drained by a Poisson payload stream
//! (which emits drop cover when the buffer is empty), independent loop and
//! drop cover streams, and pull-based retrieval from the client's provider.
//!
//! Messages are end-to-end encrypted to the recipient's public key into a
//! fixed-size item, so a stored message, a returned loop and a provider
//! dummy are all [`ITEM_LEN`] bytes.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use rand::Rng;
use serde::Serialize;
use std::collections::VecDeque;
use thiserror::Error;

use crate::crypto;
use crate::mixnode::{LoopTable, DEFAULT_LOOP_TABLE_CAP};
use crate::packet::{
    create_packet, GroupElement, HopFlags, PacketError, SecretKey, SphinxPacket, GROUP_ELEMENT_LEN,
};
use crate::provider::ITEM_LEN;
use crate::rates::{sample_exp, Rates};
use crate::topology::{route, sample_forward_path, NodeDescriptor, Topology, TopologyError, TOKEN_LEN};
use crate::transport::PullRequest;

const SEALED_OVERHEAD: usize = GROUP_ELEMENT_LEN + crypto::AEAD_TAG_LEN;
const PLAINTEXT_LEN: usize = ITEM_LEN - SEALED_OVERHEAD;
/// Largest application message a client can send.
pub const DATA_CAPACITY: usize = PLAINTEXT_LEN - 3;
pub const DEFAULT_PULL_PERIOD_S: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("message is {0} bytes, capacity is {DATA_CAPACITY}")]
    MessageTooLarge(usize),
    #[error("unknown recipient '{0}'")]
    UnknownRecipient(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Packet(#[from] PacketError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ContentKind {
    Payload = 1,
    Loop = 2,
}

/// Encrypts `data` to `recipient` into exactly [`ITEM_LEN`] bytes.
pub fn seal_item<R: Rng + ?Sized>(
    recipient: &GroupElement,
    kind: ContentKind,
    data: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, ClientError> {
    if data.len() > DATA_CAPACITY {
        return Err(ClientError::MessageTooLarge(data.len()));
    }
    let e = crypto::random_scalar(rng);
    let eph = GroupElement::from_point(&(&e * RISTRETTO_BASEPOINT_TABLE));
    let shared = (recipient.point() * e).compress().to_bytes();
    let key = crypto::derive_key(b"e2e", &[eph.as_bytes().as_slice(), &shared].concat());

    let mut out = vec![0u8; ITEM_LEN];
    out[..GROUP_ELEMENT_LEN].copy_from_slice(eph.as_bytes());
    let body = &mut out[GROUP_ELEMENT_LEN..];
    body[0] = kind as u8;
    body[1..3].copy_from_slice(&(data.len() as u16).to_be_bytes());
    body[3..3 + data.len()].copy_from_slice(data);
    crypto::aead_seal(&key, body);
    Ok(out)
}

/// Inverse of [`seal_item`]; `None` for dummies, foreign items and tampering.
pub fn open_item(secret_key: &SecretKey, item: &[u8]) -> Option<(ContentKind, Vec<u8>)> {
    if item.len() != ITEM_LEN {
        return None;
    }
    let eph = GroupElement::from_bytes(&item[..GROUP_ELEMENT_LEN]).ok()?;
    let shared = (eph.point() * secret_key.scalar()).compress().to_bytes();
    let key = crypto::derive_key(b"e2e", &[eph.as_bytes().as_slice(), &shared].concat());
    let mut body = item[GROUP_ELEMENT_LEN..].to_vec();
    if !crypto::aead_open(&key, &mut body) {
        return None;
    }
    let kind = match body[0] {
        1 => ContentKind::Payload,
        2 => ContentKind::Loop,
        _ => return None,
    };
    let len = u16::from_be_bytes([body[1], body[2]]) as usize;
    if len > DATA_CAPACITY {
        return None;
    }
    Some((kind, body[3..3 + len].to_vec()))
}

#[derive(Debug, Clone, Default)]
pub struct SendBuffer {
    queue: VecDeque<(String, Vec<u8>)>,
}

impl SendBuffer {
    pub fn enqueue_message(&mut self, recipient: impl Into<String>, message: Vec<u8>) -> Result<(), ClientError> {
        if message.len() > DATA_CAPACITY {
            return Err(ClientError::MessageTooLarge(message.len()));
        }
        self.queue.push_back((recipient.into(), message));
        Ok(())
    }

    pub fn pop(&mut self) -> Option<(String, Vec<u8>)> {
        self.queue.pop_front()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EmissionKind {
    Real,
    Drop,
    Loop,
}

/// One packet leaving the client, plus the sender-side view of its route.
#[derive(Debug, Clone)]
pub struct Emission {
    pub packet: SphinxPacket,
    pub first_hop_addr: String,
    pub kind: EmissionKind,
    /// When the stream that produced this packet fires next.
    pub next_tick: f64,
    /// Node ids in path order.
    pub path: Vec<String>,
    /// Per-hop delays in path order; the terminal hop is always 0.
    pub delays: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub id: String,
    pub secret_key: SecretKey,
    pub provider_id: String,
    pub token: [u8; TOKEN_LEN],
    pub rates: Rates,
    pub pull_period_s: f64,
    /// Mark terminal hops with the evaluation-only type flags.
    pub debug_type_flags: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PullOutcome {
    Message(Vec<u8>),
    LoopReturned { rtt: f64 },
    Discarded,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ClientCounters {
    pub sent_real: u64,
    pub sent_drop: u64,
    pub sent_loop: u64,
    pub received: u64,
    pub loops_returned: u64,
    pub discarded_items: u64,
}

pub struct Client {
    pub cfg: ClientConfig,
    pub buffer: SendBuffer,
    loops: LoopTable,
    pub received: Vec<Vec<u8>>,
    pub loop_rtts: Vec<f64>,
    pub counters: ClientCounters,
}

impl Client {
    pub fn new<R: Rng + ?Sized>(cfg: ClientConfig, rng: &mut R) -> Self {
        Self {
            cfg,
            buffer: SendBuffer::default(),
            loops: LoopTable::new(rng, DEFAULT_LOOP_TABLE_CAP),
            received: Vec::new(),
            loop_rtts: Vec::new(),
            counters: ClientCounters::default(),
        }
    }

    pub fn public_key(&self) -> GroupElement {
        self.cfg.secret_key.public_key()
    }

    pub fn enqueue_message(&mut self, recipient: &str, message: Vec<u8>) -> Result<(), ClientError> {
        self.buffer.enqueue_message(recipient, message)
    }

    fn build<R: Rng + ?Sized>(
        &self,
        nodes: &[&NodeDescriptor],
        terminal_flags: HopFlags,
        recipient_id: &str,
        content: &[u8],
        rng: &mut R,
    ) -> Result<(SphinxPacket, Vec<f64>), ClientError> {
        let mut delays: Vec<f64> =
            (0..nodes.len() - 1).map(|_| sample_exp(rng, self.cfg.rates.mu)).collect();
        delays.push(0.0);
        let hops = route(nodes, &delays, terminal_flags);
        Ok((create_packet(&hops, recipient_id, content, rng)?, delays))
    }

    fn emission(
        nodes: &[&NodeDescriptor],
        packet: SphinxPacket,
        delays: Vec<f64>,
        kind: EmissionKind,
        next_tick: f64,
    ) -> Emission {
        Emission {
            packet,
            first_hop_addr: nodes[0].addr.clone(),
            kind,
            next_tick,
            path: nodes.iter().map(|n| n.id.clone()).collect(),
            delays,
        }
    }

    fn debug_flag(&self, flag: HopFlags) -> HopFlags {
        if self.cfg.debug_type_flags {
            flag
        } else {
            HopFlags::empty()
        }
    }

    fn drop_packet<R: Rng + ?Sized>(
        &mut self,
        topology: &Topology,
        rng: &mut R,
        next_tick: f64,
    ) -> Result<Emission, ClientError> {
        let target = topology.random_provider(rng).id.clone();
        let nodes = sample_forward_path(topology, &self.cfg.provider_id, &target, rng)?;
        let flags = HopFlags::DROP | self.debug_flag(HopFlags::DEBUG_COVER);
        let (packet, delays) = self.build(&nodes, flags, "", &[0u8; ITEM_LEN], rng)?;
        self.counters.sent_drop += 1;
        Ok(Self::emission(&nodes, packet, delays, EmissionKind::Drop, next_tick))
    }

    /// Pops the buffer head if any, otherwise emits drop cover.
    pub fn payload_tick<R: Rng + ?Sized>(
        &mut self,
        topology: &Topology,
        rng: &mut R,
        now: f64,
    ) -> Result<Emission, ClientError> {
        let next_tick = now + sample_exp(rng, self.cfg.rates.lambda_p);
        let Some((recipient, message)) = self.buffer.pop() else {
            return self.drop_packet(topology, rng, next_tick);
        };
        let dest = topology.client(&recipient).ok_or_else(|| ClientError::UnknownRecipient(recipient.clone()))?;
        let nodes = sample_forward_path(topology, &self.cfg.provider_id, &dest.provider_id, rng)?;
        let content = seal_item(&dest.pubkey, ContentKind::Payload, &message, rng)?;
        let (packet, delays) = self.build(&nodes, self.debug_flag(HopFlags::DEBUG_REAL), &recipient, &content, rng)?;
        self.counters.sent_real += 1;
        Ok(Self::emission(&nodes, packet, delays, EmissionKind::Real, next_tick))
    }

    /// Loop through own provider, one mix per layer, own provider, back to self.
    pub fn loop_tick<R: Rng + ?Sized>(
        &mut self,
        topology: &Topology,
        rng: &mut R,
        now: f64,
    ) -> Result<Emission, ClientError> {
        let next_tick = now + sample_exp(rng, self.cfg.rates.lambda_l);
        let nodes = sample_forward_path(topology, &self.cfg.provider_id, &self.cfg.provider_id, rng)?;
        let token = self.loops.issue(rng, now);
        let content = seal_item(&self.public_key(), ContentKind::Loop, &token, rng)?;
        let id = self.cfg.id.clone();
        let (packet, delays) = self.build(&nodes, self.debug_flag(HopFlags::DEBUG_COVER), &id, &content, rng)?;
        self.counters.sent_loop += 1;
        Ok(Self::emission(&nodes, packet, delays, EmissionKind::Loop, next_tick))
    }

    pub fn drop_tick<R: Rng + ?Sized>(
        &mut self,
        topology: &Topology,
        rng: &mut R,
        now: f64,
    ) -> Result<Emission, ClientError> {
        let next_tick = now + sample_exp(rng, self.cfg.rates.lambda_d);
        self.drop_packet(topology, rng, next_tick)
    }

    pub fn pull_request<R: Rng + ?Sized>(&self, rng: &mut R) -> PullRequest {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        PullRequest { client_id: self.cfg.id.clone(), token: self.cfg.token, nonce }
    }

    pub fn on_pull_item(&mut self, item: &[u8], now: f64) -> PullOutcome {
        match open_item(&self.cfg.secret_key, item) {
            Some((ContentKind::Payload, data)) => {
                self.counters.received += 1;
                self.received.push(data.clone());
                PullOutcome::Message(data)
            }
            Some((ContentKind::Loop, token)) => match self.loops.redeem(&token) {
                Some(sent) => {
                    self.counters.loops_returned += 1;
                    self.loop_rtts.push(now - sent);
                    PullOutcome::LoopReturned { rtt: now - sent }
                }
                None => {
                    self.counters.discarded_items += 1;
                    PullOutcome::Discarded
                }
            },
            None => {
                self.counters.discarded_items += 1;
                PullOutcome::Discarded
            }
        }
    }
}

/// Which of the three Poisson streams fires next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Payload,
    Loop,
    Drop,
}

/// Merges the payload, loop and drop streams into one ordered send path.
/// Firing times are drawn when the previous packet of the same stream is
/// built, so they do not depend on how long packet construction takes.
#[derive(Debug, Clone, Copy)]
pub struct TickSchedule {
    pub next_payload: f64,
    pub next_loop: f64,
    pub next_drop: f64,
}

impl TickSchedule {
    pub fn new<R: Rng + ?Sized>(rates: &Rates, rng: &mut R, start: f64) -> Self {
        Self {
            next_payload: start + sample_exp(rng, rates.lambda_p),
            next_loop: start + sample_exp(rng, rates.lambda_l),
            next_drop: start + sample_exp(rng, rates.lambda_d),
        }
    }

    pub fn next(&self) -> (f64, Stream) {
        let mut best = (self.next_payload, Stream::Payload);
        if self.next_loop < best.0 {
            best = (self.next_loop, Stream::Loop);
        }
        if self.next_drop < best.0 {
            best = (self.next_drop, Stream::Drop);
        }
        best
    }

    /// Builds the packet for the earliest stream at its scheduled time.
    pub fn fire<R: Rng + ?Sized>(
        &mut self,
        client: &mut Client,
        topology: &Topology,
        rng: &mut R,
    ) -> Result<(f64, Emission), ClientError> {
        let (t, stream) = self.next();
        let e = match stream {
            Stream::Payload => client.payload_tick(topology, rng, t)?,
            Stream::Loop => client.loop_tick(topology, rng, t)?,
            Stream::Drop => client.drop_tick(topology, rng, t)?,
        };
        match stream {
            Stream::Payload => self.next_payload = e.next_tick,
            Stream::Loop => self.next_loop = e.next_tick,
            Stream::Drop => self.next_drop = e.next_tick,
        }
        Ok((t, e))
    }
}
