//! Continuous-time Poisson mixing.
//!
//! [`MixPool`] is the single mixing implementation: the live node stores
//! forwarded packets in it and the simulator stores simulated messages in it.
//! [`RelayCore`] adds packet processing, replay suppression and counters on
//! top, and is shared by mixes and providers.

use ordered_float::OrderedFloat;
use rand::Rng;
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use crate::crypto;
use crate::packet::{
    create_packet, process_packet, HopFlags, HopSpec, ProcessResult, ReplayTag, SecretKey, SphinxPacket,
};
use crate::rates::sample_exp;
use crate::topology::{route, NodeDescriptor, NodeRole, Topology, TopologyError};

pub const DEFAULT_REPLAY_HORIZON_S: f64 = 3600.0;
pub const DEFAULT_LOOP_TABLE_CAP: usize = 10_000;

struct Pending<T> {
    release: OrderedFloat<f64>,
    seq: u64,
    item: T,
}

impl<T> PartialEq for Pending<T> {
    fn eq(&self, other: &Self) -> bool {
        self.release == other.release && self.seq == other.seq
    }
}
impl<T> Eq for Pending<T> {}
impl<T> PartialOrd for Pending<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Pending<T> {
    // Reversed so the max-heap pops the earliest release, then the earliest arrival.
    fn cmp(&self, other: &Self) -> Ordering {
        other.release.cmp(&self.release).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Duplicate-detection set with time-based eviction.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    seen: HashMap<ReplayTag, f64>,
    order: VecDeque<(f64, ReplayTag)>,
    horizon_s: f64,
}

impl ReplayCache {
    pub fn new(horizon_s: f64) -> Self {
        Self { seen: HashMap::new(), order: VecDeque::new(), horizon_s }
    }

    /// Records `tag`; returns false if it was already present.
    pub fn insert(&mut self, tag: ReplayTag, now: f64) -> bool {
        self.evict(now);
        if self.seen.contains_key(&tag) {
            return false;
        }
        self.seen.insert(tag, now);
        self.order.push_back((now, tag));
        true
    }

    pub fn contains(&self, tag: &ReplayTag) -> bool {
        self.seen.contains_key(tag)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    fn evict(&mut self, now: f64) {
        while let Some(&(t, tag)) = self.order.front() {
            if now - t <= self.horizon_s {
                break;
            }
            self.order.pop_front();
            self.seen.remove(&tag);
        }
    }
}

/// Pending messages ordered by release time (FIFO among equal times).
pub struct MixPool<T> {
    pending: BinaryHeap<Pending<T>>,
    next_seq: u64,
    history: Option<Vec<(f64, usize)>>,
}

impl<T> Default for MixPool<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> MixPool<T> {
    pub fn new() -> Self {
        Self { pending: BinaryHeap::new(), next_seq: 0, history: None }
    }

    /// Records `(event_time, pool_size)` after every insert and release.
    pub fn with_history() -> Self {
        Self { history: Some(Vec::new()), ..Self::new() }
    }

    pub fn insert(&mut self, release_time: f64, item: T, now: f64) {
        self.pending.push(Pending { release: OrderedFloat(release_time), seq: self.next_seq, item });
        self.next_seq += 1;
        let len = self.pending.len();
        if let Some(h) = &mut self.history {
            h.push((now, len));
        }
    }

    /// Removes and returns the earliest entry whose release time is `<= now`.
    pub fn next_release(&mut self, now: f64) -> Option<(f64, T)> {
        if self.pending.peek()?.release.0 > now {
            return None;
        }
        let p = self.pending.pop()?;
        let len = self.pending.len();
        if let Some(h) = &mut self.history {
            h.push((p.release.0, len));
        }
        Some((p.release.0, p.item))
    }

    pub fn peek_release(&self) -> Option<f64> {
        self.pending.peek().map(|p| p.release.0)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Pending items in no particular order.
    pub fn items(&self) -> impl Iterator<Item = &T> {
        self.pending.iter().map(|p| &p.item)
    }

    pub fn size_history(&self) -> Option<&[(f64, usize)]> {
        self.history.as_deref()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NodeMetrics {
    pub received: u64,
    pub forwarded: u64,
    pub dropped_replay: u64,
    pub dropped_mac: u64,
    pub dropped_malformed: u64,
    pub dropped_overload: u64,
    pub loops_sent: u64,
    pub loops_returned: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Replay,
    Mac,
    Malformed,
    Overload,
}

/// A packet waiting in the pool together with its forwarding instruction.
#[derive(Debug, Clone)]
pub struct Forward {
    pub next: HopSpec,
    pub packet: SphinxPacket,
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Ingest {
    Scheduled { release_time: f64 },
    /// Deliver or Drop result for the node's own terminal handling.
    Terminal(ProcessResult),
    Rejected(Rejection),
}

/// Packet processing plus pool shared by mixes and providers.
pub struct RelayCore {
    secret_key: SecretKey,
    pub pool: MixPool<Forward>,
    pub replay: ReplayCache,
    pub metrics: NodeMetrics,
    /// The pool never holds more than this many packets.
    pub queue_high_watermark: usize,
}

impl RelayCore {
    pub fn new(secret_key: SecretKey, queue_high_watermark: usize, replay_horizon_s: f64) -> Self {
        Self {
            secret_key,
            pool: MixPool::new(),
            replay: ReplayCache::new(replay_horizon_s),
            metrics: NodeMetrics::default(),
            queue_high_watermark,
        }
    }

    pub fn ingest(&mut self, packet: &SphinxPacket, now: f64) -> Ingest {
        self.metrics.received += 1;
        let result = match process_packet(&self.secret_key, packet) {
            Ok(r) => r,
            Err(crate::packet::PacketError::MacMismatch) => {
                self.metrics.dropped_mac += 1;
                return Ingest::Rejected(Rejection::Mac);
            }
            Err(_) => {
                self.metrics.dropped_malformed += 1;
                return Ingest::Rejected(Rejection::Malformed);
            }
        };
        if self.replay.contains(&result.replay_tag()) {
            self.metrics.dropped_replay += 1;
            return Ingest::Rejected(Rejection::Replay);
        }
        match result {
            ProcessResult::Relay { next, packet, replay_tag } => {
                if self.pool.len() >= self.queue_high_watermark {
                    self.metrics.dropped_overload += 1;
                    return Ingest::Rejected(Rejection::Overload);
                }
                self.replay.insert(replay_tag, now);
                let release_time = now + next.delay_s;
                self.pool.insert(release_time, Forward { next, packet }, now);
                Ingest::Scheduled { release_time }
            }
            terminal => {
                self.replay.insert(terminal.replay_tag(), now);
                Ingest::Terminal(terminal)
            }
        }
    }

    pub fn next_release(&mut self, now: f64) -> Option<(f64, Forward)> {
        let out = self.pool.next_release(now)?;
        self.metrics.forwarded += 1;
        Some(out)
    }

    pub fn metrics_line(&self, now: f64) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            time: f64,
            pool_size: usize,
            #[serde(flatten)]
            counters: &'a NodeMetrics,
        }
        serde_json::to_string(&Line { time: now, pool_size: self.pool.len(), counters: &self.metrics })
            .expect("metrics serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Health {
    Healthy,
    UnderAttack,
}

/// `UnderAttack` iff `returned / sent < r`.
pub fn loop_health(window_loops_sent: u64, window_loops_returned: u64, r: f64) -> Health {
    if window_loops_sent == 0 {
        return Health::Healthy;
    }
    if (window_loops_returned as f64) < r * window_loops_sent as f64 {
        Health::UnderAttack
    } else {
        Health::Healthy
    }
}

/// Matches returning loop packets against the ones sent.
pub(crate) struct LoopTable {
    key: [u8; 32],
    outstanding: HashMap<[u8; 16], f64>,
    order: VecDeque<[u8; 16]>,
    cap: usize,
}

pub(crate) const LOOP_TOKEN_LEN: usize = 16 + 8 + 16;

impl LoopTable {
    pub(crate) fn new<R: Rng + ?Sized>(rng: &mut R, cap: usize) -> Self {
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        Self { key, outstanding: HashMap::new(), order: VecDeque::new(), cap }
    }

    /// `nonce || send_time || mac`, registered as outstanding.
    pub(crate) fn issue<R: Rng + ?Sized>(&mut self, rng: &mut R, send_time: f64) -> [u8; LOOP_TOKEN_LEN] {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let mut out = [0u8; LOOP_TOKEN_LEN];
        out[..16].copy_from_slice(&nonce);
        out[16..24].copy_from_slice(&send_time.to_be_bytes());
        let tag: [u8; 16] = crypto::mac(&self.key, &[&out[..24]]);
        out[24..].copy_from_slice(&tag);
        if self.order.len() >= self.cap {
            if let Some(old) = self.order.pop_front() {
                self.outstanding.remove(&old);
            }
        }
        self.outstanding.insert(nonce, send_time);
        self.order.push_back(nonce);
        out
    }

    /// Returns the original send time if `token` is one of ours and still outstanding.
    pub(crate) fn redeem(&mut self, token: &[u8]) -> Option<f64> {
        if token.len() < LOOP_TOKEN_LEN {
            return None;
        }
        let expected: [u8; 16] = crypto::mac(&self.key, &[&token[..24]]);
        if !crypto::ct_eq(&expected, &token[24..LOOP_TOKEN_LEN]) {
            return None;
        }
        let nonce: [u8; 16] = token[..16].try_into().unwrap();
        let sent = self.outstanding.remove(&nonce)?;
        if let Some(pos) = self.order.iter().position(|n| *n == nonce) {
            self.order.remove(pos);
        }
        Some(sent)
    }

    pub(crate) fn outstanding(&self) -> usize {
        self.outstanding.len()
    }
}

#[derive(Debug, Clone)]
pub struct MixConfig {
    pub id: String,
    pub secret_key: SecretKey,
    pub layer_index: usize,
    pub lambda_m: f64,
    pub mu: f64,
    pub queue_high_watermark: usize,
    pub loop_return_fraction_r: f64,
    pub replay_horizon_s: f64,
}

impl MixConfig {
    pub fn new(id: impl Into<String>, secret_key: SecretKey, layer_index: usize) -> Self {
        Self {
            id: id.into(),
            secret_key,
            layer_index,
            lambda_m: 1.0 / 60.0,
            mu: 2.0,
            queue_high_watermark: 100_000,
            loop_return_fraction_r: 0.8,
            replay_horizon_s: DEFAULT_REPLAY_HORIZON_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MixEvent {
    Scheduled { release_time: f64 },
    LoopReturned { latency: f64 },
    Discarded(Rejection),
}

#[derive(Debug, Clone)]
pub struct LoopEmission {
    pub send_time: f64,
    pub packet: SphinxPacket,
    pub first_hop_addr: String,
    /// Node ids traversed, starting with the first hop.
    pub path: Vec<String>,
}

pub struct MixNode {
    pub cfg: MixConfig,
    pub core: RelayCore,
    loops: LoopTable,
    loop_latencies: Vec<f64>,
    window_sent: u64,
    window_returned: u64,
}

impl MixNode {
    pub fn new<R: Rng + ?Sized>(cfg: MixConfig, rng: &mut R) -> Self {
        let core = RelayCore::new(cfg.secret_key.clone(), cfg.queue_high_watermark, cfg.replay_horizon_s);
        Self {
            cfg,
            core,
            loops: LoopTable::new(rng, DEFAULT_LOOP_TABLE_CAP),
            loop_latencies: Vec::new(),
            window_sent: 0,
            window_returned: 0,
        }
    }

    pub fn on_receive(&mut self, packet: &SphinxPacket, now: f64) -> MixEvent {
        match self.core.ingest(packet, now) {
            Ingest::Scheduled { release_time } => MixEvent::Scheduled { release_time },
            Ingest::Rejected(r) => MixEvent::Discarded(r),
            Ingest::Terminal(ProcessResult::Deliver { recipient_id, payload, .. })
                if recipient_id == self.cfg.id =>
            {
                match self.loops.redeem(&payload) {
                    Some(sent) => {
                        self.core.metrics.loops_returned += 1;
                        self.window_returned += 1;
                        self.loop_latencies.push(now - sent);
                        MixEvent::LoopReturned { latency: now - sent }
                    }
                    None => {
                        self.core.metrics.dropped_malformed += 1;
                        MixEvent::Discarded(Rejection::Malformed)
                    }
                }
            }
            Ingest::Terminal(_) => {
                self.core.metrics.dropped_malformed += 1;
                MixEvent::Discarded(Rejection::Malformed)
            }
        }
    }

    pub fn next_release(&mut self, now: f64) -> Option<(f64, Forward)> {
        self.core.next_release(now)
    }

    pub fn pool_size(&self) -> usize {
        self.core.pool.len()
    }

    /// Builds the next loop packet. `None` when `lambda_m` is zero.
    ///
    /// The loop continues through the remaining layers, visits one uniformly
    /// chosen provider, re-enters at layer 0 and ends at this mix.
    pub fn generate_mix_loop<R: Rng + ?Sized>(
        &mut self,
        topology: &Topology,
        rng: &mut R,
        now: f64,
    ) -> Result<Option<LoopEmission>, TopologyError> {
        if self.cfg.lambda_m <= 0.0 {
            return Ok(None);
        }
        let me = match topology.node(&self.cfg.id) {
            Some((NodeRole::Mix { layer }, node)) if layer == self.cfg.layer_index => node.clone(),
            _ => return Err(TopologyError::UnknownNode(self.cfg.id.clone())),
        };
        let l = topology.n_layers();
        if topology.providers.is_empty() || l + 1 > crate::packet::MAX_HOPS {
            return Err(TopologyError::TooSmall(format!("{l} layers cannot host a mix loop")));
        }
        let chain = topology.sample_mix_chain(rng);
        let j = self.cfg.layer_index;
        let mut nodes: Vec<&NodeDescriptor> = chain[j + 1..].to_vec();
        nodes.push(topology.random_provider(rng));
        nodes.extend_from_slice(&chain[..j]);
        nodes.push(&me);
        let mut delays: Vec<f64> = (0..nodes.len() - 1).map(|_| sample_exp(rng, self.cfg.mu)).collect();
        delays.push(0.0);

        let send_time = now + sample_exp(rng, self.cfg.lambda_m);
        let token = self.loops.issue(rng, send_time);
        let hops = route(&nodes, &delays, HopFlags::empty());
        let packet = create_packet(&hops, &me.id, &token, rng).expect("loop path within limits");
        self.core.metrics.loops_sent += 1;
        self.window_sent += 1;
        Ok(Some(LoopEmission {
            send_time,
            packet,
            first_hop_addr: nodes[0].addr.clone(),
            path: nodes.iter().map(|n| n.id.clone()).collect(),
        }))
    }

    /// Health over the loops sent and returned since the previous call.
    pub fn close_health_window(&mut self) -> Health {
        let h = loop_health(self.window_sent, self.window_returned, self.cfg.loop_return_fraction_r);
        if h == Health::UnderAttack {
            log::warn!(
                "{}: only {}/{} loops returned in window",
                self.cfg.id,
                self.window_returned,
                self.window_sent
            );
        }
        self.window_sent = 0;
        self.window_returned = 0;
        h
    }

    pub fn loop_latencies(&self) -> &[f64] {
        &self.loop_latencies
    }

    pub fn outstanding_loops(&self) -> usize {
        self.loops.outstanding()
    }

    pub fn metrics_line(&self, now: f64) -> String {
        self.core.metrics_line(now)
    }
}
