//! Providers relay like mixes and additionally terminate paths: they store
//! delivered messages in per-client inboxes, sink drop cover, and answer pull
//! requests with a fixed number of equal-length items.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use std::collections::{HashMap, VecDeque};
use thiserror::Error;

use crate::crypto;
use crate::mixnode::{Forward, Ingest, Rejection, RelayCore, DEFAULT_REPLAY_HORIZON_S};
use crate::packet::{ProcessResult, SecretKey, SphinxPacket, GROUP_ELEMENT_LEN, MAX_MESSAGE_LEN};
use crate::topology::{Topology, TOKEN_LEN};

/// Every stored message and every pull item is exactly this long.
pub const ITEM_LEN: usize = MAX_MESSAGE_LEN;
pub const DEFAULT_PULL_COUNT: usize = 5;
pub const DEFAULT_INBOX_CAPACITY: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("unknown client '{0}'")]
    UnknownClient(String),
    #[error("bad pull token for '{0}'")]
    Unauthorized(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ItemKind {
    Real,
    Dummy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PullItem {
    /// Provider-side bookkeeping only; never put on the wire.
    pub kind: ItemKind,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct PullResponse {
    pub items: Vec<PullItem>,
}

#[derive(Debug, Clone)]
pub struct Inbox {
    pub client_id: String,
    token: [u8; TOKEN_LEN],
    queue: VecDeque<(f64, Vec<u8>)>,
    pub capacity: usize,
}

impl Inbox {
    pub fn new(client_id: impl Into<String>, token: [u8; TOKEN_LEN], capacity: usize) -> Self {
        Self { client_id: client_id.into(), token, queue: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProviderCounters {
    pub delivered: u64,
    pub drop_sunk: u64,
    pub unknown_client: u64,
    pub inbox_evicted: u64,
    pub pulls: u64,
    pub bad_pulls: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderEvent {
    Scheduled { release_time: f64 },
    Stored { client_id: String },
    DropSunk,
    Discarded(Rejection),
    UnknownClient(String),
}

pub struct Provider {
    pub id: String,
    pub core: RelayCore,
    pub inboxes: HashMap<String, Inbox>,
    pub counters: ProviderCounters,
    pub pull_count: usize,
}

impl Provider {
    pub fn new(id: impl Into<String>, secret_key: SecretKey) -> Self {
        Self {
            id: id.into(),
            core: RelayCore::new(secret_key, 100_000, DEFAULT_REPLAY_HORIZON_S),
            inboxes: HashMap::new(),
            counters: ProviderCounters::default(),
            pull_count: DEFAULT_PULL_COUNT,
        }
    }

    /// Registers every client the directory assigns to this provider.
    pub fn register_from(&mut self, topology: &Topology) {
        let id = self.id.clone();
        for c in topology.clients.iter().filter(|c| c.provider_id == id) {
            self.register_client(&c.id, c.token);
        }
    }

    pub fn register_client(&mut self, client_id: &str, token: [u8; TOKEN_LEN]) {
        self.inboxes
            .entry(client_id.to_owned())
            .or_insert_with(|| Inbox::new(client_id, token, DEFAULT_INBOX_CAPACITY));
    }

    pub fn on_receive(&mut self, packet: &SphinxPacket, now: f64) -> ProviderEvent {
        match self.core.ingest(packet, now) {
            Ingest::Scheduled { release_time } => ProviderEvent::Scheduled { release_time },
            Ingest::Rejected(r) => ProviderEvent::Discarded(r),
            Ingest::Terminal(result) => self.on_packet_result(result, now),
        }
    }

    pub fn next_release(&mut self, now: f64) -> Option<(f64, Forward)> {
        self.core.next_release(now)
    }

    pub fn on_packet_result(&mut self, result: ProcessResult, now: f64) -> ProviderEvent {
        match result {
            ProcessResult::Drop { .. } => {
                self.counters.drop_sunk += 1;
                ProviderEvent::DropSunk
            }
            ProcessResult::Deliver { recipient_id, mut payload, .. } => {
                let Some(inbox) = self.inboxes.get_mut(&recipient_id) else {
                    self.counters.unknown_client += 1;
                    return ProviderEvent::UnknownClient(recipient_id);
                };
                payload.resize(ITEM_LEN, 0);
                if inbox.queue.len() >= inbox.capacity {
                    inbox.queue.pop_front();
                    self.counters.inbox_evicted += 1;
                }
                inbox.queue.push_back((now, payload));
                self.counters.delivered += 1;
                ProviderEvent::Stored { client_id: recipient_id }
            }
            ProcessResult::Relay { .. } => ProviderEvent::Discarded(Rejection::Malformed),
        }
    }

    /// Pull with token check, using the configured item count.
    pub fn handle_authenticated_pull<R: Rng + ?Sized>(
        &mut self,
        client_id: &str,
        token: &[u8; TOKEN_LEN],
        rng: &mut R,
    ) -> Result<PullResponse, ProviderError> {
        let inbox =
            self.inboxes.get(client_id).ok_or_else(|| ProviderError::UnknownClient(client_id.to_owned()))?;
        if !crypto::ct_eq(&inbox.token, token) {
            self.counters.bad_pulls += 1;
            return Err(ProviderError::Unauthorized(client_id.to_owned()));
        }
        let c = self.pull_count;
        self.handle_pull(client_id, c, rng)
    }

    /// Pops up to `c` stored messages, pads with dummies to exactly `c` items
    /// and shuffles them.
    pub fn handle_pull<R: Rng + ?Sized>(
        &mut self,
        client_id: &str,
        c: usize,
        rng: &mut R,
    ) -> Result<PullResponse, ProviderError> {
        let inbox =
            self.inboxes.get_mut(client_id).ok_or_else(|| ProviderError::UnknownClient(client_id.to_owned()))?;
        self.counters.pulls += 1;
        let real = c.min(inbox.queue.len());
        let mut items: Vec<PullItem> = inbox
            .queue
            .drain(..real)
            .map(|(_, payload)| PullItem { kind: ItemKind::Real, payload })
            .collect();
        items.extend((real..c).map(|_| PullItem { kind: ItemKind::Dummy, payload: dummy_payload(rng) }));
        items.shuffle(rng);
        Ok(PullResponse { items })
    }

    pub fn inbox_len(&self, client_id: &str) -> Option<usize> {
        self.inboxes.get(client_id).map(Inbox::len)
    }

    pub fn metrics_line(&self, now: f64) -> String {
        let mut v: serde_json::Value = serde_json::from_str(&self.core.metrics_line(now)).expect("json");
        let extra = serde_json::to_value(self.counters).expect("json");
        if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
            obj.extend(more);
        }
        v.to_string()
    }
}

/// Shaped like an end-to-end ciphertext: a valid group element encoding
/// followed by random bytes. Uniformly random bytes would be told apart by
/// anyone trying to decode the leading element.
fn dummy_payload<R: Rng + ?Sized>(rng: &mut R) -> Vec<u8> {
    let mut out = vec![0u8; ITEM_LEN];
    let point = SecretKey::generate(rng).public_key();
    out[..GROUP_ELEMENT_LEN].copy_from_slice(point.as_bytes());
    rng.fill_bytes(&mut out[GROUP_ELEMENT_LEN..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{HopSpec, ReplayTag};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn deliver(to: &str, body: &[u8]) -> ProcessResult {
        ProcessResult::Deliver {
            recipient_id: to.into(),
            payload: body.to_vec(),
            hop: HopSpec::terminal(0.0, Default::default()),
            replay_tag: ReplayTag([0; 16]),
        }
    }

    fn provider(rng: &mut ChaCha8Rng) -> Provider {
        let mut p = Provider::new("p", SecretKey::generate(rng));
        p.register_client("bob", [7; TOKEN_LEN]);
        p
    }

    #[test]
    fn deliver_drop_unknown() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = provider(&mut rng);
        p.on_packet_result(deliver("bob", b"m"), 0.0);
        assert_eq!(p.inbox_len("bob"), Some(1));
        p.on_packet_result(ProcessResult::Drop { replay_tag: ReplayTag([1; 16]) }, 0.0);
        assert_eq!(p.inbox_len("bob"), Some(1));
        assert_eq!(p.counters.drop_sunk, 1);
        assert_eq!(p.on_packet_result(deliver("eve", b"m"), 0.0), ProviderEvent::UnknownClient("eve".into()));
        assert_eq!(p.inbox_len("bob"), Some(1));
    }

    #[test]
    fn pull_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (stored, real, left) in [(0, 0, 0), (2, 2, 0), (5, 5, 0), (7, 5, 2)] {
            let mut p = provider(&mut rng);
            for i in 0..stored {
                p.on_packet_result(deliver("bob", &[i as u8; 3]), i as f64);
            }
            let resp = p.handle_pull("bob", 5, &mut rng).unwrap();
            assert_eq!(resp.items.len(), 5);
            assert!(resp.items.iter().all(|i| i.payload.len() == ITEM_LEN));
            assert_eq!(resp.items.iter().filter(|i| i.kind == ItemKind::Real).count(), real);
            assert_eq!(p.inbox_len("bob"), Some(left));
        }
    }

    #[test]
    fn inbox_is_fifo_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = provider(&mut rng);
        p.inboxes.get_mut("bob").unwrap().capacity = 3;
        for i in 0..5u8 {
            p.on_packet_result(deliver("bob", &[i]), 0.0);
        }
        assert_eq!(p.counters.inbox_evicted, 2);
        let firsts: Vec<u8> = p.inboxes["bob"].queue.iter().map(|(_, m)| m[0]).collect();
        assert_eq!(firsts, vec![2, 3, 4]);
    }

    #[test]
    fn pull_auth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = provider(&mut rng);
        assert!(p.handle_authenticated_pull("bob", &[7; TOKEN_LEN], &mut rng).is_ok());
        assert_eq!(
            p.handle_authenticated_pull("bob", &[8; TOKEN_LEN], &mut rng).unwrap_err(),
            ProviderError::Unauthorized("bob".into())
        );
        assert!(matches!(p.handle_pull("zed", 5, &mut rng), Err(ProviderError::UnknownClient(_))));
    }
}
