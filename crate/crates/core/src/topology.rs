//! Static network directory: layered mixes, providers and registered clients.
//!
//! Directory files are TOML:
//!
//! ```toml
//! signature = ""            # optional, reserved for a detached signature
//!
//! [[mix]]
//! id = "mix-0-0"
//! layer = 0
//! addr = "127.0.0.1:9000"
//! pubkey = "<64 hex chars>"
//!
//! [[provider]]
//! id = "prov-0"
//! addr = "127.0.0.1:9100"
//! pubkey = "<64 hex chars>"
//!
//! [[client]]
//! id = "alice"
//! provider = "prov-0"
//! pubkey = "<64 hex chars>"
//! token = "<32 hex chars>"
//! ```

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

use crate::packet::{GroupElement, HopFlags, HopSpec, SecretKey, MAX_ADDR_LEN};

pub const TOKEN_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{location}: {message}")]
    InvariantViolation { location: String, message: String },
    #[error("topology too small: {0}")]
    TooSmall(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
}

fn violation(location: impl Into<String>, message: impl Into<String>) -> TopologyError {
    TopologyError::InvariantViolation { location: location.into(), message: message.into() }
}

/// A mix or provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeDescriptor {
    pub id: String,
    pub addr: String,
    pub pubkey: GroupElement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientDescriptor {
    pub id: String,
    pub provider_id: String,
    pub pubkey: GroupElement,
    pub token: [u8; TOKEN_LEN],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Mix { layer: usize },
    Provider,
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub layers: Vec<Vec<NodeDescriptor>>,
    pub providers: Vec<NodeDescriptor>,
    pub clients: Vec<ClientDescriptor>,
    pub signature: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDirectory {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    signature: Option<String>,
    #[serde(default)]
    mix: Vec<RawMix>,
    #[serde(default)]
    provider: Vec<RawNode>,
    #[serde(default)]
    client: Vec<RawClient>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMix {
    id: String,
    layer: usize,
    addr: String,
    pubkey: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    addr: String,
    pubkey: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClient {
    id: String,
    provider: String,
    pubkey: String,
    token: String,
}

fn parse_key(location: &str, hex_key: &str) -> Result<GroupElement, TopologyError> {
    GroupElement::from_hex(hex_key).map_err(|_| violation(location, "pubkey is not a valid group element"))
}

fn check_name(location: &str, what: &str, value: &str) -> Result<(), TopologyError> {
    if value.is_empty() || value.len() > MAX_ADDR_LEN {
        return Err(violation(location, format!("{what} must be 1..={MAX_ADDR_LEN} bytes")));
    }
    Ok(())
}

pub fn load_directory(path: impl AsRef<Path>) -> Result<Topology, TopologyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| TopologyError::Io { path: path.display().to_string(), source })?;
    Topology::from_toml_str(&text)
}

impl Topology {
    pub fn from_toml_str(text: &str) -> Result<Self, TopologyError> {
        let raw: RawDirectory = toml::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
        let mut ids = HashSet::new();
        let mut addrs = HashSet::new();

        let n_layers = raw.mix.iter().map(|m| m.layer + 1).max().unwrap_or(0);
        if n_layers == 0 {
            return Err(violation("mix", "at least one mix layer is required"));
        }
        let mut layers = vec![Vec::new(); n_layers];
        for (i, m) in raw.mix.iter().enumerate() {
            let loc = format!("mix[{i}] '{}'", m.id);
            check_name(&loc, "id", &m.id)?;
            check_name(&loc, "addr", &m.addr)?;
            if !ids.insert(m.id.clone()) {
                return Err(violation(loc, "duplicate id"));
            }
            if !addrs.insert(m.addr.clone()) {
                return Err(violation(loc, "duplicate addr"));
            }
            let pubkey = parse_key(&loc, &m.pubkey)?;
            layers[m.layer].push(NodeDescriptor { id: m.id.clone(), addr: m.addr.clone(), pubkey });
        }
        if let Some(empty) = layers.iter().position(Vec::is_empty) {
            return Err(violation(format!("layer {empty}"), "layer has no mixes"));
        }

        let mut providers = Vec::new();
        for (i, p) in raw.provider.iter().enumerate() {
            let loc = format!("provider[{i}] '{}'", p.id);
            check_name(&loc, "id", &p.id)?;
            check_name(&loc, "addr", &p.addr)?;
            if !ids.insert(p.id.clone()) {
                return Err(violation(loc, "duplicate id"));
            }
            if !addrs.insert(p.addr.clone()) {
                return Err(violation(loc, "duplicate addr"));
            }
            let pubkey = parse_key(&loc, &p.pubkey)?;
            providers.push(NodeDescriptor { id: p.id.clone(), addr: p.addr.clone(), pubkey });
        }
        if providers.is_empty() {
            return Err(violation("provider", "at least one provider is required"));
        }

        let mut clients = Vec::new();
        for (i, c) in raw.client.iter().enumerate() {
            let loc = format!("client[{i}] '{}'", c.id);
            check_name(&loc, "id", &c.id)?;
            if !ids.insert(c.id.clone()) {
                return Err(violation(loc, "duplicate id"));
            }
            if !providers.iter().any(|p| p.id == c.provider) {
                return Err(violation(loc, format!("provider '{}' does not exist", c.provider)));
            }
            let pubkey = parse_key(&loc, &c.pubkey)?;
            let token: [u8; TOKEN_LEN] = hex::decode(&c.token)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| violation(&loc, format!("token must be {TOKEN_LEN} hex-encoded bytes")))?;
            clients.push(ClientDescriptor { id: c.id.clone(), provider_id: c.provider.clone(), pubkey, token });
        }

        Ok(Self { layers, providers, clients, signature: raw.signature })
    }

    pub fn to_toml_string(&self) -> String {
        let mut raw = RawDirectory { signature: self.signature.clone(), mix: vec![], provider: vec![], client: vec![] };
        for (layer, nodes) in self.layers.iter().enumerate() {
            for n in nodes {
                raw.mix.push(RawMix { id: n.id.clone(), layer, addr: n.addr.clone(), pubkey: n.pubkey.to_hex() });
            }
        }
        for p in &self.providers {
            raw.provider.push(RawNode { id: p.id.clone(), addr: p.addr.clone(), pubkey: p.pubkey.to_hex() });
        }
        for c in &self.clients {
            raw.client.push(RawClient {
                id: c.id.clone(),
                provider: c.provider_id.clone(),
                pubkey: c.pubkey.to_hex(),
                token: hex::encode(c.token),
            });
        }
        toml::to_string(&raw).expect("directory serializes")
    }

    /// Number of mix layers `l`.
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_mixes(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn mixes(&self) -> impl Iterator<Item = (usize, &NodeDescriptor)> {
        self.layers.iter().enumerate().flat_map(|(l, nodes)| nodes.iter().map(move |n| (l, n)))
    }

    pub fn provider(&self, id: &str) -> Option<&NodeDescriptor> {
        self.providers.iter().find(|p| p.id == id)
    }

    pub fn client(&self, id: &str) -> Option<&ClientDescriptor> {
        self.clients.iter().find(|c| c.id == id)
    }

    /// Finds a mix or provider by id.
    pub fn node(&self, id: &str) -> Option<(NodeRole, &NodeDescriptor)> {
        self.mixes()
            .find(|(_, n)| n.id == id)
            .map(|(layer, n)| (NodeRole::Mix { layer }, n))
            .or_else(|| self.provider(id).map(|p| (NodeRole::Provider, p)))
    }

    pub fn node_by_addr(&self, addr: &str) -> Option<(NodeRole, &NodeDescriptor)> {
        self.mixes()
            .find(|(_, n)| n.addr == addr)
            .map(|(layer, n)| (NodeRole::Mix { layer }, n))
            .or_else(|| self.providers.iter().find(|p| p.addr == addr).map(|p| (NodeRole::Provider, p)))
    }

    /// Address lookup table for every mix and provider.
    pub fn address_book(&self) -> HashMap<String, String> {
        self.mixes()
            .map(|(_, n)| n)
            .chain(self.providers.iter())
            .map(|n| (n.id.clone(), n.addr.clone()))
            .collect()
    }

    pub fn random_provider<R: Rng + ?Sized>(&self, rng: &mut R) -> &NodeDescriptor {
        self.providers.choose(rng).expect("validated topology has providers")
    }

    /// One uniformly chosen mix per layer, in layer order.
    pub fn sample_mix_chain<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<&NodeDescriptor> {
        self.layers.iter().map(|layer| layer.choose(rng).expect("nonempty layer")).collect()
    }
}

/// `[sender_provider, one uniform mix per layer, recipient_provider]`.
pub fn sample_forward_path<'a, R: Rng + ?Sized>(
    topology: &'a Topology,
    sender_provider: &str,
    recipient_provider: &str,
    rng: &mut R,
) -> Result<Vec<&'a NodeDescriptor>, TopologyError> {
    let first = topology
        .provider(sender_provider)
        .ok_or_else(|| TopologyError::UnknownNode(sender_provider.to_owned()))?;
    let last = topology
        .provider(recipient_provider)
        .ok_or_else(|| TopologyError::UnknownNode(recipient_provider.to_owned()))?;
    let mut path = Vec::with_capacity(topology.n_layers() + 2);
    path.push(first);
    path.extend(topology.sample_mix_chain(rng));
    path.push(last);
    Ok(path)
}

/// Turns a node sequence into packet hops: hop `i` forwards to node `i + 1`
/// after `delays[i]`; the last node is terminal with `terminal_flags`.
pub fn route(
    nodes: &[&NodeDescriptor],
    delays: &[f64],
    terminal_flags: HopFlags,
) -> Vec<(GroupElement, HopSpec)> {
    debug_assert_eq!(nodes.len(), delays.len());
    let n = nodes.len();
    nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let hop = if i + 1 == n {
                HopSpec::terminal(delays[i], terminal_flags)
            } else {
                HopSpec::relay(nodes[i + 1].addr.clone(), delays[i])
            };
            (node.pubkey, hop)
        })
        .collect()
}

/// Node and client secret keys, kept apart from the public directory.
///
/// ```toml
/// [keys]
/// "mix-0-0" = "<64 hex chars>"
/// ```
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Secrets {
    pub keys: BTreeMap<String, String>,
}

impl Secrets {
    pub fn from_toml_str(text: &str) -> Result<Self, TopologyError> {
        toml::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| TopologyError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("secrets serialize")
    }

    pub fn get(&self, id: &str) -> Result<SecretKey, TopologyError> {
        let hex_key = self.keys.get(id).ok_or_else(|| TopologyError::UnknownNode(id.to_owned()))?;
        SecretKey::from_hex(hex_key).map_err(|_| violation(format!("secrets '{id}'"), "not a valid secret key"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    pub layers: usize,
    pub per_layer: usize,
    pub providers: usize,
    pub clients: usize,
}

/// Fresh keys for a network named `mix-{layer}-{k}`, `provider-{i}` and
/// `client-{i}`; client `i` is registered at provider `i mod providers`.
/// `addr` maps a node id to its listening address.
pub fn generate_network<R: Rng + ?Sized>(
    shape: NetworkShape,
    mut addr: impl FnMut(&str) -> String,
    rng: &mut R,
) -> (Topology, Secrets) {
    let mut secrets = Secrets::default();
    let mut node = |id: String, rng: &mut R, secrets: &mut Secrets| {
        let sk = SecretKey::generate(rng);
        secrets.keys.insert(id.clone(), sk.to_hex());
        NodeDescriptor { addr: addr(&id), id, pubkey: sk.public_key() }
    };
    let layers = (0..shape.layers)
        .map(|l| (0..shape.per_layer).map(|k| node(format!("mix-{l}-{k}"), rng, &mut secrets)).collect())
        .collect();
    let providers: Vec<NodeDescriptor> =
        (0..shape.providers).map(|i| node(format!("provider-{i}"), rng, &mut secrets)).collect();
    let clients = (0..shape.clients)
        .map(|i| {
            let id = format!("client-{i}");
            let sk = SecretKey::generate(rng);
            secrets.keys.insert(id.clone(), sk.to_hex());
            let mut token = [0u8; TOKEN_LEN];
            rng.fill_bytes(&mut token);
            ClientDescriptor { id, provider_id: providers[i % shape.providers].id.clone(), pubkey: sk.public_key(), token }
        })
        .collect();
    (Topology { layers, providers, clients, signature: None }, secrets)
}
