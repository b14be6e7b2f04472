//! Packet test vectors: node keys, route, message, the serialized packet,
//! the group element each hop sees and the delivered payload.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::packet::{
    create_packet_with_trace, process_packet, HopFlags, HopSpec, ProcessResult, SecretKey, SphinxPacket,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorHop {
    pub secret_key: String,
    /// Empty on the terminal hop.
    pub next_addr: String,
    pub delay_s: f64,
    pub flags: u8,
    /// Hex group element this hop receives in the header.
    pub alpha: String,
    pub replay_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketVector {
    pub name: String,
    pub seed: u64,
    pub recipient: String,
    pub message: String,
    pub hop: Vec<VectorHop>,
    pub packet: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFile {
    pub group: String,
    pub packet_len: usize,
    pub vector: Vec<PacketVector>,
}

/// Builds one vector. Node keys come first from the seeded stream, then
/// the packet's own randomness.
pub fn make_vector(name: &str, seed: u64, hops: usize, flags: HopFlags, recipient: &str, message: &[u8]) -> PacketVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<SecretKey> = (0..hops).map(|_| SecretKey::generate(&mut rng)).collect();
    let specs: Vec<HopSpec> = (0..hops)
        .map(|i| {
            if i + 1 == hops {
                HopSpec::terminal(0.0, flags)
            } else {
                HopSpec::relay(format!("10.0.0.{}:{}", i + 2, 9000 + i), 0.125 * (i + 1) as f64)
            }
        })
        .collect();
    let path: Vec<_> = keys.iter().zip(&specs).map(|(k, s)| (k.public_key(), s.clone())).collect();
    let (packet, trace) = create_packet_with_trace(&path, recipient, message, &mut rng).expect("valid vector path");
    let hop = keys
        .iter()
        .zip(&specs)
        .zip(trace.alphas.iter().zip(&trace.replay_tags))
        .enumerate()
        .map(|(i, ((k, s), (a, t)))| VectorHop {
            secret_key: k.to_hex(),
            next_addr: s.next_addr.clone(),
            delay_s: s.delay_s,
            flags: if i + 1 == hops { (s.flags | HopFlags::FINAL).bits() } else { s.flags.bits() },
            alpha: a.to_hex(),
            replay_tag: hex::encode(t.0),
        })
        .collect();
    PacketVector {
        name: name.to_owned(),
        seed,
        recipient: recipient.to_owned(),
        message: hex::encode(message),
        hop,
        packet: hex::encode(packet.to_bytes()),
    }
}

pub fn default_vectors() -> VectorFile {
    VectorFile {
        group: "ristretto255".into(),
        packet_len: crate::packet::PACKET_LEN,
        vector: vec![
            make_vector("one-hop", 1, 1, HopFlags::empty(), "alice", b"hi"),
            make_vector("three-hop", 2, 3, HopFlags::empty(), "bob", b"three hops to bob"),
            make_vector("five-hop", 3, 5, HopFlags::empty(), "carol", &[0x5a; 200]),
            make_vector("drop", 4, 5, HopFlags::DROP, "", b""),
        ],
    }
}

impl VectorFile {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("vectors serialize")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// Processes each vector's packet hop by hop and checks every recorded
/// value; then rebuilds it from its seed and compares bytes.
pub fn verify_vector(v: &PacketVector) -> Result<(), String> {
    let bytes = hex::decode(&v.packet).map_err(|e| e.to_string())?;
    let mut packet = SphinxPacket::from_bytes(&bytes).map_err(|e| e.to_string())?;
    let n = v.hop.len();
    for (i, h) in v.hop.iter().enumerate() {
        let err = |m: &str| format!("{}: hop {i}: {m}", v.name);
        if packet.header.alpha.to_hex() != h.alpha {
            return Err(err("alpha differs"));
        }
        let sk = SecretKey::from_hex(&h.secret_key).map_err(|e| err(&e.to_string()))?;
        let result = process_packet(&sk, &packet).map_err(|e| err(&e.to_string()))?;
        if hex::encode(result.replay_tag().0) != h.replay_tag {
            return Err(err("replay tag differs"));
        }
        match result {
            ProcessResult::Relay { next, packet: p, .. } if i + 1 < n => {
                if next.next_addr != h.next_addr || next.delay_s != h.delay_s || next.flags.bits() != h.flags {
                    return Err(err("routing block differs"));
                }
                packet = p;
            }
            ProcessResult::Deliver { recipient_id, payload, .. } if i + 1 == n => {
                if recipient_id != v.recipient || hex::encode(payload) != v.message {
                    return Err(err("delivered message differs"));
                }
            }
            ProcessResult::Drop { .. } if i + 1 == n && h.flags & HopFlags::DROP.bits() != 0 => {}
            other => return Err(err(&format!("unexpected result {other:?}"))),
        }
    }
    let first = v.hop.first().ok_or("vector without hops")?;
    let flags = HopFlags::from_bits_truncate(v.hop[n - 1].flags) - HopFlags::FINAL;
    let message = hex::decode(&v.message).map_err(|e| e.to_string())?;
    let rebuilt = make_vector(&v.name, v.seed, n, flags, &v.recipient, &message);
    if rebuilt.packet != v.packet || rebuilt.hop[0].secret_key != first.secret_key {
        return Err(format!("{}: rebuilding from seed gives different bytes", v.name));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vectors_verify() {
        let file = default_vectors();
        let back = VectorFile::from_toml_str(&file.to_toml_string()).unwrap();
        assert_eq!(back, file);
        for v in &back.vector {
            verify_vector(v).unwrap();
        }
    }

    #[test]
    fn tampering_is_caught() {
        let mut v = default_vectors().vector.remove(1);
        v.message = hex::encode(b"something else");
        assert!(verify_vector(&v).is_err());
    }
}
