//! Continuous-time mix network with loop cover traffic.
//!
//! The crate holds the packet format, the node behaviours (mix, provider,
//! client) as sans-IO state machines, a UDP driver for loopback deployments,
//! closed-form anonymity calculators and a deterministic event simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod client;
mod crypto;
pub mod mixnode;
pub mod net;
pub mod packet;
pub mod provider;
pub mod rates;
pub mod simulator;
pub mod stats;
pub mod topology;
pub mod transport;
pub mod vectors;

pub use client::{Client, ClientConfig, Emission, EmissionKind, SendBuffer, TickSchedule};
pub use mixnode::{loop_health, Health, MixConfig, MixNode, MixPool};
pub use packet::{
    create_packet, packet_length_constants, process_packet, GroupElement, HopFlags, HopSpec, PacketError,
    ProcessResult, SecretKey, SphinxHeader, SphinxPacket,
};
pub use provider::{Provider, PullResponse};
pub use rates::{aggregate_output_rate, Rates};
pub use topology::{generate_network, load_directory, sample_forward_path, NetworkShape, Secrets, Topology};
