mod common;

use loopmix::mixnode::MixEvent;
use loopmix::packet::{process_packet, ProcessResult};
use loopmix::stats;
use loopmix::{MixConfig, MixNode, NetworkShape};

const SHAPE: NetworkShape = NetworkShape { layers: 3, per_layer: 2, providers: 3, clients: 2 };

fn mix(topology: &loopmix::Topology, secrets: &loopmix::Secrets, layer: usize, lambda_m: f64) -> MixNode {
    let id = topology.layers[layer][0].id.clone();
    let mut cfg = MixConfig::new(id.clone(), secrets.get(&id).unwrap(), layer);
    cfg.lambda_m = lambda_m;
    cfg.mu = 3.0;
    MixNode::new(cfg, &mut common::rng(50 + layer as u64))
}

#[test]
fn loop_send_times_are_poisson() {
    let (topology, secrets) = common::network(SHAPE, 51);
    let mut node = mix(&topology, &secrets, 1, 2.5);
    let mut rng = common::rng(52);
    let mut now = 0.0;
    let mut gaps = Vec::new();
    for _ in 0..2000 {
        let e = node.generate_mix_loop(&topology, &mut rng, now).unwrap().unwrap();
        gaps.push(e.send_time - now);
        now = e.send_time;
    }
    let ks = stats::ks_one_sample(&gaps, stats::exp_cdf(2.5));
    assert!(!ks.rejected_at(0.01), "p={}", ks.p_value);
}

#[test]
fn loops_traverse_every_layer_and_return() {
    let (topology, secrets) = common::network(SHAPE, 53);
    for layer in 0..SHAPE.layers {
        let mut node = mix(&topology, &secrets, layer, 1.0);
        let mut rng = common::rng(54);
        let e = node.generate_mix_loop(&topology, &mut rng, 0.0).unwrap().unwrap();
        let me = node.cfg.id.clone();
        assert_eq!(e.path.len(), SHAPE.layers + 1);
        assert_eq!(e.path.last(), Some(&me));
        // After this mix: later layers, a provider, then earlier layers.
        let expect_layers: Vec<usize> = (layer + 1..SHAPE.layers).chain(0..layer).collect();
        let mixes_on_path: Vec<&String> = e.path[..e.path.len() - 1].iter().filter(|id| id.starts_with("mix-")).collect();
        assert_eq!(mixes_on_path.len(), expect_layers.len());
        for (id, l) in mixes_on_path.iter().zip(&expect_layers) {
            assert!(topology.layers[*l].iter().any(|n| &&n.id == id), "{id} not in layer {l}");
        }
        assert_eq!(e.path.iter().filter(|id| topology.provider(id).is_some()).count(), 1);

        let mut packet = e.packet;
        for id in &e.path[..e.path.len() - 1] {
            match process_packet(&secrets.get(id).unwrap(), &packet).unwrap() {
                ProcessResult::Relay { packet: p, .. } => packet = p,
                other => panic!("{id}: unexpected {other:?}"),
            }
        }
        match node.on_receive(&packet, e.send_time + 2.0) {
            MixEvent::LoopReturned { latency } => assert!((latency - 2.0).abs() < 1e-9),
            other => panic!("layer {layer}: expected a returned loop, got {other:?}"),
        }
        assert_eq!(node.outstanding_loops(), 0);
        assert_eq!(node.core.metrics.loops_returned, 1);
    }
}

#[test]
fn no_loops_when_the_rate_is_zero() {
    let (topology, secrets) = common::network(SHAPE, 55);
    let mut node = mix(&topology, &secrets, 0, 0.0);
    assert!(node.generate_mix_loop(&topology, &mut common::rng(56), 0.0).unwrap().is_none());
}

#[test]
fn replayed_packets_are_dropped_once_seen() {
    let (topology, secrets) = common::network(SHAPE, 57);
    // A layer-0 loop enters layer 1 first.
    let mut origin = mix(&topology, &secrets, 0, 1.0);
    let e = origin.generate_mix_loop(&topology, &mut common::rng(58), 0.0).unwrap().unwrap();
    let first = e.path[0].clone();
    let cfg = MixConfig::new(first.clone(), secrets.get(&first).unwrap(), 1);
    let mut node = MixNode::new(cfg, &mut common::rng(59));
    assert!(matches!(node.on_receive(&e.packet, 0.0), MixEvent::Scheduled { .. }));
    assert_eq!(node.on_receive(&e.packet, 0.5), MixEvent::Discarded(loopmix::mixnode::Rejection::Replay));
    assert_eq!(node.core.metrics.dropped_replay, 1);
    assert_eq!(node.pool_size(), 1);
}
