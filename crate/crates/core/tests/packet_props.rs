use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use loopmix::packet::{
    create_packet, process_packet, HopFlags, HopSpec, PacketError, ProcessResult, SecretKey, SphinxPacket,
    HEADER_LEN, MAX_ADDR_LEN, MAX_HOPS, MAX_MESSAGE_LEN, PACKET_LEN, PAYLOAD_LEN,
};

fn route(seed: u64, hops: usize, flags: HopFlags) -> (Vec<SecretKey>, Vec<HopSpec>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = (0..hops).map(|_| SecretKey::generate(&mut rng)).collect();
    let specs = (0..hops)
        .map(|i| {
            if i + 1 == hops {
                HopSpec::terminal(0.0, flags)
            } else {
                HopSpec::relay(format!("node-{i}.example:{}", 9000 + i), 0.5 * i as f64)
            }
        })
        .collect();
    (keys, specs)
}

fn build(seed: u64, keys: &[SecretKey], specs: &[HopSpec], recipient: &str, msg: &[u8]) -> SphinxPacket {
    let path: Vec<_> = keys.iter().zip(specs).map(|(k, s)| (k.public_key(), s.clone())).collect();
    create_packet(&path, recipient, msg, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xa5)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip(
        seed in any::<u64>(),
        hops in 1..=MAX_HOPS,
        msg in proptest::collection::vec(any::<u8>(), 0..=MAX_MESSAGE_LEN),
        recipient in "[a-z0-9-]{1,31}",
    ) {
        let (keys, specs) = route(seed, hops, HopFlags::empty());
        let mut packet = build(seed, &keys, &specs, &recipient, &msg);
        prop_assert_eq!(packet.to_bytes().len(), PACKET_LEN);
        for (i, (k, spec)) in keys.iter().zip(&specs).enumerate() {
            match process_packet(k, &packet).unwrap() {
                ProcessResult::Relay { next, packet: p, .. } => {
                    prop_assert!(i + 1 < hops);
                    prop_assert_eq!(&next, spec);
                    prop_assert_eq!(p.to_bytes().len(), PACKET_LEN);
                    packet = p;
                }
                ProcessResult::Deliver { recipient_id, payload, .. } => {
                    prop_assert_eq!(i + 1, hops);
                    prop_assert_eq!(&recipient_id, &recipient);
                    prop_assert_eq!(&payload, &msg);
                }
                ProcessResult::Drop { .. } => prop_assert!(false, "unexpected drop"),
            }
        }
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>(), hops in 1..=MAX_HOPS) {
        let (keys, specs) = route(seed, hops, HopFlags::empty());
        let packet = build(seed, &keys, &specs, "r", b"m");
        let bytes = packet.to_bytes();
        prop_assert_eq!(SphinxPacket::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn any_flipped_header_bit_is_rejected(seed in any::<u64>(), byte in 32..HEADER_LEN, bit in 0u8..8) {
        let (keys, specs) = route(seed, 3, HopFlags::empty());
        let mut bytes = build(seed, &keys, &specs, "r", b"m").to_bytes();
        bytes[byte] ^= 1 << bit;
        let tampered = SphinxPacket::from_bytes(&bytes).unwrap();
        prop_assert_eq!(process_packet(&keys[0], &tampered), Err(PacketError::MacMismatch));
    }

    #[test]
    fn flipped_payload_bit_fails_at_delivery(seed in any::<u64>(), byte in HEADER_LEN..PACKET_LEN, bit in 0u8..8) {
        let (keys, specs) = route(seed, 2, HopFlags::empty());
        let mut bytes = build(seed, &keys, &specs, "r", b"payload").to_bytes();
        bytes[byte] ^= 1 << bit;
        let packet = SphinxPacket::from_bytes(&bytes).unwrap();
        let ProcessResult::Relay { packet: next, .. } = process_packet(&keys[0], &packet).unwrap() else {
            panic!("first hop relays");
        };
        prop_assert_eq!(process_packet(&keys[1], &next), Err(PacketError::MacMismatch));
    }
}

#[test]
fn length_constants() {
    let c = loopmix::packet::packet_length_constants();
    assert_eq!((c.header_len, c.payload_len, c.max_hops), (333, 1024, 5));
    assert_eq!(PACKET_LEN, HEADER_LEN + PAYLOAD_LEN);
    assert_eq!(loopmix::transport::MAX_DATAGRAM_LEN, 1361);
}

#[test]
fn limits_are_enforced() {
    let (keys, specs) = route(1, MAX_HOPS, HopFlags::empty());
    let path: Vec<_> = keys.iter().zip(&specs).map(|(k, s)| (k.public_key(), s.clone())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let too_big = vec![0u8; MAX_MESSAGE_LEN + 1];
    assert!(matches!(create_packet(&path, "r", &too_big, &mut rng), Err(PacketError::MessageTooLarge(_))));
    let mut long = path.clone();
    long.push(path[0].clone());
    assert!(matches!(create_packet(&long, "r", b"", &mut rng), Err(PacketError::PathTooLong(6))));
    assert!(matches!(create_packet(&[], "r", b"", &mut rng), Err(PacketError::PathTooLong(0))));
    let long_name = "x".repeat(MAX_ADDR_LEN + 1);
    assert!(create_packet(&path, &long_name, b"", &mut rng).is_err());
}

#[test]
fn wrong_key_is_a_mac_failure() {
    let (keys, specs) = route(3, 2, HopFlags::empty());
    let packet = build(3, &keys, &specs, "r", b"m");
    assert_eq!(process_packet(&keys[1], &packet), Err(PacketError::MacMismatch));
}

#[test]
fn drop_flag_reaches_the_terminal_hop() {
    let (keys, specs) = route(4, 3, HopFlags::DROP);
    let mut packet = build(4, &keys, &specs, "", b"");
    for k in &keys[..2] {
        let ProcessResult::Relay { packet: p, .. } = process_packet(k, &packet).unwrap() else { panic!() };
        packet = p;
    }
    assert!(matches!(process_packet(&keys[2], &packet).unwrap(), ProcessResult::Drop { .. }));
}

#[test]
fn replay_tag_is_deterministic_per_hop() {
    let (keys, specs) = route(5, 2, HopFlags::empty());
    let packet = build(5, &keys, &specs, "r", b"m");
    let a = process_packet(&keys[0], &packet).unwrap().replay_tag();
    let b = process_packet(&keys[0], &packet).unwrap().replay_tag();
    assert_eq!(a, b);
    let other = build(6, &keys, &specs, "r", b"m");
    assert_ne!(process_packet(&keys[0], &other).unwrap().replay_tag(), a);
}
