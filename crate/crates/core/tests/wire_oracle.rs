//! Checksums against an independent ones-complement oracle, plus codec
//! round-trip properties.

use std::net::Ipv4Addr;

use mots_core::wire::{self, decode, encode, MacAddr, SegmentSpec, TcpFlags, WirePacket};
use proptest::prelude::*;

/// Ones-complement sum via arithmetic modulo 0xffff instead of carry folding.
/// A nonzero multiple of 0xffff is represented as 0xffff (negative zero).
fn oracle_sum(data: &[u8]) -> u16 {
    let mut total: u64 = 0;
    let mut i = 0;
    while i < data.len() {
        let hi = data[i] as u64;
        let lo = if i + 1 < data.len() { data[i + 1] as u64 } else { 0 };
        total += hi * 256 + lo;
        i += 2;
    }
    if total == 0 {
        0
    } else {
        match total % 0xffff {
            0 => 0xffff,
            r => r as u16,
        }
    }
}

fn oracle_checksum(data: &[u8]) -> u16 {
    !oracle_sum(data)
}

fn oracle_tcp(src: Ipv4Addr, dst: Ipv4Addr, segment: &[u8]) -> u16 {
    let mut buf = Vec::new();
    buf.extend_from_slice(&src.octets());
    buf.extend_from_slice(&dst.octets());
    buf.push(0);
    buf.push(6);
    buf.extend_from_slice(&(segment.len() as u16).to_be_bytes());
    buf.extend_from_slice(segment);
    oracle_checksum(&buf)
}

#[test]
fn oracle_self_check() {
    // RFC 1071 worked example: words 0001 f203 f4f5 f6f7 sum to ddf2.
    assert_eq!(oracle_sum(&[0x00, 0x01, 0xf2, 0x03, 0xf4, 0xf5, 0xf6, 0xf7]), 0xddf2);
    assert_eq!(oracle_checksum(&[0u8; 20]), 0xffff);
}

#[test]
fn known_ipv4_header() {
    // Classic example header with checksum field zeroed; expected b861.
    let header = [
        0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8, 0x00, 0x01, 0xc0, 0xa8,
        0x00, 0xc7,
    ];
    assert_eq!(oracle_checksum(&header), 0xb861);
    assert_eq!(wire::ipv4_checksum(&header), 0xb861);
}

fn arb_spec() -> impl Strategy<Value = SegmentSpec> {
    (
        any::<[u8; 6]>(),
        any::<[u8; 6]>(),
        any::<u32>(),
        any::<u32>(),
        (any::<u16>(), any::<u16>()),
        (any::<u32>(), any::<u32>()),
        0u8..0x40,
        any::<u16>(),
        1u8..=255,
        any::<u16>(),
    )
        .prop_map(|(sm, dm, sip, dip, (sp, dp), (seq, ack), flags, id, ttl, win)| SegmentSpec {
            src_mac: MacAddr(sm),
            dst_mac: MacAddr(dm),
            src_ip: Ipv4Addr::from(sip),
            dst_ip: Ipv4Addr::from(dip),
            src_port: sp,
            dst_port: dp,
            seq,
            ack,
            flags: TcpFlags(flags),
            ip_id: id,
            ttl,
            window: win,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn packets_roundtrip_and_match_oracle(spec in arb_spec(), payload in proptest::collection::vec(any::<u8>(), 0..=wire::MSS)) {
        let packet = WirePacket::build(&spec, payload).unwrap();
        let bytes = encode(&packet).unwrap();
        prop_assert_eq!(bytes.len(), 54 + packet.payload.len());
        let decoded = decode(&bytes).unwrap();
        prop_assert!(decoded.ip_checksum_ok && decoded.tcp_checksum_ok);
        prop_assert_eq!(&decoded.packet, &packet);
        prop_assert_eq!(encode(&decoded.packet).unwrap(), bytes.clone());

        let mut ip = bytes[14..34].to_vec();
        ip[10] = 0;
        ip[11] = 0;
        prop_assert_eq!(packet.ip.checksum, oracle_checksum(&ip));
        prop_assert_eq!(wire::ipv4_checksum(&ip), oracle_checksum(&ip));
        // Verification residue over the filled-in header is zero.
        prop_assert_eq!(wire::ipv4_checksum(&bytes[14..34]), 0);

        let mut seg = bytes[34..].to_vec();
        seg[16] = 0;
        seg[17] = 0;
        prop_assert_eq!(packet.tcp.checksum, oracle_tcp(spec.src_ip, spec.dst_ip, &seg));
    }

    #[test]
    fn any_single_bit_flip_in_payload_is_flagged(spec in arb_spec(), payload in proptest::collection::vec(any::<u8>(), 1..200), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let packet = WirePacket::build(&spec, payload).unwrap();
        let mut bytes = encode(&packet).unwrap();
        let i = 54 + pos.index(packet.payload.len());
        bytes[i] ^= 1 << bit;
        let decoded = decode(&bytes).unwrap();
        prop_assert!(decoded.ip_checksum_ok);
        prop_assert!(!decoded.tcp_checksum_ok);
    }
}
