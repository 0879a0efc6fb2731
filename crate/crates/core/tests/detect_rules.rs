use std::net::Ipv4Addr;

use mots_core::capture::{write_pcap, Capture};
use mots_core::detect::*;
use mots_core::mots::{run_experiment, Experiment, ScenarioConfig};
use mots_core::simnet::SimTime;
use mots_core::wire::{encode, MacAddr, SegmentSpec, TcpFlags, WirePacket};
use proptest::prelude::*;

const CLIENT: Ipv4Addr = Ipv4Addr::new(10, 9, 0, 1);
const SERVER: Ipv4Addr = Ipv4Addr::new(10, 9, 0, 2);

struct Seg {
    to_server: bool,
    seq: u32,
    ack: u32,
    flags: TcpFlags,
    window: u16,
    payload: Vec<u8>,
    ttl: u8,
    ip_id: u16,
}

fn seg(to_server: bool, seq: u32, ack: u32, payload: &[u8]) -> Seg {
    Seg { to_server, seq, ack, flags: TcpFlags::ACK, window: 65535, payload: payload.to_vec(), ttl: 64, ip_id: 0 }
}

fn capture(segs: &[Seg]) -> Capture {
    let mut c = Capture::new();
    let mut ids = [100u16, 500u16];
    for (i, s) in segs.iter().enumerate() {
        let (src_ip, dst_ip, src_port, dst_port) =
            if s.to_server { (CLIENT, SERVER, 50000, 80) } else { (SERVER, CLIENT, 80, 50000) };
        let d = usize::from(!s.to_server);
        ids[d] = ids[d].wrapping_add(1);
        let p = WirePacket::build(
            &SegmentSpec {
                src_mac: MacAddr([2, 0, 0, 0, 0, 1 + d as u8]),
                dst_mac: MacAddr([2, 0, 0, 0, 0, 2 - d as u8]),
                src_ip,
                dst_ip,
                src_port,
                dst_port,
                seq: s.seq,
                ack: s.ack,
                flags: s.flags,
                ip_id: if s.ip_id != 0 { s.ip_id } else { ids[d] },
                ttl: s.ttl,
                window: s.window,
            },
            s.payload.clone(),
        )
        .unwrap();
        c.record(encode(&p).unwrap(), SimTime::from_micros(i as u64));
    }
    c
}

fn r1(c: &Capture) -> usize {
    analyze(c, &DetectConfig::only([RuleId::R1OverlapDiffData])).count(RuleId::R1OverlapDiffData)
}

/// Independent oracle: position-by-position map of first-seen bytes.
fn oracle_conflict(first: (u32, &[u8]), second: (u32, &[u8])) -> bool {
    let mut seen = std::collections::BTreeMap::new();
    for (i, b) in first.1.iter().enumerate() {
        seen.insert(first.0 + i as u32, *b);
    }
    second.1.iter().enumerate().any(|(i, b)| seen.get(&(second.0 + i as u32)).is_some_and(|s| s != b))
}

#[test]
fn overlap_geometries_differing_only_outside_are_silent() {
    let stored = (1000u32, vec![b'a'; 20]);
    // Identical, contained, containing, left edge, right edge.
    let geometries: [(u32, usize); 5] = [(1000, 20), (1005, 10), (995, 30), (990, 15), (1015, 15)];
    for (start, len) in geometries {
        let mut incoming: Vec<u8> = (0..len).map(|i| if (1000..1020).contains(&(start + i as u32)) { b'a' } else { b'Z' }).collect();
        let c = capture(&[seg(false, stored.0, 1, &stored.1), seg(false, start, 1, &incoming)]);
        assert!(!oracle_conflict((stored.0, &stored.1), (start, &incoming)));
        assert_eq!(r1(&c), 0, "geometry {start}+{len}");

        // Flip one byte inside the intersection.
        let lo = start.max(1000);
        incoming[(lo - start) as usize] = b'X';
        let c = capture(&[seg(false, stored.0, 1, &stored.1), seg(false, start, 1, &incoming)]);
        assert!(oracle_conflict((stored.0, &stored.1), (start, &incoming)));
        assert_eq!(r1(&c), 1, "geometry {start}+{len} with differing byte");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]
    #[test]
    fn overlap_rule_matches_bytewise_oracle(
        s1 in 0u32..40, b1 in proptest::collection::vec(0u8..3, 1..24),
        s2 in 0u32..40, b2 in proptest::collection::vec(0u8..3, 1..24),
    ) {
        let c = capture(&[seg(false, 1000 + s1, 1, &b1), seg(false, 1000 + s2, 1, &b2)]);
        let expected = oracle_conflict((1000 + s1, &b1), (1000 + s2, &b2));
        prop_assert_eq!(r1(&c) == 1, expected);
    }

    /// Window recision against the shrink-versus-acknowledged inequality:
    /// the window may shrink by at most the bytes newly acknowledged.
    #[test]
    fn recision_matches_inequality(
        ack0 in 0u32..5000, w0 in 0u16..4000, dack in 0u32..3000, w1 in 0u16..4000,
    ) {
        let ack1 = ack0 + dack;
        let mut a = seg(true, 1, ack0 + 1, b"");
        a.window = w0;
        let mut b = seg(true, 1, ack1 + 1, b"");
        b.window = w1;
        let c = capture(&[a, b]);
        let shrink = i64::from(w0) - i64::from(w1);
        let newly_acked = i64::from(ack1) - i64::from(ack0);
        let expected = shrink > newly_acked;
        let got = analyze(&c, &DetectConfig::only([RuleId::R4WindowRecision])).fired(RuleId::R4WindowRecision);
        prop_assert_eq!(got, expected);
    }
}

#[test]
fn identical_retransmission_is_silent() {
    let c = capture(&[seg(false, 1, 1, b"hello"), seg(false, 1, 1, b"hello")]);
    assert_eq!(r1(&c), 0);
}

#[test]
fn recision_examples() {
    let mk = |ack, window| Seg { window, ..seg(true, 1, ack, b"") };
    let cfg = DetectConfig::only([RuleId::R4WindowRecision]);
    let steady = capture(&[mk(100, 1000), mk(200, 1000), mk(300, 1000)]);
    assert!(!analyze(&steady, &cfg).fired(RuleId::R4WindowRecision));
    let within = capture(&[mk(100, 1000), mk(300, 850)]);
    assert!(!analyze(&within, &cfg).fired(RuleId::R4WindowRecision));
    let shrink = capture(&[mk(100, 1000), mk(300, 700)]);
    let a = analyze(&shrink, &cfg);
    assert_eq!(a.alerts.len(), 1);
    assert_eq!((a.alerts[0].record_index, a.alerts[0].related.clone()), (2, vec![1]));
}

#[test]
fn small_segment_threshold_boundary() {
    let cfg = DetectConfig::only([RuleId::R5SmallSegmentBurst]);
    let run = |n: usize, len: usize| {
        let segs: Vec<Seg> = (0..n).map(|i| seg(true, 1 + (i * len) as u32, 1, &vec![7; len])).collect();
        analyze(&capture(&segs), &cfg).count(RuleId::R5SmallSegmentBurst)
    };
    assert_eq!(run(4, 6), 0);
    assert_eq!(run(5, 6), 1);
    assert_eq!(run(12, 6), 1, "one alert per direction");
    assert_eq!(run(10, 1460), 0);
    assert_eq!(run(10, 16), 0, "cutoff is exclusive");
}

#[test]
fn orderly_close_is_silent_and_data_after_close_fires() {
    let fin = |to_server, seq, ack, payload: &[u8]| Seg { flags: TcpFlags::FIN | TcpFlags::ACK, ..seg(to_server, seq, ack, payload) };
    let orderly = [
        seg(true, 1, 1, b"req"),
        fin(false, 1, 4, b"response"),
        fin(true, 4, 10, b""),
        seg(false, 10, 5, b""),
    ];
    let cfg = DetectConfig::default();
    assert!(analyze(&capture(&orderly), &cfg).alerts.is_empty());

    let mut attacked: Vec<Seg> = orderly.into_iter().take(3).collect();
    attacked.push(fin(false, 1, 5, b"a longer legitimate response"));
    let a = analyze(&capture(&attacked), &DetectConfig::only([RuleId::R2DataOnClosedStream, RuleId::R3FinAdvancedLastSeq]));
    assert!(a.fired(RuleId::R2DataOnClosedStream));
    assert!(a.fired(RuleId::R3FinAdvancedLastSeq));
    assert!(a.alerts.iter().all(|x| x.record_index == 4 && x.related == vec![2]));
}

#[test]
fn fin_past_unseen_data() {
    let fin = Seg { flags: TcpFlags::FIN | TcpFlags::ACK, ..seg(false, 50, 1, b"") };
    let a = analyze(&capture(&[seg(false, 1, 1, b"abc"), fin]), &DetectConfig::default());
    assert_eq!(a.count(RuleId::R3FinAdvancedLastSeq), 1);
}

#[test]
fn ttl_and_ip_id_clauses() {
    let cfg = DetectConfig::only([RuleId::R7TtlIpIdAnomaly]);
    let normal: Vec<Seg> = (0..4).map(|i| seg(false, 1 + i, 1, b"x")).collect();
    assert!(analyze(&capture(&normal), &cfg).alerts.is_empty());

    let mut skewed: Vec<Seg> = (0..4).map(|i| seg(false, 1 + i, 1, b"x")).collect();
    skewed[2].ttl = 61;
    let a = analyze(&capture(&skewed), &cfg);
    assert_eq!(a.alerts.iter().map(|x| x.record_index).collect::<Vec<_>>(), vec![3]);

    let mut jumped: Vec<Seg> = (0..4).map(|i| seg(false, 1 + i, 1, b"x")).collect();
    jumped[1].ip_id = 40000;
    let a = analyze(&capture(&jumped), &cfg);
    assert_eq!(a.alerts.iter().map(|x| x.record_index).collect::<Vec<_>>(), vec![2]);
    let ttl_only = DetectConfig { ipid_band: None, ..cfg };
    assert!(analyze(&capture(&jumped), &ttl_only).alerts.is_empty());
}

#[test]
fn experiment_ttl_clause() {
    let ttl_only = DetectConfig { ipid_band: None, ..DetectConfig::only([RuleId::R7TtlIpIdAnomaly]) };
    let plain = run_experiment(&ScenarioConfig::new(Experiment::Exp1, 3)).unwrap();
    assert!(analyze(&plain.capture, &ttl_only).alerts.is_empty(), "equal TTL evades the TTL clause");

    let mut cfg = ScenarioConfig::new(Experiment::Exp1, 3);
    cfg.ttl_skew = -2;
    let skewed = run_experiment(&cfg).unwrap();
    let a = analyze(&skewed.capture, &ttl_only);
    assert_eq!(a.alerts.len(), 1);
    assert_eq!(a.alerts[0].record_index, skewed.sidecar[0].index);
}

#[test]
fn pcap_ingestion_matches_in_memory() {
    let o = run_experiment(&ScenarioConfig::new(Experiment::Exp1, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp1.pcap");
    write_pcap(&o.capture, &path).unwrap();
    let cfg = DetectConfig::default();
    assert_eq!(analyze_pcap(&path, &cfg).unwrap(), analyze(&o.capture, &cfg));
}

#[test]
fn experiment_alerts_and_scores() {
    let cfg = DetectConfig::default();
    for exp in [Experiment::Exp1, Experiment::Exp2, Experiment::Exp4] {
        let o = run_experiment(&ScenarioConfig::new(exp, 5)).unwrap();
        let a = analyze(&o.capture, &cfg);
        let s = score(&a, &o.sidecar, Some(RuleId::R1OverlapDiffData));
        assert_eq!(s.recall(), Some(1.0), "{exp}");
        assert_eq!(s.precision(), Some(1.0), "{exp}");
        assert!(a.alerts.iter().all(|x| o.capture.get(x.record_index).is_some()));
    }
    let o = run_experiment(&ScenarioConfig::new(Experiment::Exp3, 5)).unwrap();
    let a = analyze(&o.capture, &cfg);
    assert!(!a.fired(RuleId::R1OverlapDiffData));
    assert!(a.fired(RuleId::R6Iec104DuplicateResponse));
    assert_eq!(a, analyze(&o.capture, &cfg), "deterministic");
}
