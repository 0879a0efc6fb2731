//! Mirror-port capture: records, analyst annotations, listings, pcap files
//! and the ground-truth sidecar.

mod listing;
mod pcap;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use thiserror::Error;

pub use listing::{render_listing, ListingOptions};
pub use pcap::{read_pcap, read_pcap_bytes, write_pcap, write_pcap_bytes, PCAP_MAGIC};

use crate::simnet::{Iface, NodeId, SimTime, TraceEntry};
use crate::wire::{self, WirePacket};

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a pcap file (magic {0:#010x})")]
    BadMagic(u32),
    #[error("unsupported link type {0}")]
    LinkType(u32),
    #[error("pcap truncated at offset {0}")]
    Truncated(usize),
    #[error("sidecar line {line}: {reason}")]
    Sidecar { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Annotation {
    SpuriousRetransmission,
    DupAck,
    OutOfOrder,
    /// Set only from the attacker's record of what it sent.
    GroundTruthForged,
}

impl Annotation {
    pub fn label(self) -> &'static str {
        match self {
            Annotation::SpuriousRetransmission => "TCP Spurious Retransmission",
            Annotation::DupAck => "TCP Dup ACK",
            Annotation::OutOfOrder => "TCP Out-Of-Order",
            Annotation::GroundTruthForged => "FORGED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRecord {
    /// 1-based.
    pub index: usize,
    pub ts: SimTime,
    pub bytes: Vec<u8>,
    pub annotations: BTreeSet<Annotation>,
}

impl CaptureRecord {
    pub fn packet(&self) -> Option<WirePacket> {
        wire::decode(&self.bytes).ok().map(|d| d.packet)
    }

    pub fn has(&self, a: Annotation) -> bool {
        self.annotations.contains(&a)
    }
}

/// Directional stream key: (src ip, src port, dst ip, dst port).
pub type FlowKey = (Ipv4Addr, u16, Ipv4Addr, u16);

pub fn flow_key(p: &WirePacket) -> FlowKey {
    (p.ip.src, p.tcp.src_port, p.ip.dst, p.tcp.dst_port)
}

pub fn reverse(k: FlowKey) -> FlowKey {
    (k.2, k.3, k.0, k.1)
}

fn seq_lt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) < 0
}

fn seq_le(a: u32, b: u32) -> bool {
    a == b || seq_lt(a, b)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Capture {
    pub records: Vec<CaptureRecord>,
}

impl Capture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&mut self, bytes: Vec<u8>, ts: SimTime) -> usize {
        let index = self.records.len() + 1;
        self.records.push(CaptureRecord { index, ts, bytes, annotations: BTreeSet::new() });
        index
    }

    pub fn get(&self, index: usize) -> Option<&CaptureRecord> {
        index.checked_sub(1).and_then(|i| self.records.get(i))
    }

    /// Frames delivered to `node`'s tap interface, in delivery order.
    pub fn from_trace(trace: &[TraceEntry], node: NodeId) -> Self {
        let mut cap = Capture::new();
        for e in trace.iter().filter(|e| e.node == node && e.iface == Iface::Tap) {
            cap.record(e.frame.to_vec(), e.time);
        }
        cap
    }

    /// Recompute inferred annotations. Ground truth is left untouched.
    pub fn annotate(&mut self) {
        #[derive(Default)]
        struct Dir {
            high: Option<u32>,
            last_ack: Option<u32>,
            max_ack: Option<u32>,
        }
        let mut dirs: BTreeMap<FlowKey, Dir> = BTreeMap::new();
        for rec in &mut self.records {
            rec.annotations.retain(|a| *a == Annotation::GroundTruthForged);
            let Some(p) = wire::decode(&rec.bytes).ok().map(|d| d.packet) else { continue };
            let key = flow_key(&p);
            let peer_ack = dirs.get(&reverse(key)).and_then(|d| d.max_ack);
            let d = dirs.entry(key).or_default();
            let len = p.seq_len();
            let f = p.tcp.flags;
            if len > 0 {
                let end = p.tcp.seq.wrapping_add(len);
                if !f.syn() {
                    if peer_ack.is_some_and(|a| seq_le(end, a)) {
                        rec.annotations.insert(Annotation::SpuriousRetransmission);
                    } else if d.high.is_some_and(|h| seq_lt(p.tcp.seq, h)) {
                        rec.annotations.insert(Annotation::OutOfOrder);
                    }
                }
                if d.high.is_none_or(|h| seq_lt(h, end)) {
                    d.high = Some(end);
                }
            } else if f.ack() && !f.rst() && d.last_ack == Some(p.tcp.ack) {
                rec.annotations.insert(Annotation::DupAck);
            }
            if f.ack() && !f.rst() {
                d.last_ack = Some(p.tcp.ack);
                if d.max_ack.is_none_or(|m| seq_lt(m, p.tcp.ack)) {
                    d.max_ack = Some(p.tcp.ack);
                }
            }
        }
    }

    /// Mark records byte-identical to `frames` as forged; returns their indices.
    pub fn mark_forged(&mut self, frames: &[Vec<u8>]) -> Vec<usize> {
        let mut out = Vec::new();
        for rec in &mut self.records {
            if frames.iter().any(|f| *f == rec.bytes) {
                rec.annotations.insert(Annotation::GroundTruthForged);
                out.push(rec.index);
            }
        }
        out
    }

    pub fn forged_indices(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.has(Annotation::GroundTruthForged)).map(|r| r.index).collect()
    }
}

/// One ground-truth line: capture index and why it was forged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SidecarEntry {
    pub index: usize,
    pub reason: String,
}

pub fn render_sidecar(entries: &[SidecarEntry]) -> String {
    entries.iter().map(|e| format!("{}\t{}\n", e.index, e.reason)).collect()
}

pub fn parse_sidecar(text: &str) -> Result<Vec<SidecarEntry>, CaptureError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, reason) =
            line.split_once('\t').ok_or(CaptureError::Sidecar { line: n + 1, reason: "missing tab".into() })?;
        let index = idx.trim().parse().map_err(|_| CaptureError::Sidecar { line: n + 1, reason: "bad index".into() })?;
        out.push(SidecarEntry { index, reason: reason.to_string() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{encode, MacAddr, SegmentSpec, TcpFlags};

    fn seg(from_client: bool, seq: u32, ack: u32, flags: TcpFlags, payload: &[u8]) -> Vec<u8> {
        let (a, b) = (Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(10, 0, 0, 2));
        let (src, dst, sp, dp) = if from_client { (a, b, 4000, 80) } else { (b, a, 80, 4000) };
        let spec = SegmentSpec {
            src_mac: MacAddr([2, 0, 0, 0, 0, 1]),
            dst_mac: MacAddr([2, 0, 0, 0, 0, 2]),
            src_ip: src,
            dst_ip: dst,
            src_port: sp,
            dst_port: dp,
            seq,
            ack,
            flags,
            ip_id: 1,
            ttl: 64,
            window: 1000,
        };
        encode(&WirePacket::build(&spec, payload.to_vec()).unwrap()).unwrap()
    }

    const A: TcpFlags = TcpFlags::ACK;

    #[test]
    fn indices_are_dense() {
        let mut c = Capture::new();
        assert_eq!(c.record(vec![1], SimTime::ZERO), 1);
        assert_eq!(c.record(vec![2], SimTime::ZERO), 2);
        assert_eq!(c.get(2).unwrap().bytes, vec![2]);
        assert!(c.get(0).is_none());
    }

    #[test]
    fn spurious_and_dup_ack() {
        let mut c = Capture::new();
        c.record(seg(false, 100, 10, A | TcpFlags::PSH, b"forged"), SimTime::ZERO);
        c.record(seg(true, 10, 106, A, b""), SimTime::ZERO);
        c.record(seg(false, 100, 10, A | TcpFlags::PSH, b"forged"), SimTime::ZERO);
        c.record(seg(true, 10, 106, A, b""), SimTime::ZERO);
        c.annotate();
        assert!(c.records[0].annotations.is_empty());
        assert!(c.records[1].annotations.is_empty());
        assert!(c.records[2].has(Annotation::SpuriousRetransmission));
        assert!(c.records[3].has(Annotation::DupAck));
    }

    #[test]
    fn annotate_is_idempotent_and_keeps_ground_truth() {
        let mut c = Capture::new();
        let f = seg(false, 100, 10, A, b"x");
        c.record(f.clone(), SimTime::ZERO);
        c.record(seg(true, 10, 101, A, b""), SimTime::ZERO);
        c.record(seg(false, 100, 10, A, b"y"), SimTime::ZERO);
        assert_eq!(c.mark_forged(&[f]), vec![1]);
        c.annotate();
        let once = c.clone();
        c.annotate();
        assert_eq!(c, once);
        assert!(c.records[0].has(Annotation::GroundTruthForged));
        let mut without = c.clone();
        for r in &mut without.records {
            r.annotations.remove(&Annotation::GroundTruthForged);
        }
        without.annotate();
        for (a, b) in without.records.iter().zip(&c.records) {
            let mut b = b.annotations.clone();
            b.remove(&Annotation::GroundTruthForged);
            assert_eq!(a.annotations, b);
        }
    }

    #[test]
    fn partial_overlap_is_out_of_order() {
        let mut c = Capture::new();
        c.record(seg(false, 100, 10, A, b"abc"), SimTime::ZERO);
        c.record(seg(false, 100, 10, A, b"abcdef"), SimTime::ZERO);
        c.annotate();
        assert!(c.records[1].has(Annotation::OutOfOrder));
    }

    #[test]
    fn sidecar_roundtrip() {
        let e = vec![SidecarEntry { index: 10, reason: "forged GI response".into() }];
        let text = render_sidecar(&e);
        assert_eq!(text, "10\tforged GI response\n");
        assert_eq!(parse_sidecar(&text).unwrap(), e);
        assert!(parse_sidecar("x\ty").is_err());
        assert!(parse_sidecar("10 no tab").is_err());
    }
}
