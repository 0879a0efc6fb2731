use std::collections::BTreeMap;

use crate::capture::{flow_key, reverse, Capture, FlowKey};
use crate::tcpstack::FourTuple;
use crate::wire::WirePacket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    ToServer,
    ToClient,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::ToServer => Direction::ToClient,
            Direction::ToClient => Direction::ToServer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamEvent {
    pub record_index: usize,
    pub dir: Direction,
    pub packet: WirePacket,
}

/// One TCP connection as seen on the wire, oriented client-side local.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    pub tuple: FourTuple,
    pub events: Vec<StreamEvent>,
}

impl Stream {
    pub fn server_port(&self) -> u16 {
        self.tuple.remote_port
    }
}

/// Group decodable TCP records into connections, in order of first appearance.
/// The client is the sender of the bare SYN, or failing that the endpoint
/// with the higher port.
pub fn split_streams(capture: &Capture) -> Vec<Stream> {
    let mut order: Vec<FlowKey> = Vec::new();
    let mut packets: BTreeMap<FlowKey, Vec<(usize, FlowKey, WirePacket)>> = BTreeMap::new();
    for rec in &capture.records {
        let Some(p) = rec.packet() else { continue };
        let k = flow_key(&p);
        let canon = k.min(reverse(k));
        let list = packets.entry(canon).or_default();
        if list.is_empty() {
            order.push(canon);
        }
        list.push((rec.index, k, p));
    }
    order
        .into_iter()
        .map(|canon| {
            let list = packets.remove(&canon).unwrap_or_default();
            let client_key = list
                .iter()
                .find(|(_, _, p)| p.tcp.flags.syn() && !p.tcp.flags.ack())
                .map(|(_, k, _)| *k)
                .unwrap_or_else(|| if canon.1 > canon.3 { canon } else { reverse(canon) });
            let tuple = FourTuple {
                local_ip: client_key.0,
                local_port: client_key.1,
                remote_ip: client_key.2,
                remote_port: client_key.3,
            };
            let events = list
                .into_iter()
                .map(|(record_index, k, packet)| StreamEvent {
                    record_index,
                    dir: if k == client_key { Direction::ToServer } else { Direction::ToClient },
                    packet,
                })
                .collect();
            Stream { tuple, events }
        })
        .collect()
}

pub(crate) fn seq_lt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) < 0
}

/// Byte range whose contents disagree with what was stored first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapConflict {
    /// Record that supplied the stored bytes.
    pub stored_record: usize,
    /// Sequence number where the differing intersection starts.
    pub seq: u32,
    pub len: usize,
}

/// One direction of a connection, keeping the first bytes seen for each
/// sequence position. Stored ranges never overlap.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reassembly {
    base: Option<u32>,
    ranges: BTreeMap<i64, (Vec<u8>, usize)>,
    pub fin_seq: Option<u32>,
    pub last_ack: Option<u32>,
    pub max_seq_seen: Option<u32>,
}

impl Reassembly {
    fn offset(&mut self, seq: u32) -> i64 {
        let base = *self.base.get_or_insert(seq);
        i64::from(seq.wrapping_sub(base) as i32)
    }

    /// Store `payload` at `seq`, returning every stored range whose
    /// intersection with it differs byte-wise.
    pub fn insert(&mut self, seq: u32, payload: &[u8], record: usize) -> Vec<OverlapConflict> {
        if payload.is_empty() {
            return Vec::new();
        }
        let end_seq = seq.wrapping_add(payload.len() as u32);
        if self.max_seq_seen.is_none_or(|m| seq_lt(m, end_seq)) {
            self.max_seq_seen = Some(end_seq);
        }
        let s = self.offset(seq);
        let e = s + payload.len() as i64;
        let base = self.base.unwrap_or(seq);

        let mut conflicts = Vec::new();
        let mut covered: Vec<(i64, i64)> = Vec::new();
        for (&a, (bytes, rec)) in self.ranges.range(..e).rev() {
            let b = a + bytes.len() as i64;
            if b <= s {
                break;
            }
            let (lo, hi) = (a.max(s), b.min(e));
            let stored = &bytes[(lo - a) as usize..(hi - a) as usize];
            let incoming = &payload[(lo - s) as usize..(hi - s) as usize];
            if stored != incoming {
                conflicts.push(OverlapConflict {
                    stored_record: *rec,
                    seq: base.wrapping_add(lo as u32),
                    len: (hi - lo) as usize,
                });
            }
            covered.push((lo, hi));
        }
        conflicts.reverse();
        covered.sort_unstable();

        let mut cursor = s;
        for (lo, hi) in covered.into_iter().chain(std::iter::once((e, e))) {
            if lo > cursor {
                let piece = payload[(cursor - s) as usize..(lo - s) as usize].to_vec();
                self.ranges.insert(cursor, (piece, record));
            }
            cursor = cursor.max(hi);
        }
        conflicts
    }

    /// Total bytes held.
    pub fn stored_len(&self) -> usize {
        self.ranges.values().map(|(b, _)| b.len()).sum()
    }

    pub fn bytes_at(&mut self, seq: u32, len: usize) -> Option<Vec<u8>> {
        let s = self.offset(seq);
        let mut out = Vec::with_capacity(len);
        let mut pos = s;
        while out.len() < len {
            let (&a, (bytes, _)) = self.ranges.range(..=pos).next_back()?;
            let b = a + bytes.len() as i64;
            if b <= pos {
                return None;
            }
            let take = ((b - pos) as usize).min(len - out.len());
            out.extend_from_slice(&bytes[(pos - a) as usize..(pos - a) as usize + take]);
            pos += take as i64;
        }
        Some(out)
    }
}
