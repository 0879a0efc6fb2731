use std::collections::BTreeMap;

use crate::capture::{flow_key, reverse, FlowKey};
use crate::httpmini::{parse_request, HTTP_PORT};
use crate::iec104::{seq_add, split_apdus, Apci, Cot, TypeId, IEC104_PORT};
use crate::tcpstack::FourTuple;
use crate::wire::{self, MacAddr, WirePacket};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DirState {
    pub next_seq: u32,
    pub last_ack: u32,
    pub last_payload_len: usize,
    pub last_window: u16,
    pub macs: (MacAddr, MacAddr),
    /// N(S) the sender will use next, when it speaks IEC-104.
    pub iec_next_ns: Option<u16>,
}

/// IEC-104 numbering the responder would legitimately use next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IecCounters {
    pub server_next_ns: u16,
    pub victim_next_ns: u16,
}

/// What the attacker knows about one connection, learned from the tap only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedConn {
    /// Oriented from the first packet seen (normally the client's SYN).
    pub tuple: FourTuple,
    pub dirs: BTreeMap<FlowKey, DirState>,
    /// Interrogation request and the counters as of that request.
    pub gi_request: Option<(WirePacket, IecCounters)>,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TriggerRule {
    Http { method: String, path: String, cookie_contains: Option<String> },
    /// Activation confirmation of a station interrogation.
    Iec104ActCon,
}

impl TriggerRule {
    pub fn http_get(path: &str) -> Self {
        TriggerRule::Http { method: "GET".into(), path: path.into(), cookie_contains: None }
    }
}

/// Header context handed to the forger when a trigger fires.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Firing {
    /// Victim-to-responder request the forgery answers.
    pub request: WirePacket,
    /// Highest responder sequence number the victim expects next.
    pub responder_next_seq: Option<u32>,
    pub iec: Option<IecCounters>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObserveError {
    /// IEC-104 trigger seen without the interrogation that sets the counters.
    MissingCounterContext(FourTuple),
}

fn canonical(k: FlowKey) -> FlowKey {
    k.min(reverse(k))
}

fn seq_lt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) < 0
}

#[derive(Debug, Clone, Default)]
pub struct Observer {
    pub conns: BTreeMap<FlowKey, ObservedConn>,
}

impl Observer {
    pub fn conn_for(&self, p: &WirePacket) -> Option<&ObservedConn> {
        self.conns.get(&canonical(flow_key(p)))
    }

    /// Update state from one mirrored frame and evaluate `rule`. At most one
    /// firing per frame, and at most one per connection.
    pub fn observe(&mut self, frame: &[u8], rule: &TriggerRule) -> Result<Option<Firing>, ObserveError> {
        let Ok(decoded) = wire::decode(frame) else { return Ok(None) };
        let p = decoded.packet;
        let key = flow_key(&p);
        let conn = self.conns.entry(canonical(key)).or_insert_with(|| ObservedConn {
            tuple: FourTuple { local_ip: p.ip.src, local_port: p.tcp.src_port, remote_ip: p.ip.dst, remote_port: p.tcp.dst_port },
            dirs: BTreeMap::new(),
            gi_request: None,
            fired: false,
        });

        let apdus = if p.tcp.src_port == IEC104_PORT || p.tcp.dst_port == IEC104_PORT {
            split_apdus(&p.payload).unwrap_or_default()
        } else {
            Vec::new()
        };

        if p.tcp.dst_port == IEC104_PORT {
            let is_gi = apdus.iter().any(|a| {
                matches!(a.apci, Apci::I { .. })
                    && a.asdu.as_ref().is_some_and(|s| s.type_id == TypeId::Interrogation && s.cot == Cot::Act)
            });
            if is_gi {
                let server_next_ns = conn.dirs.get(&reverse(key)).and_then(|d| d.iec_next_ns).unwrap_or(0);
                let victim_next_ns = apdus
                    .iter()
                    .filter_map(|a| match a.apci {
                        Apci::I { ns, .. } => Some(seq_add(ns, 1)),
                        _ => None,
                    })
                    .last()
                    .unwrap_or(0);
                conn.gi_request = Some((p.clone(), IecCounters { server_next_ns, victim_next_ns }));
            }
        }

        let d = conn.dirs.entry(key).or_default();
        let end = p.tcp.seq.wrapping_add(p.seq_len());
        if d.next_seq == 0 || seq_lt(d.next_seq, end) {
            d.next_seq = end;
        }
        if p.tcp.flags.ack() {
            d.last_ack = p.tcp.ack;
        }
        d.last_payload_len = p.payload.len();
        d.last_window = p.tcp.window;
        d.macs = (p.eth.src, p.eth.dst);
        for a in &apdus {
            if let Apci::I { ns, .. } = a.apci {
                d.iec_next_ns = Some(seq_add(ns, 1));
            }
        }

        if conn.fired {
            return Ok(None);
        }
        let firing = match rule {
            TriggerRule::Http { method, path, cookie_contains } => {
                if p.tcp.dst_port != HTTP_PORT {
                    return Ok(None);
                }
                let Ok((req, _)) = parse_request(&p.payload) else { return Ok(None) };
                let cookie_ok = match cookie_contains {
                    Some(needle) => req.headers.get("Cookie").is_some_and(|c| c.contains(needle.as_str())),
                    None => true,
                };
                if req.method != *method || req.path != *path || !cookie_ok {
                    return Ok(None);
                }
                let responder_next_seq = conn.dirs.get(&reverse(key)).map(|d| d.next_seq);
                Firing { request: p, responder_next_seq, iec: None }
            }
            TriggerRule::Iec104ActCon => {
                if p.tcp.src_port != IEC104_PORT {
                    return Ok(None);
                }
                let actcon = apdus.iter().any(|a| {
                    a.asdu.as_ref().is_some_and(|s| s.type_id == TypeId::Interrogation && s.cot == Cot::ActCon)
                });
                if !actcon {
                    return Ok(None);
                }
                let Some((request, counters)) = conn.gi_request.clone() else {
                    conn.fired = true;
                    return Err(ObserveError::MissingCounterContext(conn.tuple));
                };
                let responder_next_seq = Some(end);
                Firing { request, responder_next_seq, iec: Some(counters) }
            }
        };
        conn.fired = true;
        Ok(Some(firing))
    }
}
