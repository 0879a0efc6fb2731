use std::collections::BTreeMap;
use std::fmt::Write;

use super::{flow_key, reverse, Annotation, Capture, FlowKey};
use crate::iec104::{split_apdus, IEC104_PORT};
use crate::httpmini::HTTP_PORT;
use crate::wire::{self, WirePacket};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ListingOptions {
    /// Show the attacker's ground truth as a `[FORGED]` marker.
    pub ground_truth: bool,
}

fn summarize(p: &WirePacket) -> String {
    let ports = [p.tcp.src_port, p.tcp.dst_port];
    if p.payload.is_empty() {
        return "TCP".into();
    }
    if ports.contains(&IEC104_PORT) {
        return match split_apdus(&p.payload) {
            Ok(apdus) => {
                let parts: Vec<String> = apdus.iter().map(ToString::to_string).collect();
                format!("IEC104 {}", parts.join("; "))
            }
            Err(_) => "IEC104 malformed".into(),
        };
    }
    if ports.contains(&HTTP_PORT) {
        let first = p.payload.split(|b| *b == b'\r').next().unwrap_or_default();
        let line = String::from_utf8_lossy(first);
        if let Some(status) = line.strip_prefix("HTTP/1.1 ") {
            return format!("HTTP {status}");
        }
        if line.starts_with("GET ") {
            let target = line.split(' ').nth(1).unwrap_or("");
            return format!("HTTP GET {target}");
        }
        return "HTTP continuation".into();
    }
    "TCP payload".into()
}

/// One line per record:
/// `index time src:port -> dst:port [flags] Seq= Ack= Win= Len=bytes (bits) summary [annotations]`.
/// Seq and Ack are relative to each direction's initial sequence number.
pub fn render_listing(capture: &Capture, opts: ListingOptions) -> String {
    let mut bases: BTreeMap<FlowKey, u32> = BTreeMap::new();
    let t0 = capture.records.first().map(|r| r.ts).unwrap_or_default();
    let mut out = String::new();
    for rec in &capture.records {
        let Ok(decoded) = wire::decode(&rec.bytes) else {
            let _ = writeln!(out, "{:>4} {:>10.6} non-TCP frame, {} bytes", rec.index, (rec.ts - t0).as_secs_f64(), rec.bytes.len());
            continue;
        };
        let p = decoded.packet;
        let key = flow_key(&p);
        let base = *bases.entry(key).or_insert(p.tcp.seq);
        let rel_seq = p.tcp.seq.wrapping_sub(base);
        let rel_ack = match bases.get(&reverse(key)) {
            Some(b) if p.tcp.flags.ack() => p.tcp.ack.wrapping_sub(*b),
            _ if p.tcp.flags.ack() => p.tcp.ack,
            _ => 0,
        };
        let len = p.payload.len();
        let mut notes: Vec<&str> = rec
            .annotations
            .iter()
            .filter(|a| opts.ground_truth || **a != Annotation::GroundTruthForged)
            .map(|a| a.label())
            .collect();
        notes.sort_unstable();
        let notes = if notes.is_empty() { String::new() } else { format!(" [{}]", notes.join("] [")) };
        let _ = writeln!(
            out,
            "{:>4} {:>10.6} {}:{} -> {}:{} [{}] Seq={} Ack={} Win={} Len={} ({} bits) {}{}",
            rec.index,
            (rec.ts - t0).as_secs_f64(),
            p.ip.src,
            p.tcp.src_port,
            p.ip.dst,
            p.tcp.dst_port,
            p.tcp.flags,
            rel_seq,
            rel_ack,
            p.tcp.window,
            len,
            len * 8,
            summarize(&p),
            notes
        );
    }
    out
}
