use std::collections::BTreeMap;

use super::stream::{seq_lt, Direction, Reassembly, Stream, StreamEvent};
use super::{Alert, DetectConfig, RuleId};
use crate::iec104::{seq_add, split_apdus, Apci, Apdu, Asdu, Cot, TypeId, IEC104_PORT, SEQ_MODULO};

fn alert(rule: RuleId, stream: &Stream, ev: &StreamEvent, related: Vec<usize>, description: String) -> Alert {
    Alert { rule, stream: stream.tuple, record_index: ev.record_index, related, severity: rule.severity(), description }
}

fn dir_index(d: Direction) -> usize {
    match d {
        Direction::ToServer => 0,
        Direction::ToClient => 1,
    }
}

/// R1: a segment overlapping stored bytes with different content.
pub fn rule_overlap_diff_data(stream: &Stream) -> Vec<Alert> {
    let mut reasm = [Reassembly::default(), Reassembly::default()];
    let mut out = Vec::new();
    for ev in &stream.events {
        let p = &ev.packet;
        let seq = if p.tcp.flags.syn() { p.tcp.seq.wrapping_add(1) } else { p.tcp.seq };
        let conflicts = reasm[dir_index(ev.dir)].insert(seq, &p.payload, ev.record_index);
        if conflicts.is_empty() {
            continue;
        }
        let bytes: usize = conflicts.iter().map(|c| c.len).sum();
        let mut related: Vec<usize> = conflicts.iter().map(|c| c.stored_record).collect();
        related.dedup();
        out.push(alert(
            RuleId::R1OverlapDiffData,
            stream,
            ev,
            related,
            format!("reassembly overlap with different data: {bytes} bytes from seq {}", conflicts[0].seq),
        ));
    }
    out
}

/// R2: payload after the sender's FIN was acknowledged. R3: a FIN beyond
/// the highest sequence seen, or beyond an earlier FIN.
pub fn rule_closed_stream(stream: &Stream) -> Vec<Alert> {
    let mut state = [Reassembly::default(), Reassembly::default()];
    let mut fin_record = [0usize; 2];
    let mut out = Vec::new();
    for ev in &stream.events {
        let p = &ev.packet;
        let d = dir_index(ev.dir);
        let o = 1 - d;
        if p.tcp.flags.ack() {
            state[d].last_ack = Some(p.tcp.ack);
        }
        let start = if p.tcp.flags.syn() { p.tcp.seq.wrapping_add(1) } else { p.tcp.seq };
        let data_end = start.wrapping_add(p.payload.len() as u32);

        if !p.payload.is_empty() {
            let closed = state[d]
                .fin_seq
                .is_some_and(|f| state[o].last_ack.is_some_and(|a| !seq_lt(a, f.wrapping_add(1))));
            if closed {
                out.push(alert(
                    RuleId::R2DataOnClosedStream,
                    stream,
                    ev,
                    vec![fin_record[d]],
                    format!("{} bytes sent on stream not accepting data", p.payload.len()),
                ));
            }
        }

        if p.tcp.flags.fin() {
            let prior_max = state[d].max_seq_seen;
            let skipped = p.payload.is_empty() && prior_max.is_some_and(|m| seq_lt(m, start));
            let advanced = state[d].fin_seq.is_some_and(|f| seq_lt(f, data_end));
            if skipped || advanced {
                let what = if advanced { "moved past an earlier FIN" } else { "skipped past unseen data" };
                out.push(alert(
                    RuleId::R3FinAdvancedLastSeq,
                    stream,
                    ev,
                    if advanced { vec![fin_record[d]] } else { Vec::new() },
                    format!("FIN at seq {data_end} {what}"),
                ));
            }
            if state[d].fin_seq.is_none_or(|f| seq_lt(f, data_end)) {
                state[d].fin_seq = Some(data_end);
                fin_record[d] = ev.record_index;
            }
        }
        if state[d].max_seq_seen.is_none_or(|m| seq_lt(m, data_end)) && !p.tcp.flags.rst() {
            state[d].max_seq_seen = Some(data_end);
        }
    }
    out
}

/// R4: the advertised right edge (ack + window) moves backwards, i.e. the
/// window shrank by more than the newly acknowledged amount.
pub fn rule_window_recision(stream: &Stream) -> Vec<Alert> {
    let mut prev: [Option<(u32, u16, usize)>; 2] = [None, None];
    let mut out = Vec::new();
    for ev in &stream.events {
        let p = &ev.packet;
        if !p.tcp.flags.ack() || p.tcp.flags.rst() {
            continue;
        }
        let d = dir_index(ev.dir);
        let edge = p.tcp.ack.wrapping_add(u32::from(p.tcp.window));
        if let Some((pack, pwin, prec)) = prev[d] {
            let pedge = pack.wrapping_add(u32::from(pwin));
            if seq_lt(edge, pedge) {
                out.push(alert(
                    RuleId::R4WindowRecision,
                    stream,
                    ev,
                    vec![prec],
                    format!("receive window right edge moved back by {} bytes", pedge.wrapping_sub(edge)),
                ));
                continue;
            }
        }
        prev[d] = Some((p.tcp.ack, p.tcp.window, ev.record_index));
    }
    out
}

/// R5: a run of `threshold` consecutive data segments shorter than `cutoff`
/// bytes in one direction. Fires once per direction.
pub fn rule_small_segments(stream: &Stream, threshold: usize, cutoff: usize) -> Vec<Alert> {
    let mut runs: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut fired = [false; 2];
    let mut out = Vec::new();
    for ev in &stream.events {
        let len = ev.packet.payload.len();
        if len == 0 {
            continue;
        }
        let d = dir_index(ev.dir);
        if len >= cutoff {
            runs[d].clear();
            continue;
        }
        runs[d].push(ev.record_index);
        if !fired[d] && threshold > 0 && runs[d].len() >= threshold {
            fired[d] = true;
            out.push(alert(
                RuleId::R5SmallSegmentBurst,
                stream,
                ev,
                runs[d].clone(),
                format!("{} consecutive TCP segments under {cutoff} bytes", runs[d].len()),
            ));
        }
    }
    out
}

#[derive(Debug, Default)]
struct Activation {
    /// (seq, payload, record) of each segment carrying a confirmation or termination.
    responses: Vec<(u32, Vec<u8>, usize)>,
    confirmations: usize,
    terminations: usize,
    alerted: bool,
}

fn gi_cot(apdus: &[Apdu], cot: Cot) -> bool {
    apdus.iter().any(|a| a.asdu.as_ref().is_some_and(|s| s.type_id == TypeId::Interrogation && s.cot == cot))
}

/// R6: two distinct interrogation response bursts for one activation, or an
/// outstation I-frame reusing an N(S) with different contents.
pub fn rule_iec104_semantic(stream: &Stream) -> Vec<Alert> {
    if stream.server_port() != IEC104_PORT {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut activation: Option<Activation> = None;
    let mut victim_ack: Option<u32> = None;
    let mut seen: BTreeMap<u16, (Asdu, usize)> = BTreeMap::new();
    for ev in &stream.events {
        let p = &ev.packet;
        if ev.dir == Direction::ToServer {
            if p.tcp.flags.ack() && victim_ack.is_none_or(|a| seq_lt(a, p.tcp.ack)) {
                victim_ack = Some(p.tcp.ack);
            }
            let apdus = split_apdus(&p.payload).unwrap_or_default();
            if gi_cot(&apdus, Cot::Act) {
                activation = Some(Activation::default());
            }
            continue;
        }
        if p.payload.is_empty() {
            continue;
        }
        let Ok(apdus) = split_apdus(&p.payload) else { continue };
        let mut flagged = false;

        if let Some(act) = activation.as_mut() {
            let con = gi_cot(&apdus, Cot::ActCon);
            let term = gi_cot(&apdus, Cot::ActTerm);
            if con || term {
                let end = p.tcp.seq.wrapping_add(p.payload.len() as u32);
                // A copy of an earlier segment the victim has not yet fully
                // acknowledged is an ordinary retransmission.
                let retransmission = act.responses.iter().any(|(s, bytes, _)| {
                    *s == p.tcp.seq && *bytes == p.payload && victim_ack.is_none_or(|a| seq_lt(a, end))
                });
                if !retransmission {
                    let earlier: Vec<usize> = act.responses.iter().map(|r| r.2).collect();
                    act.responses.push((p.tcp.seq, p.payload.clone(), ev.record_index));
                    act.confirmations += usize::from(con);
                    act.terminations += usize::from(term);
                    if !act.alerted && (act.confirmations > 1 || act.terminations > 1) {
                        act.alerted = true;
                        flagged = true;
                        out.push(alert(
                            RuleId::R6Iec104DuplicateResponse,
                            stream,
                            ev,
                            earlier,
                            format!(
                                "interrogation answered twice ({} confirmations, {} terminations)",
                                act.confirmations, act.terminations
                            ),
                        ));
                    }
                }
            }
        }

        for a in &apdus {
            let (Apci::I { ns, .. }, Some(asdu)) = (&a.apci, &a.asdu) else { continue };
            seen.remove(&seq_add(*ns, (SEQ_MODULO / 2) as u16));
            match seen.get(ns) {
                Some((prev, rec)) if prev != asdu => {
                    if !flagged {
                        flagged = true;
                        out.push(alert(
                            RuleId::R6Iec104DuplicateResponse,
                            stream,
                            ev,
                            vec![*rec],
                            format!("N(S)={ns} reused with different ASDU ({} vs {})", asdu.type_id.mnemonic(), prev.type_id.mnemonic()),
                        ));
                    }
                }
                Some(_) => {}
                None => {
                    seen.insert(*ns, (asdu.clone(), ev.record_index));
                }
            }
        }
    }
    out
}

/// R7: server-direction TTL differing from the stream's modal TTL, or an
/// IP ID outside the server's counter progression.
pub fn rule_ttl_ipid(stream: &Stream, cfg: &DetectConfig) -> Vec<Alert> {
    let server: Vec<&StreamEvent> = stream.events.iter().filter(|e| e.dir == Direction::ToClient).collect();
    let mut ttl_counts: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for (i, e) in server.iter().enumerate() {
        ttl_counts.entry(e.packet.ip.ttl).or_insert((0, i)).0 += 1;
    }
    // Most frequent TTL; ties go to the one seen first.
    let modal = ttl_counts.iter().max_by_key(|(_, &(n, first))| (n, std::cmp::Reverse(first))).map(|(t, _)| *t);

    let mut out = Vec::new();
    let mut last_id: Option<u16> = None;
    for e in server {
        let p = &e.packet;
        let mut reasons = Vec::new();
        if cfg.ttl_exact && modal.is_some_and(|m| m != p.ip.ttl) {
            reasons.push(format!("TTL {} differs from {}", p.ip.ttl, modal.unwrap_or_default()));
        }
        if let Some(band) = cfg.ipid_band {
            match last_id {
                Some(prev) => {
                    let step = p.ip.identification.wrapping_sub(prev);
                    if step == 0 || step > band {
                        reasons.push(format!("IP ID {} jumps {step} from {prev}", p.ip.identification));
                    } else {
                        last_id = Some(p.ip.identification);
                    }
                }
                None => last_id = Some(p.ip.identification),
            }
        }
        if !reasons.is_empty() {
            out.push(alert(RuleId::R7TtlIpIdAnomaly, stream, e, Vec::new(), reasons.join("; ")));
        }
    }
    out
}
