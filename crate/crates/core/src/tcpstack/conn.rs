use std::collections::VecDeque;
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::simnet::SimTime;
use crate::wire::{TcpFlags, DEFAULT_WINDOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FourTuple {
    pub local_ip: Ipv4Addr,
    pub local_port: u16,
    pub remote_ip: Ipv4Addr,
    pub remote_port: u16,
}

impl FourTuple {
    pub fn reversed(self) -> FourTuple {
        FourTuple {
            local_ip: self.remote_ip,
            local_port: self.remote_port,
            remote_ip: self.local_ip,
            remote_port: self.local_port,
        }
    }
}

impl fmt::Display for FourTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{} <-> {}:{}", self.local_ip, self.local_port, self.remote_ip, self.remote_port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TcpState {
    Listen,
    SynSent,
    SynReceived,
    Established,
    FinWait1,
    FinWait2,
    Closing,
    CloseWait,
    LastAck,
    TimeWait,
    Closed,
}

impl TcpState {
    /// States in which the peer may still send us data.
    fn receiving(self) -> bool {
        matches!(self, TcpState::SynReceived | TcpState::Established | TcpState::FinWait1 | TcpState::FinWait2)
    }

    fn can_send(self) -> bool {
        matches!(self, TcpState::Established | TcpState::CloseWait)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CloseReason {
    /// Orderly FIN exchange.
    Normal,
    /// RST received.
    Reset,
    /// Retransmission limit or idle timeout, or an application-level abort
    /// after a protocol timer.
    Timeout,
    /// RST in answer to our SYN.
    Refused,
}

/// How a receiver treats a segment that starts before `rcv_nxt` but extends
/// beyond it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapPolicy {
    #[default]
    Discard,
    /// Trim the already-received prefix and accept the rest.
    Trim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpConfig {
    pub rto: SimTime,
    pub max_retransmits: u32,
    pub idle_timeout: SimTime,
    pub time_wait: SimTime,
    pub overlap: OverlapPolicy,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            rto: SimTime::from_secs(1),
            max_retransmits: 3,
            idle_timeout: SimTime::from_secs(30),
            time_wait: SimTime::from_secs(2),
            overlap: OverlapPolicy::Discard,
        }
    }
}

/// Transport-level view of a segment (addresses live in the connection).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub window: u16,
    pub payload: Vec<u8>,
}

impl Segment {
    pub fn seq_len(&self) -> u32 {
        self.payload.len() as u32 + u32::from(self.flags.syn()) + u32::from(self.flags.fin())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegmentOutcome {
    /// In-order; carries the bytes handed to the application (may be empty
    /// for a pure ACK or bare FIN).
    Accepted(Vec<u8>),
    DuplicateDiscarded,
    OutOfWindowDiscarded,
    ConnectionClosed,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TcpError {
    #[error("cannot send in state {0:?}")]
    NotSendable(TcpState),
    #[error("payload of {0} bytes exceeds MSS")]
    TooLarge(usize),
}

/// What one inbound segment did to the connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reaction {
    pub outcome: SegmentOutcome,
    pub replies: Vec<Segment>,
    pub became_established: bool,
    pub peer_fin: bool,
    pub closed: Option<CloseReason>,
}

impl Reaction {
    fn new(outcome: SegmentOutcome) -> Self {
        Reaction { outcome, replies: Vec::new(), became_established: false, peer_fin: false, closed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Unacked {
    segment: Segment,
    sent_at: SimTime,
    retries: u32,
}

/// Output of [`TcpConnection::poll`].
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct TimerOutput {
    pub retransmits: Vec<Segment>,
    pub closed: Option<CloseReason>,
}

fn seq_lt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) < 0
}

fn seq_le(a: u32, b: u32) -> bool {
    a == b || seq_lt(a, b)
}

/// One endpoint of a TCP connection.
///
/// In-order delivery only: a segment is accepted iff it starts exactly at
/// `rcv_nxt`, so whichever copy of a sequence range arrives first wins and
/// later copies are discarded. ACK numbers are bookkeeping only and never
/// gate acceptance.
#[derive(Debug, Clone)]
pub struct TcpConnection {
    pub tuple: FourTuple,
    pub state: TcpState,
    pub iss: u32,
    pub snd_una: u32,
    pub snd_nxt: u32,
    pub rcv_nxt: u32,
    pub last_ack_sent: u32,
    pub fin_seen: bool,
    pub close_reason: Option<CloseReason>,
    config: TcpConfig,
    retransmit_queue: VecDeque<Unacked>,
    last_activity: SimTime,
    time_wait_since: Option<SimTime>,
}

impl TcpConnection {
    fn blank(tuple: FourTuple, iss: u32, config: TcpConfig, now: SimTime) -> Self {
        TcpConnection {
            tuple,
            state: TcpState::Closed,
            iss,
            snd_una: iss,
            snd_nxt: iss,
            rcv_nxt: 0,
            last_ack_sent: 0,
            fin_seen: false,
            close_reason: None,
            config,
            retransmit_queue: VecDeque::new(),
            last_activity: now,
            time_wait_since: None,
        }
    }

    /// Active open: returns the connection in SynSent and the SYN to send.
    pub fn connect(tuple: FourTuple, iss: u32, config: TcpConfig, now: SimTime) -> (Self, Segment) {
        let mut conn = Self::blank(tuple, iss, config, now);
        conn.state = TcpState::SynSent;
        let syn = conn.emit(TcpFlags::SYN, Vec::new(), now);
        (conn, syn)
    }

    /// Passive open from a listening socket receiving `syn`.
    pub fn accept(tuple: FourTuple, iss: u32, syn: &Segment, config: TcpConfig, now: SimTime) -> (Self, Segment) {
        let mut conn = Self::blank(tuple, iss, config, now);
        conn.state = TcpState::SynReceived;
        conn.rcv_nxt = syn.seq.wrapping_add(1);
        let syn_ack = conn.emit(TcpFlags::SYN | TcpFlags::ACK, Vec::new(), now);
        (conn, syn_ack)
    }

    pub fn is_closed(&self) -> bool {
        self.state == TcpState::Closed
    }

    pub fn config(&self) -> &TcpConfig {
        &self.config
    }

    pub fn unacked_segments(&self) -> usize {
        self.retransmit_queue.len()
    }

    fn emit(&mut self, flags: TcpFlags, payload: Vec<u8>, now: SimTime) -> Segment {
        let flags = if self.state == TcpState::SynSent { flags } else { flags | TcpFlags::ACK };
        let segment = Segment {
            seq: self.snd_nxt,
            ack: if flags.ack() { self.rcv_nxt } else { 0 },
            flags,
            window: DEFAULT_WINDOW,
            payload,
        };
        let len = segment.seq_len();
        self.snd_nxt = self.snd_nxt.wrapping_add(len);
        if flags.ack() {
            self.last_ack_sent = self.rcv_nxt;
        }
        if len > 0 {
            self.retransmit_queue.push_back(Unacked { segment: segment.clone(), sent_at: now, retries: 0 });
            self.last_activity = now;
        }
        segment
    }

    fn pure_ack(&mut self) -> Segment {
        self.last_ack_sent = self.rcv_nxt;
        Segment { seq: self.snd_nxt, ack: self.rcv_nxt, flags: TcpFlags::ACK, window: DEFAULT_WINDOW, payload: Vec::new() }
    }

    /// Send application data. `fin` closes our direction after the payload.
    pub fn send(&mut self, payload: Vec<u8>, push: bool, fin: bool, now: SimTime) -> Result<Segment, TcpError> {
        if !self.state.can_send() {
            return Err(TcpError::NotSendable(self.state));
        }
        if payload.len() > crate::wire::MSS {
            return Err(TcpError::TooLarge(payload.len()));
        }
        let mut flags = TcpFlags::ACK;
        if push && !payload.is_empty() {
            flags |= TcpFlags::PSH;
        }
        if fin {
            flags |= TcpFlags::FIN;
            self.state = match self.state {
                TcpState::Established => TcpState::FinWait1,
                _ => TcpState::LastAck,
            };
        }
        Ok(self.emit(flags, payload, now))
    }

    /// Orderly close. Idempotent: returns `None` when our FIN is already out.
    pub fn close(&mut self, now: SimTime) -> Option<Segment> {
        match self.state {
            TcpState::Established | TcpState::CloseWait => self.send(Vec::new(), false, true, now).ok(),
            TcpState::SynSent | TcpState::SynReceived | TcpState::Listen => {
                self.shutdown(CloseReason::Normal);
                None
            }
            _ => None,
        }
    }

    /// Drop the connection without telling the peer.
    pub fn abort(&mut self, reason: CloseReason) {
        if !self.is_closed() {
            self.shutdown(reason);
        }
    }

    fn shutdown(&mut self, reason: CloseReason) {
        self.state = TcpState::Closed;
        self.close_reason = Some(reason);
        self.retransmit_queue.clear();
        self.time_wait_since = None;
    }

    fn process_ack(&mut self, ack: u32) {
        if seq_lt(self.snd_una, ack) && seq_le(ack, self.snd_nxt) {
            self.snd_una = ack;
            self.retransmit_queue.retain(|u| {
                let end = u.segment.seq.wrapping_add(u.segment.seq_len());
                !seq_le(end, ack)
            });
        }
    }

    fn our_fin_acked(&self) -> bool {
        self.snd_una == self.snd_nxt
    }

    /// Classify and apply one inbound segment.
    pub fn on_segment(&mut self, seg: &Segment, now: SimTime) -> Reaction {
        if self.is_closed() {
            return Reaction::new(SegmentOutcome::ConnectionClosed);
        }

        if seg.flags.rst() {
            let acceptable = match self.state {
                TcpState::SynSent => seg.flags.ack() && seg.ack == self.snd_nxt,
                _ => seg.seq == self.rcv_nxt,
            };
            if !acceptable {
                return Reaction::new(SegmentOutcome::OutOfWindowDiscarded);
            }
            let reason = if self.state == TcpState::SynSent { CloseReason::Refused } else { CloseReason::Reset };
            self.shutdown(reason);
            let mut r = Reaction::new(SegmentOutcome::ConnectionClosed);
            r.closed = Some(reason);
            return r;
        }

        if self.state == TcpState::SynSent {
            if seg.flags.syn() && seg.flags.ack() && seg.ack == self.snd_nxt {
                self.rcv_nxt = seg.seq.wrapping_add(1);
                self.process_ack(seg.ack);
                self.state = TcpState::Established;
                self.last_activity = now;
                let mut r = Reaction::new(SegmentOutcome::Accepted(Vec::new()));
                r.became_established = true;
                r.replies.push(self.pure_ack());
                return r;
            }
            return Reaction::new(SegmentOutcome::OutOfWindowDiscarded);
        }

        if seg.flags.syn() {
            // Retransmitted SYN or SYN-ACK: re-acknowledge.
            let mut r = Reaction::new(SegmentOutcome::DuplicateDiscarded);
            r.replies.push(self.pure_ack());
            return r;
        }

        let mut reaction = Reaction::new(SegmentOutcome::Accepted(Vec::new()));
        if seg.flags.ack() {
            self.process_ack(seg.ack);
            if self.state == TcpState::SynReceived && self.snd_una == self.snd_nxt {
                self.state = TcpState::Established;
                reaction.became_established = true;
            }
            if self.our_fin_acked() {
                match self.state {
                    TcpState::FinWait1 => self.state = TcpState::FinWait2,
                    TcpState::Closing => self.enter_time_wait(now),
                    TcpState::LastAck => {
                        self.shutdown(CloseReason::Normal);
                        reaction.closed = Some(CloseReason::Normal);
                        return reaction;
                    }
                    _ => {}
                }
            }
        }

        let len = seg.seq_len();
        if len == 0 {
            return reaction;
        }

        let mut seq = seg.seq;
        let mut payload: &[u8] = &seg.payload;
        let end = seg.seq.wrapping_add(len);
        if seq != self.rcv_nxt {
            if seq_le(end, self.rcv_nxt) {
                reaction.outcome = SegmentOutcome::DuplicateDiscarded;
                reaction.replies.push(self.pure_ack());
                return reaction;
            }
            let partial = seq_lt(seq, self.rcv_nxt);
            if partial && self.config.overlap == OverlapPolicy::Trim && self.state.receiving() {
                let skip = self.rcv_nxt.wrapping_sub(seq) as usize;
                payload = &payload[skip.min(payload.len())..];
                seq = self.rcv_nxt;
            } else {
                reaction.outcome = SegmentOutcome::OutOfWindowDiscarded;
                reaction.replies.push(self.pure_ack());
                return reaction;
            }
        }
        debug_assert_eq!(seq, self.rcv_nxt);

        if !self.state.receiving() {
            // Peer already sent FIN; anything new is beyond its stream end.
            reaction.outcome = SegmentOutcome::OutOfWindowDiscarded;
            reaction.replies.push(self.pure_ack());
            return reaction;
        }

        self.rcv_nxt = self.rcv_nxt.wrapping_add(payload.len() as u32);
        self.last_activity = now;
        if seg.flags.fin() {
            self.rcv_nxt = self.rcv_nxt.wrapping_add(1);
            self.fin_seen = true;
            reaction.peer_fin = true;
            match self.state {
                TcpState::SynReceived | TcpState::Established => self.state = TcpState::CloseWait,
                TcpState::FinWait1 if self.our_fin_acked() => self.enter_time_wait(now),
                TcpState::FinWait1 => self.state = TcpState::Closing,
                TcpState::FinWait2 => self.enter_time_wait(now),
                _ => {}
            }
        }
        reaction.outcome = SegmentOutcome::Accepted(payload.to_vec());
        reaction.replies.push(self.pure_ack());
        reaction
    }

    fn enter_time_wait(&mut self, now: SimTime) {
        self.state = TcpState::TimeWait;
        self.time_wait_since = Some(now);
        self.retransmit_queue.clear();
    }

    /// Earliest instant at which [`poll`](Self::poll) has work to do.
    pub fn next_deadline(&self) -> Option<SimTime> {
        if self.is_closed() {
            return None;
        }
        if let Some(since) = self.time_wait_since {
            return Some(since + self.config.time_wait);
        }
        let retransmit = self.retransmit_queue.iter().map(|u| u.sent_at + self.config.rto).min();
        let idle = self.last_activity + self.config.idle_timeout;
        Some(retransmit.map_or(idle, |r| r.min(idle)))
    }

    /// Run expired timers: retransmission, retry exhaustion, idle timeout and
    /// TIME-WAIT expiry. Timeouts close silently.
    pub fn poll(&mut self, now: SimTime) -> TimerOutput {
        let mut out = TimerOutput::default();
        if self.is_closed() {
            return out;
        }
        if let Some(since) = self.time_wait_since {
            if now >= since + self.config.time_wait {
                self.shutdown(CloseReason::Normal);
                out.closed = Some(CloseReason::Normal);
            }
            return out;
        }
        let rto = self.config.rto;
        let max = self.config.max_retransmits;
        let rcv_nxt = self.rcv_nxt;
        let mut exhausted = false;
        for entry in self.retransmit_queue.iter_mut() {
            if now < entry.sent_at + rto {
                continue;
            }
            if entry.retries >= max {
                exhausted = true;
                break;
            }
            entry.retries += 1;
            entry.sent_at = now;
            let mut seg = entry.segment.clone();
            if seg.flags.ack() {
                seg.ack = rcv_nxt;
            }
            out.retransmits.push(seg);
        }
        if exhausted || now >= self.last_activity + self.config.idle_timeout {
            self.shutdown(CloseReason::Timeout);
            out.retransmits.clear();
            out.closed = Some(CloseReason::Timeout);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: SimTime = SimTime::ZERO;

    fn tuple() -> FourTuple {
        FourTuple {
            local_ip: Ipv4Addr::new(10, 0, 0, 1),
            local_port: 40000,
            remote_ip: Ipv4Addr::new(10, 0, 0, 2),
            remote_port: 80,
        }
    }

    fn established_pair() -> (TcpConnection, TcpConnection) {
        let (mut client, syn) = TcpConnection::connect(tuple(), 100, TcpConfig::default(), T0);
        let (mut server, syn_ack) = TcpConnection::accept(tuple().reversed(), 5000, &syn, TcpConfig::default(), T0);
        let r = client.on_segment(&syn_ack, T0);
        assert!(r.became_established);
        let r = server.on_segment(&r.replies[0], T0);
        assert!(r.became_established);
        (client, server)
    }

    #[test]
    fn handshake_reaches_established() {
        let (client, server) = established_pair();
        assert_eq!(client.state, TcpState::Established);
        assert_eq!(server.state, TcpState::Established);
        assert_eq!(client.snd_nxt, 101);
        assert_eq!(server.rcv_nxt, 101);
    }

    #[test]
    fn rst_to_syn_is_refused() {
        let (mut client, syn) = TcpConnection::connect(tuple(), 100, TcpConfig::default(), T0);
        let rst = Segment { seq: 0, ack: syn.seq + 1, flags: TcpFlags::RST | TcpFlags::ACK, window: 0, payload: vec![] };
        let r = client.on_segment(&rst, T0);
        assert_eq!(r.closed, Some(CloseReason::Refused));
        assert_eq!(client.state, TcpState::Closed);
    }

    #[test]
    fn send_arithmetic() {
        let (mut client, _) = established_pair();
        client.snd_nxt = 1000;
        client.snd_una = 1000;
        let seg = client.send(vec![0; 100], true, false, T0).unwrap();
        assert_eq!(seg.seq, 1000);
        assert_eq!(client.snd_nxt, 1100);
        assert_eq!(seg.flags, TcpFlags::PSH | TcpFlags::ACK);

        let seg = client.send(vec![], true, false, T0).unwrap();
        assert_eq!(seg.flags, TcpFlags::ACK);
        assert_eq!(client.snd_nxt, 1100);

        let seg = client.send(vec![0; 10], true, true, T0).unwrap();
        assert!(seg.flags.fin());
        assert_eq!(client.snd_nxt, 1111);
        assert_eq!(client.send(vec![1], true, false, T0), Err(TcpError::NotSendable(TcpState::FinWait1)));
    }

    #[test]
    fn first_arrival_wins() {
        let (mut client, server) = established_pair();
        let forged = Segment { seq: server.snd_nxt, ack: client.snd_nxt, flags: TcpFlags::PSH | TcpFlags::ACK, window: 1, payload: b"FORGED".to_vec() };
        let legit = Segment { payload: b"LEGIT!".to_vec(), ..forged.clone() };
        assert_eq!(client.on_segment(&forged, T0).outcome, SegmentOutcome::Accepted(b"FORGED".to_vec()));
        let r = client.on_segment(&legit, T0);
        assert_eq!(r.outcome, SegmentOutcome::DuplicateDiscarded);
        assert_eq!(r.replies[0].ack, client.rcv_nxt);
    }

    #[test]
    fn in_order_segments_concatenate() {
        let (mut client, server) = established_pair();
        let a = Segment { seq: server.snd_nxt, ack: 0, flags: TcpFlags::ACK, window: 1, payload: b"ab".to_vec() };
        let b = Segment { seq: server.snd_nxt + 2, payload: b"cd".to_vec(), ..a.clone() };
        let mut got = Vec::new();
        for s in [&a, &b] {
            if let SegmentOutcome::Accepted(d) = client.on_segment(s, T0).outcome {
                got.extend(d);
            }
        }
        assert_eq!(got, b"abcd");
    }

    #[test]
    fn partial_overlap_discard_and_trim() {
        let (mut client, server) = established_pair();
        let s0 = server.snd_nxt;
        let first = Segment { seq: s0, ack: 0, flags: TcpFlags::ACK, window: 1, payload: b"abc".to_vec() };
        let overlap = Segment { seq: s0, payload: b"XYZdef".to_vec(), ..first.clone() };
        client.on_segment(&first, T0);
        assert_eq!(client.clone().on_segment(&overlap, T0).outcome, SegmentOutcome::OutOfWindowDiscarded);
        client.config.overlap = OverlapPolicy::Trim;
        assert_eq!(client.on_segment(&overlap, T0).outcome, SegmentOutcome::Accepted(b"def".to_vec()));
    }

    #[test]
    fn data_beyond_rcv_nxt_discarded() {
        let (mut client, server) = established_pair();
        let gap = Segment { seq: server.snd_nxt + 10, ack: 0, flags: TcpFlags::ACK, window: 1, payload: b"x".to_vec() };
        assert_eq!(client.on_segment(&gap, T0).outcome, SegmentOutcome::OutOfWindowDiscarded);
    }

    #[test]
    fn forged_fin_then_legit_data() {
        let (mut client, server) = established_pair();
        let forged = Segment { seq: server.snd_nxt, ack: 0, flags: TcpFlags::FIN | TcpFlags::ACK, window: 1, payload: b"page".to_vec() };
        let r = client.on_segment(&forged, T0);
        assert!(r.peer_fin);
        assert_eq!(client.state, TcpState::CloseWait);
        let legit = Segment { seq: server.snd_nxt, flags: TcpFlags::PSH | TcpFlags::ACK, payload: b"legitimate page".to_vec(), ..forged };
        assert_eq!(client.on_segment(&legit, T0).outcome, SegmentOutcome::OutOfWindowDiscarded);
        client.close(T0).unwrap();
        client.abort(CloseReason::Normal);
        assert_eq!(client.on_segment(&legit, T0).outcome, SegmentOutcome::ConnectionClosed);
    }

    #[test]
    fn orderly_close_both_sides() {
        let (mut client, mut server) = established_pair();
        let fin = client.close(T0).unwrap();
        assert!(client.close(T0).is_none(), "double close is idempotent");
        let r = server.on_segment(&fin, T0);
        assert_eq!(server.state, TcpState::CloseWait);
        client.on_segment(&r.replies[0], T0);
        assert_eq!(client.state, TcpState::FinWait2);
        let fin2 = server.close(T0).unwrap();
        let r = client.on_segment(&fin2, T0);
        assert_eq!(client.state, TcpState::TimeWait);
        let r = server.on_segment(&r.replies[0], T0);
        assert_eq!(r.closed, Some(CloseReason::Normal));
        let out = client.poll(SimTime::from_secs(5));
        assert_eq!(out.closed, Some(CloseReason::Normal));
    }

    #[test]
    fn retransmit_then_abort() {
        let (_, mut server) = established_pair();
        server.send(b"data".to_vec(), true, false, T0).unwrap();
        for i in 1..=3u64 {
            let out = server.poll(SimTime::from_secs(i));
            assert_eq!(out.retransmits.len(), 1);
            assert!(out.closed.is_none());
        }
        let out = server.poll(SimTime::from_secs(4));
        assert_eq!(out.closed, Some(CloseReason::Timeout));
        assert_eq!(server.close_reason, Some(CloseReason::Timeout));
    }

    #[test]
    fn idle_timeout_closes() {
        let (mut client, _) = established_pair();
        assert_eq!(client.next_deadline(), Some(SimTime::from_secs(30)));
        assert!(client.poll(SimTime::from_secs(29)).closed.is_none());
        assert_eq!(client.poll(SimTime::from_secs(30)).closed, Some(CloseReason::Timeout));
    }
}
