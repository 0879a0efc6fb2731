use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conn::{CloseReason, FourTuple, Reaction, Segment, SegmentOutcome, TcpConfig, TcpConnection, TcpState};
use crate::simnet::{Host, HostCtx, HostInfo, Iface, SimTime, Topology};
use crate::wire::{self, MacAddr, SegmentSpec, TcpFlags, WirePacket, DEFAULT_TTL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnId(pub u32);

impl fmt::Display for ConnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "conn#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppEvent {
    Connected,
    Accepted(FourTuple),
    Data(Vec<u8>),
    PeerClosed,
    Closed(CloseReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Connect { id: ConnId, remote_ip: Ipv4Addr, remote_port: u16 },
    Send { conn: ConnId, data: Vec<u8>, push: bool, fin: bool },
    Close(ConnId),
    Abort(ConnId, CloseReason),
    Listen(u16),
    Timer { delay: SimTime, token: u64 },
    InjectRaw(Vec<u8>),
    Defer { delay: SimTime, command: Box<Command> },
}

/// Application handle: queues commands that the stack runs after the
/// callback returns.
pub struct AppIo<'a> {
    now: SimTime,
    local_ip: Ipv4Addr,
    processing_delay: SimTime,
    next_conn: &'a mut u32,
    conns: &'a BTreeMap<ConnId, TcpConnection>,
    commands: Vec<Command>,
}

impl AppIo<'_> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn local_ip(&self) -> Ipv4Addr {
        self.local_ip
    }

    pub fn processing_delay(&self) -> SimTime {
        self.processing_delay
    }

    pub fn connection(&self, conn: ConnId) -> Option<&TcpConnection> {
        self.conns.get(&conn)
    }

    pub fn connect(&mut self, remote_ip: Ipv4Addr, remote_port: u16) -> ConnId {
        let id = ConnId(*self.next_conn);
        *self.next_conn += 1;
        self.commands.push(Command::Connect { id, remote_ip, remote_port });
        id
    }

    pub fn send(&mut self, conn: ConnId, data: Vec<u8>, fin: bool) {
        self.commands.push(Command::Send { conn, data, push: true, fin });
    }

    pub fn close(&mut self, conn: ConnId) {
        self.commands.push(Command::Close(conn));
    }

    /// Drop the connection without sending anything.
    pub fn abort_silently(&mut self, conn: ConnId, reason: CloseReason) {
        self.commands.push(Command::Abort(conn, reason));
    }

    pub fn listen(&mut self, port: u16) {
        self.commands.push(Command::Listen(port));
    }

    /// Application timer; `token` must fit in 56 bits.
    pub fn set_timer(&mut self, delay: SimTime, token: u64) {
        self.commands.push(Command::Timer { delay, token });
    }

    pub fn inject_raw(&mut self, frame: Vec<u8>) {
        self.commands.push(Command::InjectRaw(frame));
    }

    /// Run `command` after `delay`.
    pub fn defer(&mut self, delay: SimTime, command: Command) {
        if delay == SimTime::ZERO {
            self.commands.push(command);
        } else {
            self.commands.push(Command::Defer { delay, command: Box::new(command) });
        }
    }
}

pub trait App: 'static {
    fn start(&mut self, _io: &mut AppIo) {}
    fn on_event(&mut self, io: &mut AppIo, conn: ConnId, event: AppEvent);
    fn on_timer(&mut self, _io: &mut AppIo, _token: u64) {}
    /// Frame copy received on the mirror tap.
    fn on_tap(&mut self, _io: &mut AppIo, _frame: &[u8]) {}
}

#[derive(Debug, Clone)]
pub struct HostConfig {
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
    pub processing_delay: SimTime,
    pub neighbors: BTreeMap<Ipv4Addr, MacAddr>,
    pub tcp: TcpConfig,
    pub seed: u64,
}

impl HostConfig {
    /// Config for `host` with every other topology host as a neighbor.
    pub fn from_topology(topology: &Topology, host: &HostInfo, seed: u64) -> Self {
        HostConfig {
            ip: host.ip,
            mac: host.mac,
            processing_delay: host.processing_delay,
            neighbors: topology.hosts.iter().map(|h| (h.ip, h.mac)).collect(),
            tcp: TcpConfig::default(),
            seed,
        }
    }
}

/// One classified inbound segment or stack-originated control segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackEvent {
    pub time: SimTime,
    pub conn: Option<ConnId>,
    pub tuple: FourTuple,
    pub seq: u32,
    pub flags: TcpFlags,
    pub len: usize,
    pub kind: StackEventKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StackEventKind {
    Received(SegmentOutcome),
    BadChecksum,
    RstSent,
    Retransmitted,
    Closed(CloseReason),
}

const KIND_CONN: u64 = 1;
const KIND_APP: u64 = 2;
const KIND_DEFER: u64 = 3;
const VALUE_MASK: u64 = (1 << 56) - 1;

fn token(kind: u64, value: u64) -> u64 {
    (kind << 56) | (value & VALUE_MASK)
}

struct Stack {
    cfg: HostConfig,
    rng: ChaCha8Rng,
    ip_id: u16,
    next_ephemeral: u16,
    next_conn: u32,
    conns: BTreeMap<ConnId, TcpConnection>,
    by_tuple: BTreeMap<FourTuple, ConnId>,
    active: BTreeSet<ConnId>,
    listening: BTreeSet<u16>,
    armed: BTreeMap<ConnId, SimTime>,
    deferred: BTreeMap<u64, Command>,
    next_deferred: u64,
    log: Vec<StackEvent>,
}

/// A host running a TCP stack and one application.
pub struct TcpHost<A: App> {
    pub app: A,
    stack: Stack,
    pending: VecDeque<(ConnId, AppEvent)>,
}

impl<A: App> TcpHost<A> {
    pub fn new(cfg: HostConfig, app: A) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let ip_id = rng.gen();
        let next_ephemeral = rng.gen_range(49152..60000);
        TcpHost {
            app,
            stack: Stack {
                cfg,
                rng,
                ip_id,
                next_ephemeral,
                next_conn: 0,
                conns: BTreeMap::new(),
                by_tuple: BTreeMap::new(),
                active: BTreeSet::new(),
                listening: BTreeSet::new(),
                armed: BTreeMap::new(),
                deferred: BTreeMap::new(),
                next_deferred: 0,
                log: Vec::new(),
            },
            pending: VecDeque::new(),
        }
    }

    pub fn config(&self) -> &HostConfig {
        &self.stack.cfg
    }

    pub fn connection(&self, conn: ConnId) -> Option<&TcpConnection> {
        self.stack.conns.get(&conn)
    }

    pub fn connections(&self) -> impl Iterator<Item = (ConnId, &TcpConnection)> {
        self.stack.conns.iter().map(|(id, c)| (*id, c))
    }

    pub fn stack_log(&self) -> &[StackEvent] {
        &self.stack.log
    }

    fn with_app(&mut self, ctx: &mut HostCtx, f: impl FnOnce(&mut A, &mut AppIo)) {
        let mut io = AppIo {
            now: ctx.now(),
            local_ip: self.stack.cfg.ip,
            processing_delay: self.stack.cfg.processing_delay,
            next_conn: &mut self.stack.next_conn,
            conns: &self.stack.conns,
            commands: Vec::new(),
        };
        f(&mut self.app, &mut io);
        let commands = io.commands;
        for command in commands {
            self.stack.execute(ctx, command, &mut self.pending);
        }
        self.drain(ctx);
    }

    fn drain(&mut self, ctx: &mut HostCtx) {
        while let Some((conn, event)) = self.pending.pop_front() {
            let mut io = AppIo {
                now: ctx.now(),
                local_ip: self.stack.cfg.ip,
                processing_delay: self.stack.cfg.processing_delay,
                next_conn: &mut self.stack.next_conn,
                conns: &self.stack.conns,
                commands: Vec::new(),
            };
            self.app.on_event(&mut io, conn, event);
            let commands = io.commands;
            for command in commands {
                self.stack.execute(ctx, command, &mut self.pending);
            }
        }
        self.stack.rearm_all(ctx);
    }
}

impl Stack {
    fn transmit(&mut self, ctx: &mut HostCtx, tuple: FourTuple, seg: &Segment) {
        let dst_mac = self.cfg.neighbors.get(&tuple.remote_ip).copied().unwrap_or(MacAddr::BROADCAST);
        self.ip_id = self.ip_id.wrapping_add(1);
        let spec = SegmentSpec {
            src_mac: self.cfg.mac,
            dst_mac,
            src_ip: tuple.local_ip,
            dst_ip: tuple.remote_ip,
            src_port: tuple.local_port,
            dst_port: tuple.remote_port,
            seq: seg.seq,
            ack: seg.ack,
            flags: seg.flags,
            ip_id: self.ip_id,
            ttl: DEFAULT_TTL,
            window: seg.window,
        };
        if let Ok(packet) = WirePacket::build(&spec, seg.payload.clone()) {
            if let Ok(bytes) = wire::encode(&packet) {
                ctx.transmit(bytes);
            }
        }
    }

    fn record(&mut self, now: SimTime, conn: Option<ConnId>, tuple: FourTuple, seg: &Segment, kind: StackEventKind) {
        self.log.push(StackEvent { time: now, conn, tuple, seq: seg.seq, flags: seg.flags, len: seg.payload.len(), kind });
    }

    fn finish(&mut self, now: SimTime, id: ConnId, reason: CloseReason, pending: &mut VecDeque<(ConnId, AppEvent)>) {
        if let Some(conn) = self.conns.get(&id) {
            let tuple = conn.tuple;
            self.by_tuple.remove(&tuple);
            self.armed.remove(&id);
            self.log.push(StackEvent {
                time: now,
                conn: Some(id),
                tuple,
                seq: conn.snd_nxt,
                flags: TcpFlags::default(),
                len: 0,
                kind: StackEventKind::Closed(reason),
            });
            pending.push_back((id, AppEvent::Closed(reason)));
        }
    }

    fn execute(&mut self, ctx: &mut HostCtx, command: Command, pending: &mut VecDeque<(ConnId, AppEvent)>) {
        let now = ctx.now();
        match command {
            Command::Connect { id, remote_ip, remote_port } => {
                let local_port = self.next_ephemeral;
                self.next_ephemeral = if self.next_ephemeral >= 65000 { 49152 } else { self.next_ephemeral + 1 };
                let tuple = FourTuple { local_ip: self.cfg.ip, local_port, remote_ip, remote_port };
                let iss = self.rng.gen();
                let (conn, syn) = TcpConnection::connect(tuple, iss, self.cfg.tcp, now);
                self.conns.insert(id, conn);
                self.by_tuple.insert(tuple, id);
                self.active.insert(id);
                self.transmit(ctx, tuple, &syn);
            }
            Command::Send { conn, data, push, fin } => {
                let Some(c) = self.conns.get_mut(&conn) else { return };
                let tuple = c.tuple;
                let mut chunks: Vec<Vec<u8>> = data.chunks(wire::MSS).map(<[u8]>::to_vec).collect();
                if chunks.is_empty() {
                    chunks.push(Vec::new());
                }
                let last = chunks.len() - 1;
                let mut segs = Vec::new();
                for (i, chunk) in chunks.into_iter().enumerate() {
                    match c.send(chunk, push, fin && i == last, now) {
                        Ok(seg) => segs.push(seg),
                        Err(_) => break,
                    }
                }
                for seg in segs {
                    self.transmit(ctx, tuple, &seg);
                }
            }
            Command::Close(conn) => {
                let Some(c) = self.conns.get_mut(&conn) else { return };
                let was_closed = c.is_closed();
                let tuple = c.tuple;
                let fin = c.close(now);
                let closed_now = !was_closed && c.is_closed();
                if let Some(seg) = fin {
                    self.transmit(ctx, tuple, &seg);
                }
                if closed_now {
                    self.finish(now, conn, CloseReason::Normal, pending);
                }
            }
            Command::Abort(conn, reason) => {
                let Some(c) = self.conns.get_mut(&conn) else { return };
                if !c.is_closed() {
                    c.abort(reason);
                    self.finish(now, conn, reason, pending);
                }
            }
            Command::Listen(port) => {
                self.listening.insert(port);
            }
            Command::Timer { delay, token: t } => ctx.set_timer(delay, token(KIND_APP, t)),
            Command::InjectRaw(frame) => ctx.transmit(frame),
            Command::Defer { delay, command } => {
                let key = self.next_deferred;
                self.next_deferred += 1;
                self.deferred.insert(key, *command);
                ctx.set_timer(delay, token(KIND_DEFER, key));
            }
        }
    }

    fn rearm_all(&mut self, ctx: &mut HostCtx) {
        let now = ctx.now();
        let ids: Vec<ConnId> = self.conns.keys().copied().collect();
        for id in ids {
            let Some(deadline) = self.conns[&id].next_deadline() else {
                self.armed.remove(&id);
                continue;
            };
            let needs = match self.armed.get(&id) {
                Some(&at) => at < now || deadline < at,
                None => true,
            };
            if needs {
                let at = deadline.max(now);
                self.armed.insert(id, at);
                ctx.set_timer(at.saturating_sub(now), token(KIND_CONN, u64::from(id.0)));
            }
        }
    }

    fn poll_conn(&mut self, ctx: &mut HostCtx, id: ConnId, pending: &mut VecDeque<(ConnId, AppEvent)>) {
        let now = ctx.now();
        if self.armed.get(&id) == Some(&now) {
            self.armed.remove(&id);
        }
        let Some(c) = self.conns.get_mut(&id) else { return };
        let tuple = c.tuple;
        let out = c.poll(now);
        for seg in &out.retransmits {
            self.transmit(ctx, tuple, seg);
            self.record(now, Some(id), tuple, seg, StackEventKind::Retransmitted);
        }
        if let Some(reason) = out.closed {
            self.finish(now, id, reason, pending);
        }
    }

    fn send_rst(&mut self, ctx: &mut HostCtx, tuple: FourTuple, seg: &Segment) {
        let rst = if seg.flags.ack() {
            Segment { seq: seg.ack, ack: 0, flags: TcpFlags::RST, window: 0, payload: Vec::new() }
        } else {
            Segment {
                seq: 0,
                ack: seg.seq.wrapping_add(seg.seq_len()),
                flags: TcpFlags::RST | TcpFlags::ACK,
                window: 0,
                payload: Vec::new(),
            }
        };
        self.transmit(ctx, tuple, &rst);
        self.record(ctx.now(), None, tuple, seg, StackEventKind::RstSent);
    }

    fn on_segment(&mut self, ctx: &mut HostCtx, tuple: FourTuple, seg: Segment, pending: &mut VecDeque<(ConnId, AppEvent)>) {
        let now = ctx.now();
        if let Some(&id) = self.by_tuple.get(&tuple) {
            let c = self.conns.get_mut(&id).expect("tuple maps to a live connection");
            let prior = c.state;
            let reaction: Reaction = c.on_segment(&seg, now);
            for reply in &reaction.replies {
                self.transmit(ctx, tuple, reply);
            }
            self.record(now, Some(id), tuple, &seg, StackEventKind::Received(reaction.outcome.clone()));
            if reaction.became_established {
                let event = if self.active.contains(&id) || prior == TcpState::SynSent {
                    AppEvent::Connected
                } else {
                    AppEvent::Accepted(tuple)
                };
                pending.push_back((id, event));
            }
            if let SegmentOutcome::Accepted(data) = &reaction.outcome {
                if !data.is_empty() {
                    pending.push_back((id, AppEvent::Data(data.clone())));
                }
            }
            if reaction.peer_fin {
                pending.push_back((id, AppEvent::PeerClosed));
            }
            if let Some(reason) = reaction.closed {
                self.finish(now, id, reason, pending);
            }
            return;
        }

        if seg.flags.syn() && !seg.flags.ack() && !seg.flags.rst() && self.listening.contains(&tuple.local_port) {
            let id = ConnId(self.next_conn);
            self.next_conn += 1;
            let iss = self.rng.gen();
            let (conn, syn_ack) = TcpConnection::accept(tuple, iss, &seg, self.cfg.tcp, now);
            self.conns.insert(id, conn);
            self.by_tuple.insert(tuple, id);
            self.transmit(ctx, tuple, &syn_ack);
            self.record(now, Some(id), tuple, &seg, StackEventKind::Received(SegmentOutcome::Accepted(Vec::new())));
            return;
        }

        self.record(now, None, tuple, &seg, StackEventKind::Received(SegmentOutcome::ConnectionClosed));
        if !seg.flags.rst() {
            self.send_rst(ctx, tuple, &seg);
        }
    }
}

impl<A: App> Host for TcpHost<A> {
    fn start(&mut self, ctx: &mut HostCtx) {
        self.with_app(ctx, |app, io| app.start(io));
    }

    fn on_frame(&mut self, ctx: &mut HostCtx, iface: Iface, frame: &[u8]) {
        if iface == Iface::Tap {
            self.with_app(ctx, |app, io| app.on_tap(io, frame));
            return;
        }
        let Ok(decoded) = wire::decode(frame) else { return };
        let p = decoded.packet;
        if p.ip.dst != self.stack.cfg.ip {
            return;
        }
        let tuple = FourTuple {
            local_ip: p.ip.dst,
            local_port: p.tcp.dst_port,
            remote_ip: p.ip.src,
            remote_port: p.tcp.src_port,
        };
        let seg = Segment { seq: p.tcp.seq, ack: p.tcp.ack, flags: p.tcp.flags, window: p.tcp.window, payload: p.payload };
        if !(decoded.ip_checksum_ok && decoded.tcp_checksum_ok) {
            let conn = self.stack.by_tuple.get(&tuple).copied();
            self.stack.record(ctx.now(), conn, tuple, &seg, StackEventKind::BadChecksum);
            return;
        }
        self.stack.on_segment(ctx, tuple, seg, &mut self.pending);
        self.drain(ctx);
    }

    fn on_timer(&mut self, ctx: &mut HostCtx, t: u64) {
        let value = t & VALUE_MASK;
        match t >> 56 {
            KIND_CONN => {
                self.stack.poll_conn(ctx, ConnId(value as u32), &mut self.pending);
                self.drain(ctx);
            }
            KIND_APP => self.with_app(ctx, |app, io| app.on_timer(io, value)),
            KIND_DEFER => {
                if let Some(command) = self.stack.deferred.remove(&value) {
                    self.stack.execute(ctx, command, &mut self.pending);
                    self.drain(ctx);
                }
            }
            _ => {}
        }
    }

    fn accepts(&self, dst: MacAddr) -> bool {
        dst == self.stack.cfg.mac || dst.is_broadcast()
    }
}
