//! Deterministic discrete-event network simulator.
//!
//! One event queue ordered by `(due, seq_no)`; events due at the same instant
//! run in insertion order. Hosts are plain state machines driven
//! synchronously from the loop. Switches forward by learned MAC and copy every
//! forwarded frame to their mirror port, which feeds a separate receive-only
//! `Tap` interface on the mirror host.

mod switch;
mod time;
mod topology;

use std::any::Any;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::rc::Rc;

use thiserror::Error;

pub use switch::{MirrorPort, Port, PortRef, SwitchConfig};
pub use time::SimTime;
pub use topology::{
    build_topology, HostInfo, Link, LinkId, LinkSpec, NodeId, NodeSpec, SwitchId, SwitchSpec, Topology,
    TopologyError, TopologySpec, Vertex,
};

use crate::wire::MacAddr;

pub const DEFAULT_TIME_CAP: SimTime = SimTime::from_secs(60);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event due at {due} scheduled in the past (now {now})")]
    PastEvent { due: SimTime, now: SimTime },
    #[error("no host installed for node {0}")]
    NoHost(NodeId),
}

/// The interface a frame arrived on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Iface {
    Access,
    /// Receive-only mirror tap.
    Tap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventAction {
    /// A frame arrives at a switch port.
    SwitchIngress { switch: SwitchId, port: PortRef, frame: Rc<Vec<u8>> },
    /// A frame arrives at a host interface.
    HostIngress { node: NodeId, iface: Iface, frame: Rc<Vec<u8>> },
    TimerExpiry { node: NodeId, token: u64 },
    /// Host start-up task.
    HostTask { node: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub due: SimTime,
    pub seq_no: u64,
    pub action: EventAction,
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.due, self.seq_no).cmp(&(other.due, other.seq_no))
    }
}

/// Side effects a host requests from inside a callback.
#[derive(Debug)]
enum HostAction {
    Transmit(Vec<u8>),
    Timer { delay: SimTime, token: u64 },
}

/// Handle passed to host callbacks.
pub struct HostCtx<'a> {
    now: SimTime,
    node: NodeId,
    actions: &'a mut Vec<HostAction>,
}

impl HostCtx<'_> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    /// Send a frame out of the access interface now.
    pub fn transmit(&mut self, frame: Vec<u8>) {
        self.actions.push(HostAction::Transmit(frame));
    }

    pub fn set_timer(&mut self, delay: SimTime, token: u64) {
        self.actions.push(HostAction::Timer { delay, token });
    }
}

/// A simulated end host.
pub trait Host: Any {
    fn start(&mut self, _ctx: &mut HostCtx) {}
    fn on_frame(&mut self, ctx: &mut HostCtx, iface: Iface, frame: &[u8]);
    fn on_timer(&mut self, _ctx: &mut HostCtx, _token: u64) {}
    /// Whether the access interface accepts a unicast frame for `dst`.
    fn accepts(&self, dst: MacAddr) -> bool;
}

/// One frame delivered to a host interface.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub time: SimTime,
    pub node: NodeId,
    pub iface: Iface,
    pub frame: Rc<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// The queue drained.
    Quiescent,
    /// Events remained past the time cap.
    TimeCapExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    pub outcome: RunOutcome,
    pub end_time: SimTime,
    pub events_processed: u64,
    /// Frames accepted by a host access interface.
    pub delivered: u64,
    /// Frames reaching a host whose MAC filter rejected them.
    pub dropped: u64,
    /// Copies delivered to mirror taps.
    pub mirrored: u64,
    pub trace: Vec<TraceEntry>,
}

pub struct Simulator {
    topology: Topology,
    hosts: Vec<Option<Box<dyn Host>>>,
    queue: BinaryHeap<Reverse<SimEvent>>,
    now: SimTime,
    next_seq: u64,
    time_cap: SimTime,
    events_processed: u64,
    delivered: u64,
    dropped: u64,
    mirrored: u64,
    trace: Vec<TraceEntry>,
}

impl Simulator {
    pub fn new(topology: Topology) -> Self {
        let hosts = (0..topology.hosts.len()).map(|_| None).collect();
        Simulator {
            topology,
            hosts,
            queue: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            time_cap: DEFAULT_TIME_CAP,
            events_processed: 0,
            delivered: 0,
            dropped: 0,
            mirrored: 0,
            trace: Vec::new(),
        }
    }

    pub fn with_time_cap(mut self, cap: SimTime) -> Self {
        self.time_cap = cap;
        self
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Install a host on a node and queue its start task at the current time.
    pub fn install(&mut self, node: NodeId, host: Box<dyn Host>) {
        self.hosts[node.index()] = Some(host);
        self.push(self.now, EventAction::HostTask { node });
    }

    pub fn host(&self, node: NodeId) -> Option<&dyn Host> {
        self.hosts.get(node.index())?.as_deref()
    }

    pub fn host_as<T: Host>(&self, node: NodeId) -> Option<&T> {
        let host: &dyn Any = self.host(node)?;
        host.downcast_ref::<T>()
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn schedule(&mut self, due: SimTime, action: EventAction) -> Result<(), SimError> {
        if due < self.now {
            return Err(SimError::PastEvent { due, now: self.now });
        }
        self.push(due, action);
        Ok(())
    }

    fn push(&mut self, due: SimTime, action: EventAction) {
        let seq_no = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(SimEvent { due, seq_no, action }));
    }

    /// Process events until the queue is empty or the next event lies beyond
    /// the time cap.
    pub fn run_until_idle(&mut self) -> Result<SimReport, SimError> {
        let outcome = loop {
            let Some(Reverse(next)) = self.queue.peek() else {
                break RunOutcome::Quiescent;
            };
            if next.due > self.time_cap {
                break RunOutcome::TimeCapExceeded;
            }
            let Reverse(event) = self.queue.pop().expect("peeked");
            debug_assert!(event.due >= self.now);
            self.now = event.due;
            self.events_processed += 1;
            self.dispatch(event.action)?;
        };
        Ok(SimReport {
            outcome,
            end_time: self.now,
            events_processed: self.events_processed,
            delivered: self.delivered,
            dropped: self.dropped,
            mirrored: self.mirrored,
            trace: self.trace.clone(),
        })
    }

    fn dispatch(&mut self, action: EventAction) -> Result<(), SimError> {
        match action {
            EventAction::SwitchIngress { switch, port, frame } => {
                self.switch_ingress(switch, port, frame);
                Ok(())
            }
            EventAction::HostIngress { node, iface, frame } => {
                if iface == Iface::Tap {
                    self.mirrored += 1;
                } else {
                    let mut dst = [0u8; 6];
                    dst.copy_from_slice(&frame[0..6]);
                    let host = self.hosts[node.index()].as_ref().ok_or(SimError::NoHost(node))?;
                    if !host.accepts(MacAddr(dst)) {
                        self.dropped += 1;
                        return Ok(());
                    }
                    self.delivered += 1;
                }
                self.trace.push(TraceEntry { time: self.now, node, iface, frame: frame.clone() });
                self.with_host(node, |host, ctx| host.on_frame(ctx, iface, &frame))
            }
            EventAction::TimerExpiry { node, token } => self.with_host(node, |host, ctx| host.on_timer(ctx, token)),
            EventAction::HostTask { node } => self.with_host(node, |host, ctx| host.start(ctx)),
        }
    }

    fn with_host(&mut self, node: NodeId, f: impl FnOnce(&mut dyn Host, &mut HostCtx)) -> Result<(), SimError> {
        let mut host = self.hosts[node.index()].take().ok_or(SimError::NoHost(node))?;
        let mut actions = Vec::new();
        {
            let mut ctx = HostCtx { now: self.now, node, actions: &mut actions };
            f(host.as_mut(), &mut ctx);
        }
        self.hosts[node.index()] = Some(host);
        for action in actions {
            match action {
                HostAction::Transmit(frame) => self.emit_from_host(node, Rc::new(frame)),
                HostAction::Timer { delay, token } => {
                    self.push(self.now + delay, EventAction::TimerExpiry { node, token })
                }
            }
        }
        Ok(())
    }

    fn emit_from_host(&mut self, node: NodeId, frame: Rc<Vec<u8>>) {
        let link_id = self.topology.host(node).access_link;
        let link = self.topology.link(link_id);
        let from = Vertex::Host(node);
        let due = self.now + link.latency_from(from);
        let Vertex::Switch(sw) = link.other_end(from) else {
            unreachable!("validated topology attaches hosts to switches")
        };
        let port = self.topology.switches[sw.0 as usize].port_for_link(link_id).expect("host port exists");
        self.push(due, EventAction::SwitchIngress { switch: sw, port: PortRef::Member(port), frame });
    }

    fn switch_ingress(&mut self, switch: SwitchId, ingress: PortRef, frame: Rc<Vec<u8>>) {
        let egress = self.topology.switches[switch.0 as usize].forward_frame(ingress, &frame);
        let sw = &self.topology.switches[switch.0 as usize];
        let mut pending = Vec::with_capacity(egress.len());
        for port in egress {
            match port {
                PortRef::Mirror => {
                    let m = sw.mirror.expect("mirror egress implies mirror port");
                    pending.push((
                        self.now + m.latency,
                        EventAction::HostIngress { node: m.node, iface: Iface::Tap, frame: frame.clone() },
                    ));
                }
                PortRef::Member(p) => {
                    let Port { link, peer } = sw.ports[p];
                    let due = self.now + self.topology.link(link).latency_from(Vertex::Switch(switch));
                    let action = match peer {
                        Vertex::Host(node) => EventAction::HostIngress { node, iface: Iface::Access, frame: frame.clone() },
                        Vertex::Switch(next) => {
                            let port = self.topology.switches[next.0 as usize]
                                .port_for_link(link)
                                .expect("switch port exists");
                            EventAction::SwitchIngress { switch: next, port: PortRef::Member(port), frame: frame.clone() }
                        }
                    };
                    pending.push((due, action));
                }
            }
        }
        for (due, action) in pending {
            self.push(due, action);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Pinger {
        mac: MacAddr,
        peer: MacAddr,
        send_at_start: bool,
        received: Vec<(SimTime, Iface)>,
    }

    impl Host for Pinger {
        fn start(&mut self, ctx: &mut HostCtx) {
            if self.send_at_start {
                let mut f = vec![0u8; 60];
                f[0..6].copy_from_slice(&self.peer.0);
                f[6..12].copy_from_slice(&self.mac.0);
                ctx.transmit(f);
            }
        }
        fn on_frame(&mut self, ctx: &mut HostCtx, iface: Iface, _frame: &[u8]) {
            self.received.push((ctx.now(), iface));
        }
        fn accepts(&self, dst: MacAddr) -> bool {
            dst == self.mac || dst.is_broadcast()
        }
    }

    struct Noop;
    impl Host for Noop {
        fn on_frame(&mut self, _: &mut HostCtx, _: Iface, _: &[u8]) {}
        fn accepts(&self, _: MacAddr) -> bool {
            true
        }
    }

    fn lab() -> Topology {
        Topology::from_toml(
            r#"
            [[nodes]]
            name = "A"
            ip = "10.0.0.1"
            mac = "02:00:00:00:00:01"
            [[nodes]]
            name = "B"
            ip = "10.0.0.2"
            mac = "02:00:00:00:00:02"
            [[nodes]]
            name = "Tap"
            ip = "10.0.0.3"
            mac = "02:00:00:00:00:03"
            [[switches]]
            name = "sw"
            mirror_port = "Tap"
            mirror_latency_us = 7
            [[links]]
            a = "A"
            b = "sw"
            latency_us = 100
            [[links]]
            a = "B"
            b = "sw"
            latency_us = 150
            [[links]]
            a = "Tap"
            b = "sw"
            latency_us = 100
            "#,
        )
        .unwrap()
    }

    fn run_lab() -> (Simulator, SimReport) {
        let topo = lab();
        let a = topo.host(NodeId(0)).mac;
        let b = topo.host(NodeId(1)).mac;
        let mut sim = Simulator::new(topo);
        sim.install(NodeId(0), Box::new(Pinger { mac: a, peer: b, send_at_start: true, received: vec![] }));
        sim.install(NodeId(1), Box::new(Pinger { mac: b, peer: a, send_at_start: false, received: vec![] }));
        sim.install(NodeId(2), Box::new(Pinger { mac: MacAddr([2, 0, 0, 0, 0, 3]), peer: a, send_at_start: false, received: vec![] }));
        let report = sim.run_until_idle().unwrap();
        (sim, report)
    }

    #[test]
    fn empty_queue_reports_nothing() {
        let mut sim = Simulator::new(lab());
        let report = sim.run_until_idle().unwrap();
        assert_eq!(report.outcome, RunOutcome::Quiescent);
        assert_eq!((report.delivered, report.dropped, report.mirrored), (0, 0, 0));
    }

    #[test]
    fn latency_additivity_and_mirror_copy() {
        let (sim, report) = run_lab();
        let b: &Pinger = sim.host_as(NodeId(1)).unwrap();
        assert_eq!(b.received, vec![(SimTime::from_micros(250), Iface::Access)]);
        let tap: &Pinger = sim.host_as(NodeId(2)).unwrap();
        // Attached hosts are pinned, so nothing floods; only the mirror copy
        // reaches the tap.
        assert_eq!(tap.received, vec![(SimTime::from_micros(107), Iface::Tap)]);
        assert_eq!(report.mirrored, 1);
        assert_eq!(report.dropped, 0);
    }

    #[test]
    fn schedule_rules() {
        let mut sim = Simulator::new(lab());
        sim.install(NodeId(0), Box::new(Noop));
        assert!(sim.schedule(SimTime::ZERO, EventAction::TimerExpiry { node: NodeId(0), token: 1 }).is_ok());
        assert!(sim.schedule(SimTime::from_micros(5), EventAction::TimerExpiry { node: NodeId(0), token: 2 }).is_ok());
        assert!(sim.schedule(SimTime::from_micros(5), EventAction::TimerExpiry { node: NodeId(0), token: 3 }).is_ok());
        sim.schedule(SimTime::from_micros(7), EventAction::HostTask { node: NodeId(0) }).unwrap();
        sim.run_until_idle().unwrap();
        assert_eq!(
            sim.schedule(SimTime::from_micros(3), EventAction::HostTask { node: NodeId(0) }),
            Err(SimError::PastEvent { due: SimTime::from_micros(3), now: SimTime::from_micros(7) })
        );
    }

    #[test]
    fn equal_due_times_run_fifo() {
        let mut heap = BinaryHeap::new();
        for seq_no in [3u64, 1, 2] {
            heap.push(Reverse(SimEvent { due: SimTime::from_micros(5), seq_no, action: EventAction::HostTask { node: NodeId(0) } }));
        }
        let order: Vec<u64> = std::iter::from_fn(|| heap.pop().map(|Reverse(e)| e.seq_no)).collect();
        assert_eq!(order, vec![1, 2, 3]);
    }

    #[test]
    fn time_cap_is_reported() {
        let mut sim = Simulator::new(lab()).with_time_cap(SimTime::from_micros(10));
        sim.install(NodeId(0), Box::new(Noop));
        sim.schedule(SimTime::from_micros(20), EventAction::HostTask { node: NodeId(0) }).unwrap();
        assert_eq!(sim.run_until_idle().unwrap().outcome, RunOutcome::TimeCapExceeded);
    }

    #[test]
    fn deterministic_trace() {
        let (_, r1) = run_lab();
        let (_, r2) = run_lab();
        assert_eq!(r1.trace, r2.trace);
    }
}
