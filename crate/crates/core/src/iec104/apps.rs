use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use super::codec::{decode_apdu, encode_all, Apdu, CodecError, UFunction};
use super::points::PointConfig;
use super::session::{FaultPolicy, Iec104Params, Master, Outstation, SequenceFault, IEC104_PORT};
use crate::simnet::SimTime;
use crate::tcpstack::{App, AppEvent, AppIo, CloseReason, ConnId};

/// Pull complete APDUs off the front of a receive buffer.
fn drain_apdus(buf: &mut Vec<u8>) -> Result<Vec<Apdu>, CodecError> {
    let mut out = Vec::new();
    loop {
        match decode_apdu(buf) {
            Ok((apdu, used)) => {
                out.push(apdu);
                buf.drain(..used);
            }
            Err(CodecError::Truncated | CodecError::LengthOverrun { .. }) => return Ok(out),
            Err(e) => return Err(e),
        }
    }
}

fn send_apdus(io: &mut AppIo, conn: ConnId, apdus: &[Apdu]) {
    if apdus.is_empty() {
        return;
    }
    if let Ok(bytes) = encode_all(apdus) {
        io.send(conn, bytes, false);
    }
}

const PLC_RELEASE: u64 = 1 << 40;
const PLC_PROBE: u64 = 2 << 40;

pub const PROBE_INTERVAL: SimTime = SimTime::from_secs(1);
pub const PROBE_COUNT: u32 = 5;

/// Outstation host application.
#[derive(Debug, Clone)]
pub struct PlcApp {
    pub port: u16,
    pub points: PointConfig,
    pub policy: FaultPolicy,
    pub conn: Option<ConnId>,
    pub session: Option<Outstation>,
    pub fault: Option<(SimTime, SequenceFault)>,
    pub probes_sent: u32,
    pub closed: Option<CloseReason>,
    buffer: Vec<u8>,
    releases: BTreeMap<u64, (ConnId, Vec<Apdu>)>,
    next_release: u64,
}

impl PlcApp {
    pub fn new(points: PointConfig, policy: FaultPolicy) -> Self {
        PlcApp {
            port: IEC104_PORT,
            points,
            policy,
            conn: None,
            session: None,
            fault: None,
            probes_sent: 0,
            closed: None,
            buffer: Vec::new(),
            releases: BTreeMap::new(),
            next_release: 0,
        }
    }

    fn on_fault(&mut self, io: &mut AppIo, conn: ConnId, fault: SequenceFault) {
        self.fault = Some((io.now(), fault));
        match self.policy {
            FaultPolicy::Stall => io.set_timer(PROBE_INTERVAL, PLC_PROBE),
            FaultPolicy::Abort => io.close(conn),
        }
    }
}

impl App for PlcApp {
    fn start(&mut self, io: &mut AppIo) {
        io.listen(self.port);
    }

    fn on_event(&mut self, io: &mut AppIo, conn: ConnId, event: AppEvent) {
        match event {
            AppEvent::Accepted(_) if self.conn.is_none() => {
                self.conn = Some(conn);
                self.session = Some(Outstation::new(self.points.clone()));
            }
            AppEvent::Data(bytes) if self.conn == Some(conn) => {
                self.buffer.extend_from_slice(&bytes);
                let Some(session) = self.session.as_mut() else { return };
                let Ok(apdus) = drain_apdus(&mut self.buffer) else {
                    io.close(conn);
                    return;
                };
                let delay = io.processing_delay();
                for apdu in apdus {
                    let reply = session.on_apdu(&apdu);
                    send_apdus(io, conn, &reply.immediate);
                    for (k, stage) in reply.staged.into_iter().enumerate() {
                        let id = self.next_release;
                        self.next_release += 1;
                        self.releases.insert(id, (conn, stage));
                        io.set_timer(delay * (k as u64 + 1), PLC_RELEASE | id);
                    }
                    if let Some(fault) = reply.fault {
                        self.on_fault(io, conn, fault);
                        break;
                    }
                }
            }
            AppEvent::PeerClosed if self.conn == Some(conn) => io.close(conn),
            AppEvent::Closed(reason) if self.conn == Some(conn) => self.closed = Some(reason),
            _ => {}
        }
    }

    fn on_timer(&mut self, io: &mut AppIo, token: u64) {
        if token & PLC_RELEASE != 0 {
            let Some((conn, frames)) = self.releases.remove(&(token & (PLC_RELEASE - 1))) else { return };
            if self.closed.is_some() {
                return;
            }
            send_apdus(io, conn, &frames);
            if let Some(s) = self.session.as_mut() {
                s.release(&frames);
            }
        } else if token == PLC_PROBE {
            let (Some(conn), None) = (self.conn, self.closed) else { return };
            if self.probes_sent < PROBE_COUNT {
                self.probes_sent += 1;
                send_apdus(io, conn, &[Apdu::u(UFunction::TestFrAct)]);
                io.set_timer(PROBE_INTERVAL, PLC_PROBE);
            } else {
                io.abort_silently(conn, CloseReason::Timeout);
            }
        }
    }
}

const HMI_CONNECT: u64 = 1;
const HMI_T1_START: u64 = 2;
const HMI_T1_STOP: u64 = 3;
const HMI_T2: u64 = 4;
const HMI_HOLD: u64 = 5;
const HMI_T3: u64 = 6;

/// Master host application: start data transfer, interrogate once, hold,
/// stop, close.
#[derive(Debug, Clone)]
pub struct HmiApp {
    pub server: Ipv4Addr,
    pub port: u16,
    pub start_at: SimTime,
    pub hold: SimTime,
    pub session: Master,
    pub conn: Option<ConnId>,
    pub closed: Option<CloseReason>,
    pub closed_at: Option<SimTime>,
    pub received: Vec<(SimTime, Apdu)>,
    pub decode_errors: usize,
    last_rx: SimTime,
    buffer: Vec<u8>,
}

impl HmiApp {
    pub fn new(server: Ipv4Addr, params: Iec104Params, common_address: u16) -> Self {
        HmiApp {
            server,
            port: IEC104_PORT,
            start_at: SimTime::from_millis(10),
            hold: SimTime::from_secs(2),
            session: Master::new(params, common_address),
            conn: None,
            closed: None,
            closed_at: None,
            received: Vec::new(),
            decode_errors: 0,
            last_rx: SimTime::ZERO,
            buffer: Vec::new(),
        }
    }

    fn open(&self) -> Option<ConnId> {
        self.conn.filter(|_| self.closed.is_none())
    }

    fn give_up(&mut self, io: &mut AppIo) {
        if let Some(conn) = self.open() {
            io.abort_silently(conn, CloseReason::Timeout);
        }
    }
}

impl App for HmiApp {
    fn start(&mut self, io: &mut AppIo) {
        io.set_timer(self.start_at, HMI_CONNECT);
    }

    fn on_event(&mut self, io: &mut AppIo, conn: ConnId, event: AppEvent) {
        if self.conn != Some(conn) {
            return;
        }
        match event {
            AppEvent::Connected => {
                let start = self.session.start();
                send_apdus(io, conn, &[start]);
                io.set_timer(self.session.params.t1, HMI_T1_START);
                io.set_timer(self.session.params.t3, HMI_T3);
                self.last_rx = io.now();
            }
            AppEvent::Data(bytes) => {
                self.last_rx = io.now();
                self.buffer.extend_from_slice(&bytes);
                let apdus = match drain_apdus(&mut self.buffer) {
                    Ok(a) => a,
                    Err(_) => {
                        self.decode_errors += 1;
                        self.buffer.clear();
                        return;
                    }
                };
                for apdu in apdus {
                    self.received.push((io.now(), apdu.clone()));
                    let reply = self.session.on_apdu(&apdu, io.now());
                    send_apdus(io, conn, &reply.emit);
                    if reply.started {
                        if let Ok(gi) = self.session.send_gi() {
                            send_apdus(io, conn, &[gi]);
                        }
                    }
                    if reply.gi_complete {
                        io.set_timer(self.hold, HMI_HOLD);
                    }
                    if reply.ack_pending {
                        io.set_timer(self.session.params.t2, HMI_T2);
                    }
                    if reply.stopped {
                        io.close(conn);
                    }
                }
            }
            AppEvent::PeerClosed => io.close(conn),
            AppEvent::Closed(reason) => {
                self.closed = Some(reason);
                self.closed_at = Some(io.now());
            }
            AppEvent::Accepted(_) => {}
        }
    }

    fn on_timer(&mut self, io: &mut AppIo, token: u64) {
        match token {
            HMI_CONNECT => self.conn = Some(io.connect(self.server, self.port)),
            HMI_T1_START if !self.session.startdt_confirmed => self.give_up(io),
            HMI_T1_STOP if !self.session.stopdt_confirmed => self.give_up(io),
            HMI_HOLD => {
                if let Some(conn) = self.open() {
                    let stop = self.session.stop();
                    send_apdus(io, conn, &[stop]);
                    io.set_timer(self.session.params.t1, HMI_T1_STOP);
                }
            }
            HMI_T2 => {
                if let (Some(conn), true) = (self.open(), self.session.unacked_received > 0) {
                    let s = self.session.s_frame();
                    send_apdus(io, conn, &[s]);
                }
            }
            HMI_T3 => {
                let Some(conn) = self.open() else { return };
                let t3 = self.session.params.t3;
                if io.now().saturating_sub(self.last_rx) >= t3 {
                    send_apdus(io, conn, &[Apdu::u(UFunction::TestFrAct)]);
                    io.set_timer(t3, HMI_T3);
                } else {
                    io.set_timer(self.last_rx + t3 - io.now(), HMI_T3);
                }
            }
            _ => {}
        }
    }
}
