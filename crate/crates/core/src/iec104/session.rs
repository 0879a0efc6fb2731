use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codec::{Apci, Apdu, Asdu, Cot, TypeId, UFunction, SEQ_MODULO};
use super::points::{PointConfig, PointTable};
use crate::simnet::SimTime;

pub const IEC104_PORT: u16 = 2404;

/// Protocol timers and window sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Iec104Params {
    pub k: u16,
    pub w: u16,
    pub t1: SimTime,
    pub t2: SimTime,
    pub t3: SimTime,
}

impl Default for Iec104Params {
    fn default() -> Self {
        Iec104Params {
            k: 12,
            w: 8,
            t1: SimTime::from_secs(15),
            t2: SimTime::from_secs(10),
            t3: SimTime::from_secs(20),
        }
    }
}

pub fn seq_add(a: u16, n: u16) -> u16 {
    (a + n) % SEQ_MODULO
}

/// Forward distance from `from` to `to` modulo 32768.
pub fn seq_distance(from: u16, to: u16) -> u16 {
    (to + SEQ_MODULO - from % SEQ_MODULO) % SEQ_MODULO
}

/// Counter discipline on the sending side: I-frames awaiting a covering N(R).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SendWindow {
    pub next: u16,
    /// Oldest unacknowledged N(S).
    pub acked: u16,
    pub unacked: VecDeque<Apdu>,
}

impl SendWindow {
    pub fn outstanding(&self) -> u16 {
        seq_distance(self.acked, self.next)
    }

    /// Assign the next N(S).
    pub fn number(&mut self, nr: u16, asdu: Asdu) -> Apdu {
        let apdu = Apdu::i(self.next, nr, asdu);
        self.next = seq_add(self.next, 1);
        apdu
    }

    /// Apply a received N(R) given how many frames have left this endpoint.
    /// Returns false when `nr` acknowledges frames never sent.
    pub fn acknowledge(&mut self, nr: u16, sent: u16) -> bool {
        let newly = seq_distance(self.acked, nr);
        if newly > seq_distance(self.acked, sent) {
            return false;
        }
        for _ in 0..newly {
            self.unacked.pop_front();
        }
        self.acked = nr % SEQ_MODULO;
        true
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SequenceFault {
    #[error("received N(S)={got}, expected {expected}")]
    SendSequence { got: u16, expected: u16 },
    #[error("received N(R)={nr} acknowledges beyond {released} released frames")]
    ReceiveSequence { nr: u16, released: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FaultPolicy {
    /// Hang: ignore traffic, probe with TESTFR, then drop silently.
    #[default]
    Stall,
    /// Close the connection at once.
    Abort,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OutstationReply {
    pub immediate: Vec<Apdu>,
    /// Frames released one processing-delay step apart, starting one step
    /// after the request.
    pub staged: Vec<Vec<Apdu>>,
    pub fault: Option<SequenceFault>,
}

/// Controlled-station (PLC) side.
#[derive(Debug, Clone)]
pub struct Outstation {
    pub points: PointConfig,
    pub window: SendWindow,
    pub recv_seq: u16,
    /// I-frames actually put on the wire.
    pub released: u16,
    pub started: bool,
    pub gi_active: bool,
    pub fault: Option<SequenceFault>,
}

impl Outstation {
    pub fn new(points: PointConfig) -> Self {
        Outstation {
            points,
            window: SendWindow::default(),
            recv_seq: 0,
            released: 0,
            started: false,
            gi_active: false,
            fault: None,
        }
    }

    fn check_nr(&mut self, nr: u16) -> Result<(), SequenceFault> {
        if self.window.acknowledge(nr, self.released) {
            Ok(())
        } else {
            Err(SequenceFault::ReceiveSequence { nr, released: self.released })
        }
    }

    /// Record that `frames` have been transmitted.
    pub fn release(&mut self, frames: &[Apdu]) {
        for f in frames {
            if matches!(f.apci, Apci::I { .. }) {
                self.released = seq_add(self.released, 1);
                self.window.unacked.push_back(f.clone());
            }
        }
        if frames.iter().any(|f| f.asdu.as_ref().is_some_and(|a| a.cot == Cot::ActTerm)) {
            self.gi_active = false;
        }
    }

    pub fn on_apdu(&mut self, apdu: &Apdu) -> OutstationReply {
        let mut reply = OutstationReply::default();
        if self.fault.is_some() {
            return reply;
        }
        let result = match apdu.apci {
            Apci::U(UFunction::StartDtAct) => {
                self.started = true;
                reply.immediate.push(Apdu::u(UFunction::StartDtCon));
                Ok(())
            }
            Apci::U(UFunction::StopDtAct) => {
                self.started = false;
                reply.immediate.push(Apdu::u(UFunction::StopDtCon));
                Ok(())
            }
            Apci::U(UFunction::TestFrAct) => {
                reply.immediate.push(Apdu::u(UFunction::TestFrCon));
                Ok(())
            }
            Apci::U(_) => Ok(()),
            Apci::S { nr } => self.check_nr(nr),
            Apci::I { ns, nr } => {
                if ns != self.recv_seq {
                    Err(SequenceFault::SendSequence { got: ns, expected: self.recv_seq })
                } else {
                    self.recv_seq = seq_add(self.recv_seq, 1);
                    self.check_nr(nr).map(|()| {
                        if let Some(asdu) = &apdu.asdu {
                            self.on_command(asdu, &mut reply);
                        }
                    })
                }
            }
        };
        if let Err(fault) = result {
            self.fault = Some(fault);
            reply.fault = Some(fault);
        }
        reply
    }

    fn on_command(&mut self, asdu: &Asdu, reply: &mut OutstationReply) {
        if !self.started || asdu.type_id != TypeId::Interrogation || asdu.cot != Cot::Act || self.gi_active {
            return;
        }
        self.gi_active = true;
        let nr = self.recv_seq;
        let ca = self.points.common_address;
        let con = self.window.number(nr, Asdu::interrogation(Cot::ActCon, ca));
        let mut data: Vec<Apdu> =
            self.points.interrogation_groups().into_iter().map(|g| self.window.number(nr, g)).collect();
        data.push(self.window.number(nr, Asdu::interrogation(Cot::ActTerm, ca)));
        reply.staged.push(vec![con]);
        reply.staged.push(data);
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum MasterError {
    #[error("data transfer not started")]
    NotStarted,
    #[error("interrogation already in progress")]
    GiInProgress,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MasterReply {
    pub emit: Vec<Apdu>,
    pub started: bool,
    pub gi_complete: bool,
    pub stopped: bool,
    /// I-frames have been received since the last acknowledgment.
    pub ack_pending: bool,
}

/// Controlling-station (HMI) side.
#[derive(Debug, Clone)]
pub struct Master {
    pub params: Iec104Params,
    pub common_address: u16,
    pub window: SendWindow,
    pub recv_seq: u16,
    pub unacked_received: u16,
    pub startdt_confirmed: bool,
    pub stopdt_requested: bool,
    pub stopdt_confirmed: bool,
    pub gi_active: bool,
    pub protocol_error: bool,
    pub points: PointTable,
    /// N(R) values sent in S-frames, in order.
    pub s_frames_sent: Vec<u16>,
}

impl Master {
    pub fn new(params: Iec104Params, common_address: u16) -> Self {
        Master {
            params,
            common_address,
            window: SendWindow::default(),
            recv_seq: 0,
            unacked_received: 0,
            startdt_confirmed: false,
            stopdt_requested: false,
            stopdt_confirmed: false,
            gi_active: false,
            protocol_error: false,
            points: PointTable::default(),
            s_frames_sent: Vec::new(),
        }
    }

    pub fn start(&mut self) -> Apdu {
        Apdu::u(UFunction::StartDtAct)
    }

    pub fn stop(&mut self) -> Apdu {
        self.stopdt_requested = true;
        Apdu::u(UFunction::StopDtAct)
    }

    pub fn send_gi(&mut self) -> Result<Apdu, MasterError> {
        if !self.startdt_confirmed {
            return Err(MasterError::NotStarted);
        }
        if self.gi_active {
            return Err(MasterError::GiInProgress);
        }
        self.gi_active = true;
        Ok(self.window.number(self.recv_seq, Asdu::interrogation(Cot::Act, self.common_address)))
    }

    /// Acknowledge everything received so far.
    pub fn s_frame(&mut self) -> Apdu {
        self.unacked_received = 0;
        self.s_frames_sent.push(self.recv_seq);
        Apdu::s(self.recv_seq)
    }

    pub fn on_apdu(&mut self, apdu: &Apdu, now: SimTime) -> MasterReply {
        let mut reply = MasterReply::default();
        match apdu.apci {
            Apci::U(UFunction::StartDtCon) => {
                self.startdt_confirmed = true;
                reply.started = true;
            }
            Apci::U(UFunction::StopDtCon) => {
                if self.stopdt_requested {
                    self.stopdt_confirmed = true;
                    reply.stopped = true;
                }
            }
            Apci::U(UFunction::TestFrAct) => reply.emit.push(Apdu::u(UFunction::TestFrCon)),
            Apci::U(_) => {}
            Apci::S { nr } => {
                let next = self.window.next;
                self.window.acknowledge(nr, next);
            }
            Apci::I { ns, nr } => {
                if !self.startdt_confirmed {
                    self.protocol_error = true;
                }
                let next = self.window.next;
                self.window.acknowledge(nr, next);
                // No authenticity check: the peer's numbering is taken as given.
                self.recv_seq = seq_add(ns, 1);
                self.unacked_received += 1;
                if let Some(asdu) = &apdu.asdu {
                    self.points.apply(asdu, now);
                    if asdu.type_id == TypeId::Interrogation && asdu.cot == Cot::ActTerm {
                        self.gi_active = false;
                        reply.gi_complete = true;
                    }
                }
                if reply.gi_complete || self.unacked_received >= self.params.w {
                    let s = self.s_frame();
                    reply.emit.push(s);
                } else {
                    reply.ack_pending = true;
                }
            }
        }
        reply
    }
}
