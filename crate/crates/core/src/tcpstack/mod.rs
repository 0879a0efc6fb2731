//! Minimal TCP: in-order, first-arrival-wins receive path, fixed RTO
//! retransmission, and a simulator host that runs one application on top.

mod conn;
mod host;

pub use conn::{
    CloseReason, FourTuple, OverlapPolicy, Reaction, Segment, SegmentOutcome, TcpConfig, TcpConnection, TcpError,
    TcpState, TimerOutput,
};
pub use host::{App, AppEvent, AppIo, Command, ConnId, HostConfig, StackEvent, StackEventKind, TcpHost};
