//! IEC 60870-5-104: APDU codec plus the master and outstation sides of a
//! general interrogation.

mod apps;
mod codec;
mod points;
mod session;

pub use apps::{HmiApp, PlcApp, PROBE_COUNT, PROBE_INTERVAL};
pub use codec::*;
pub use points::{PointConfig, PointRecord, PointTable, PointValue};
pub use session::{
    seq_add, seq_distance, FaultPolicy, Iec104Params, Master, MasterError, MasterReply, Outstation, OutstationReply,
    SendWindow, SequenceFault, IEC104_PORT,
};
