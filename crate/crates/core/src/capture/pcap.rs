use std::path::Path;

use super::{Capture, CaptureError};
use crate::simnet::SimTime;

pub const PCAP_MAGIC: u32 = 0xA1B2_C3D4;
const LINKTYPE_ETHERNET: u32 = 1;
const SNAPLEN: u32 = 65535;

/// Classic little-endian pcap, microsecond timestamps.
pub fn write_pcap_bytes(capture: &Capture) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + capture.records.iter().map(|r| 16 + r.bytes.len()).sum::<usize>());
    out.extend_from_slice(&PCAP_MAGIC.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&SNAPLEN.to_le_bytes());
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    for r in &capture.records {
        let us = r.ts.as_micros();
        out.extend_from_slice(&((us / 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&((us % 1_000_000) as u32).to_le_bytes());
        let len = r.bytes.len() as u32;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&r.bytes);
    }
    out
}

pub fn write_pcap(capture: &Capture, path: &Path) -> Result<(), CaptureError> {
    std::fs::write(path, write_pcap_bytes(capture))?;
    Ok(())
}

/// Read a classic pcap in either byte order. Annotations are not stored in
/// pcap and come back empty.
pub fn read_pcap_bytes(data: &[u8]) -> Result<Capture, CaptureError> {
    if data.len() < 24 {
        return Err(CaptureError::Truncated(data.len()));
    }
    let raw = u32::from_le_bytes([data[0], data[1], data[2], data[3]]);
    let le = match raw {
        PCAP_MAGIC => true,
        m if m.swap_bytes() == PCAP_MAGIC => false,
        m => return Err(CaptureError::BadMagic(m)),
    };
    let u32_at = |off: usize| {
        let b = [data[off], data[off + 1], data[off + 2], data[off + 3]];
        if le {
            u32::from_le_bytes(b)
        } else {
            u32::from_be_bytes(b)
        }
    };
    let linktype = u32_at(20);
    if linktype != LINKTYPE_ETHERNET {
        return Err(CaptureError::LinkType(linktype));
    }
    let mut cap = Capture::new();
    let mut off = 24;
    while off < data.len() {
        if off + 16 > data.len() {
            return Err(CaptureError::Truncated(off));
        }
        let secs = u64::from(u32_at(off));
        let usec = u64::from(u32_at(off + 4));
        let incl = u32_at(off + 8) as usize;
        off += 16;
        if off + incl > data.len() {
            return Err(CaptureError::Truncated(off));
        }
        cap.record(data[off..off + incl].to_vec(), SimTime::from_micros(secs * 1_000_000 + usec));
        off += incl;
    }
    Ok(cap)
}

pub fn read_pcap(path: &Path) -> Result<Capture, CaptureError> {
    read_pcap_bytes(&std::fs::read(path)?)
}
