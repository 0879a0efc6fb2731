//! Learning L2 switch with an optional egress-only mirror (SPAN) port.

use std::collections::{BTreeMap, BTreeSet};

use super::topology::{LinkId, NodeId, SwitchId, Vertex};
use super::SimTime;
use crate::wire::MacAddr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Port {
    pub link: LinkId,
    pub peer: Vertex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MirrorPort {
    /// Host whose tap interface receives the copies.
    pub node: NodeId,
    pub latency: SimTime,
}

/// Where a frame enters or leaves a switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PortRef {
    Member(usize),
    Mirror,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchConfig {
    pub id: SwitchId,
    pub name: String,
    pub ports: Vec<Port>,
    pub mirror: Option<MirrorPort>,
    pub mac_table: BTreeMap<MacAddr, usize>,
    /// Static entries that learning never moves.
    pub pinned: BTreeSet<MacAddr>,
}

impl SwitchConfig {
    pub fn new(id: SwitchId, name: String) -> Self {
        SwitchConfig { id, name, ports: Vec::new(), mirror: None, mac_table: BTreeMap::new(), pinned: BTreeSet::new() }
    }

    pub fn set_mirror(&mut self, node: NodeId, latency: SimTime) {
        self.mirror = Some(MirrorPort { node, latency });
    }

    /// Bind `mac` to `port` permanently.
    pub fn pin(&mut self, mac: MacAddr, port: usize) {
        self.mac_table.insert(mac, port);
        self.pinned.insert(mac);
    }

    pub fn port_for_link(&self, link: LinkId) -> Option<usize> {
        self.ports.iter().position(|p| p.link == link)
    }

    /// Forward one frame. Learns the source MAC, then returns the egress
    /// ports: the learned destination or a flood, plus one mirror copy when
    /// at least one member port receives the frame. Frames entering on the
    /// mirror port go nowhere.
    pub fn forward_frame(&mut self, ingress: PortRef, frame: &[u8]) -> Vec<PortRef> {
        let PortRef::Member(in_port) = ingress else {
            return Vec::new();
        };
        if frame.len() < 12 {
            return Vec::new();
        }
        let mut dst = [0u8; 6];
        dst.copy_from_slice(&frame[0..6]);
        let mut src = [0u8; 6];
        src.copy_from_slice(&frame[6..12]);
        let (dst, src) = (MacAddr(dst), MacAddr(src));
        if !src.is_broadcast() && !self.pinned.contains(&src) {
            self.mac_table.insert(src, in_port);
        }

        let mut out: Vec<PortRef> = match self.mac_table.get(&dst) {
            Some(&p) if !dst.is_broadcast() => {
                if p == in_port {
                    Vec::new()
                } else {
                    vec![PortRef::Member(p)]
                }
            }
            _ => (0..self.ports.len()).filter(|&p| p != in_port).map(PortRef::Member).collect(),
        };
        if !out.is_empty() && self.mirror.is_some() {
            out.push(PortRef::Mirror);
        }
        out
    }
}
