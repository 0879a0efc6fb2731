//! Declarative topology description and its validated form.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::switch::{Port, SwitchConfig};
use super::SimTime;
use crate::wire::MacAddr;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("duplicate node or switch name {0:?}")]
    DuplicateName(String),
    #[error("duplicate address {0}")]
    DuplicateAddress(String),
    #[error("reference to undeclared node {0:?}")]
    UnknownNode(String),
    #[error("mirror port {node:?} is not a member port of switch {switch:?}")]
    MirrorNotMember { switch: String, node: String },
    #[error("negative latency {value}us on {what}")]
    NegativeLatency { what: String, value: i64 },
    #[error("negative processing delay {value}us for {node:?}")]
    NegativeDelay { node: String, value: i64 },
    #[error("link endpoints must be distinct ({0:?})")]
    SelfLink(String),
    #[error("host {0:?} must have exactly one link, to a switch")]
    HostAttachment(String),
    #[error("invalid MAC address {0:?}")]
    BadMac(String),
    #[error("cannot read topology: {0}")]
    Io(String),
    #[error("cannot parse topology: {0}")]
    Parse(String),
}

/// Host identifier, dense from zero in declaration order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SwitchId(pub u16);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LinkId(pub u16);

/// Anything a link can terminate on.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Vertex {
    Host(NodeId),
    Switch(SwitchId),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub ip: Ipv4Addr,
    pub mac: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SwitchSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror_port: Option<String>,
    #[serde(default)]
    pub mirror_latency_us: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub latency_us: i64,
    /// Latency from `b` to `a`, when it differs from `latency_us`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_back_us: Option<i64>,
}

/// The on-disk topology format (TOML).
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TopologySpec {
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub switches: Vec<SwitchSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    /// Per-host processing delay in microseconds, keyed by node name.
    #[serde(default)]
    pub delays: BTreeMap<String, i64>,
}

impl TopologySpec {
    pub fn from_toml(text: &str) -> Result<Self, TopologyError> {
        toml::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path).map_err(|e| TopologyError::Io(e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("topology spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostInfo {
    pub id: NodeId,
    pub name: String,
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
    pub processing_delay: SimTime,
    pub access_link: LinkId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: Vertex,
    pub b: Vertex,
    pub latency_ab: SimTime,
    pub latency_ba: SimTime,
}

impl Link {
    pub fn other_end(&self, from: Vertex) -> Vertex {
        if from == self.a {
            self.b
        } else {
            self.a
        }
    }

    pub fn latency_from(&self, from: Vertex) -> SimTime {
        if from == self.a {
            self.latency_ab
        } else {
            self.latency_ba
        }
    }
}

/// A validated topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub hosts: Vec<HostInfo>,
    pub switches: Vec<SwitchConfig>,
    pub links: Vec<Link>,
}

fn latency(what: &str, value: i64) -> Result<SimTime, TopologyError> {
    u64::try_from(value)
        .map(SimTime::from_micros)
        .map_err(|_| TopologyError::NegativeLatency { what: what.to_string(), value })
}

/// Validate a topology description.
pub fn build_topology(spec: &TopologySpec) -> Result<Topology, TopologyError> {
    let mut names: BTreeMap<&str, Vertex> = BTreeMap::new();
    let mut addresses = BTreeSet::new();
    let mut hosts = Vec::with_capacity(spec.nodes.len());
    for (i, node) in spec.nodes.iter().enumerate() {
        let id = NodeId(i as u16);
        if names.insert(&node.name, Vertex::Host(id)).is_some() {
            return Err(TopologyError::DuplicateName(node.name.clone()));
        }
        let mac: MacAddr = node.mac.parse().map_err(|_| TopologyError::BadMac(node.mac.clone()))?;
        if !addresses.insert(node.ip.to_string()) {
            return Err(TopologyError::DuplicateAddress(node.ip.to_string()));
        }
        if !addresses.insert(mac.to_string()) {
            return Err(TopologyError::DuplicateAddress(mac.to_string()));
        }
        hosts.push(HostInfo {
            id,
            name: node.name.clone(),
            ip: node.ip,
            mac,
            processing_delay: SimTime::ZERO,
            access_link: LinkId(u16::MAX),
        });
    }
    for (i, sw) in spec.switches.iter().enumerate() {
        if names.insert(&sw.name, Vertex::Switch(SwitchId(i as u16))).is_some() {
            return Err(TopologyError::DuplicateName(sw.name.clone()));
        }
    }
    let resolve = |name: &str| names.get(name).copied().ok_or_else(|| TopologyError::UnknownNode(name.to_string()));

    for (name, &delay) in &spec.delays {
        let Vertex::Host(id) = resolve(name)? else {
            return Err(TopologyError::UnknownNode(name.clone()));
        };
        let delay = u64::try_from(delay).map_err(|_| TopologyError::NegativeDelay { node: name.clone(), value: delay })?;
        hosts[id.index()].processing_delay = SimTime::from_micros(delay);
    }

    let mut switches: Vec<SwitchConfig> = spec
        .switches
        .iter()
        .enumerate()
        .map(|(i, sw)| SwitchConfig::new(SwitchId(i as u16), sw.name.clone()))
        .collect();
    let mut links = Vec::with_capacity(spec.links.len());
    let mut host_links: Vec<Vec<LinkId>> = vec![Vec::new(); hosts.len()];
    for (i, l) in spec.links.iter().enumerate() {
        let id = LinkId(i as u16);
        let a = resolve(&l.a)?;
        let b = resolve(&l.b)?;
        if a == b {
            return Err(TopologyError::SelfLink(l.a.clone()));
        }
        let what = format!("link {}-{}", l.a, l.b);
        let latency_ab = latency(&what, l.latency_us)?;
        let latency_ba = latency(&what, l.latency_back_us.unwrap_or(l.latency_us))?;
        for (end, other) in [(a, b), (b, a)] {
            match end {
                Vertex::Host(h) => host_links[h.index()].push(id),
                Vertex::Switch(s) => switches[s.0 as usize].ports.push(Port { link: id, peer: other }),
            }
        }
        links.push(Link { a, b, latency_ab, latency_ba });
    }
    for host in &mut hosts {
        let attached = &host_links[host.id.index()];
        let [link] = attached.as_slice() else {
            return Err(TopologyError::HostAttachment(host.name.clone()));
        };
        if !matches!(links[link.0 as usize].other_end(Vertex::Host(host.id)), Vertex::Switch(_)) {
            return Err(TopologyError::HostAttachment(host.name.clone()));
        }
        host.access_link = *link;
        if let Vertex::Switch(s) = links[link.0 as usize].other_end(Vertex::Host(host.id)) {
            let sw = &mut switches[s.0 as usize];
            if let Some(port) = sw.port_for_link(*link) {
                sw.pin(host.mac, port);
            }
        }
    }

    for (sw_spec, sw) in spec.switches.iter().zip(switches.iter_mut()) {
        let Some(mirror_name) = &sw_spec.mirror_port else { continue };
        let node = match resolve(mirror_name)? {
            Vertex::Host(h) => h,
            Vertex::Switch(_) => {
                return Err(TopologyError::MirrorNotMember { switch: sw.name.clone(), node: mirror_name.clone() })
            }
        };
        if !sw.ports.iter().any(|p| p.peer == Vertex::Host(node)) {
            return Err(TopologyError::MirrorNotMember { switch: sw.name.clone(), node: mirror_name.clone() });
        }
        let lat = latency(&format!("mirror of {}", sw.name), sw_spec.mirror_latency_us)?;
        sw.set_mirror(node, lat);
    }

    Ok(Topology { hosts, switches, links })
}

impl Topology {
    pub fn from_toml(text: &str) -> Result<Self, TopologyError> {
        build_topology(&TopologySpec::from_toml(text)?)
    }

    pub fn host_by_name(&self, name: &str) -> Option<&HostInfo> {
        self.hosts.iter().find(|h| h.name == name)
    }

    pub fn host(&self, id: NodeId) -> &HostInfo {
        &self.hosts[id.index()]
    }

    pub fn host_by_ip(&self, ip: Ipv4Addr) -> Option<&HostInfo> {
        self.hosts.iter().find(|h| h.ip == ip)
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0 as usize]
    }

    /// Hosts that receive a mirror copy on some switch.
    pub fn mirror_hosts(&self) -> Vec<NodeId> {
        self.switches.iter().filter_map(|s| s.mirror.map(|m| m.node)).collect()
    }

    fn neighbours(&self, v: Vertex) -> Vec<(Vertex, SimTime)> {
        self.links
            .iter()
            .filter(|l| l.a == v || l.b == v)
            .map(|l| (l.other_end(v), l.latency_from(v)))
            .collect()
    }

    /// Sum of link latencies along the (first, breadth-first) path between two
    /// vertices, without processing delays.
    pub fn path_latency(&self, from: Vertex, to: Vertex) -> Option<SimTime> {
        let mut seen = BTreeMap::new();
        seen.insert(from, SimTime::ZERO);
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            let here = seen[&v];
            if v == to {
                return Some(here);
            }
            // Hosts don't forward.
            if matches!(v, Vertex::Host(_)) && v != from {
                continue;
            }
            for (n, lat) in self.neighbours(v) {
                if !seen.contains_key(&n) {
                    seen.insert(n, here + lat);
                    queue.push_back(n);
                }
            }
        }
        None
    }

    pub fn host_latency(&self, from: NodeId, to: NodeId) -> Option<SimTime> {
        self.path_latency(Vertex::Host(from), Vertex::Host(to))
    }

    /// Time for a frame sent by `from` to reach the tap of `observer`, the
    /// mirror-port host, including the mirror latency.
    pub fn mirror_latency(&self, from: NodeId, observer: NodeId) -> Option<SimTime> {
        self.switches
            .iter()
            .filter_map(|s| s.mirror.filter(|m| m.node == observer).map(|m| (s.id, m.latency)))
            .filter_map(|(sw, lat)| self.path_latency(Vertex::Host(from), Vertex::Switch(sw)).map(|p| p + lat))
            .min()
    }
}
