//! Ethernet II / IPv4 / TCP framing.
//!
//! Only the subset the testbed needs is supported: no VLAN tags, no IP or
//! TCP options, no fragmentation. Every header has a fixed size, so a frame
//! is always `14 + 20 + 20 + payload` bytes.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

pub const ETH_HEADER_LEN: usize = 14;
pub const IPV4_HEADER_LEN: usize = 20;
pub const TCP_HEADER_LEN: usize = 20;
pub const MIN_FRAME_LEN: usize = ETH_HEADER_LEN + IPV4_HEADER_LEN + TCP_HEADER_LEN;
pub const MSS: usize = 1460;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const IPPROTO_TCP: u8 = 6;
pub const DEFAULT_TTL: u8 = 64;
pub const DEFAULT_WINDOW: u16 = 65535;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated frame: {0} bytes")]
    Truncated(usize),
    #[error("unsupported ethertype {0:#06x}")]
    NotIpv4(u16),
    #[error("unsupported IP protocol {0}")]
    NotTcp(u8),
    #[error("IPv4 options are not supported (ihl={0})")]
    IpOptions(u8),
    #[error("TCP options are not supported (data offset={0})")]
    TcpOptions(u8),
    #[error("IPv4 total length {total} does not match frame ({available} bytes available)")]
    BadTotalLength { total: u16, available: usize },
    #[error("payload of {0} bytes exceeds the {MSS}-byte MSS")]
    PayloadTooLarge(usize),
    #[error("invalid MAC address {0:?}")]
    BadMac(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);

    pub fn is_broadcast(&self) -> bool {
        *self == Self::BROADCAST
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for MacAddr {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for byte in out.iter_mut() {
            let part = parts.next().ok_or_else(|| WireError::BadMac(s.to_string()))?;
            *byte = u8::from_str_radix(part, 16).map_err(|_| WireError::BadMac(s.to_string()))?;
        }
        if parts.next().is_some() {
            return Err(WireError::BadMac(s.to_string()));
        }
        Ok(MacAddr(out))
    }
}

/// TCP control bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn fin(self) -> bool {
        self.contains(Self::FIN)
    }
    pub fn syn(self) -> bool {
        self.contains(Self::SYN)
    }
    pub fn rst(self) -> bool {
        self.contains(Self::RST)
    }
    pub fn psh(self) -> bool {
        self.contains(Self::PSH)
    }
    pub fn ack(self) -> bool {
        self.contains(Self::ACK)
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: Self) -> Self {
        TcpFlags(self.0 | rhs.0)
    }
}

impl std::ops::BitOrAssign for TcpFlags {
    fn bitor_assign(&mut self, rhs: Self) {
        self.0 |= rhs.0;
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [(TcpFlags, &str); 6] = [
            (TcpFlags::FIN, "FIN"),
            (TcpFlags::SYN, "SYN"),
            (TcpFlags::RST, "RST"),
            (TcpFlags::PSH, "PSH"),
            (TcpFlags::ACK, "ACK"),
            (TcpFlags::URG, "URG"),
        ];
        let names: Vec<&str> = NAMES
            .iter()
            .filter(|(flag, _)| self.contains(*flag))
            .map(|(_, n)| *n)
            .collect();
        if names.is_empty() {
            f.write_str("<none>")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl fmt::Debug for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{self}]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EthernetHeader {
    pub dst: MacAddr,
    pub src: MacAddr,
    pub ethertype: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Header {
    pub dscp_ecn: u8,
    pub total_length: u16,
    pub identification: u16,
    /// Flags (3 bits) and fragment offset (13 bits) as on the wire.
    pub flags_fragment: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub checksum: u16,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub window: u16,
    pub checksum: u16,
    pub urgent: u16,
}

/// One Ethernet/IPv4/TCP frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WirePacket {
    pub eth: EthernetHeader,
    pub ip: Ipv4Header,
    pub tcp: TcpHeader,
    pub payload: Vec<u8>,
}

/// Result of [`decode`]: the packet plus checksum verdicts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub packet: WirePacket,
    pub ip_checksum_ok: bool,
    pub tcp_checksum_ok: bool,
}

/// Field-level description of a segment; [`WirePacket::build`] fills in lengths
/// and checksums.
#[derive(Debug, Clone)]
pub struct SegmentSpec {
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub ip_id: u16,
    pub ttl: u8,
    pub window: u16,
}

impl WirePacket {
    pub fn build(spec: &SegmentSpec, payload: Vec<u8>) -> Result<WirePacket, WireError> {
        if payload.len() > MSS {
            return Err(WireError::PayloadTooLarge(payload.len()));
        }
        let mut packet = WirePacket {
            eth: EthernetHeader { dst: spec.dst_mac, src: spec.src_mac, ethertype: ETHERTYPE_IPV4 },
            ip: Ipv4Header {
                dscp_ecn: 0,
                total_length: 0,
                identification: spec.ip_id,
                // don't-fragment
                flags_fragment: 0x4000,
                ttl: spec.ttl,
                protocol: IPPROTO_TCP,
                checksum: 0,
                src: spec.src_ip,
                dst: spec.dst_ip,
            },
            tcp: TcpHeader {
                src_port: spec.src_port,
                dst_port: spec.dst_port,
                seq: spec.seq,
                ack: spec.ack,
                flags: spec.flags,
                window: spec.window,
                checksum: 0,
                urgent: 0,
            },
            payload,
        };
        packet.finalize();
        Ok(packet)
    }

    /// Recompute total length and both checksums in place.
    pub fn finalize(&mut self) {
        self.ip.total_length = (IPV4_HEADER_LEN + TCP_HEADER_LEN + self.payload.len()) as u16;
        self.ip.checksum = 0;
        let ip_bytes = self.ip_header_bytes();
        self.ip.checksum = ipv4_checksum(&ip_bytes);
        self.tcp.checksum = 0;
        let tcp_bytes = self.tcp_segment_bytes();
        self.tcp.checksum = tcp_checksum(self.ip.src, self.ip.dst, &tcp_bytes);
    }

    /// Sequence space consumed by this segment (payload plus SYN/FIN).
    pub fn seq_len(&self) -> u32 {
        self.payload.len() as u32 + u32::from(self.tcp.flags.syn()) + u32::from(self.tcp.flags.fin())
    }

    fn ip_header_bytes(&self) -> [u8; IPV4_HEADER_LEN] {
        let ip = &self.ip;
        let mut b = [0u8; IPV4_HEADER_LEN];
        b[0] = 0x45;
        b[1] = ip.dscp_ecn;
        b[2..4].copy_from_slice(&ip.total_length.to_be_bytes());
        b[4..6].copy_from_slice(&ip.identification.to_be_bytes());
        b[6..8].copy_from_slice(&ip.flags_fragment.to_be_bytes());
        b[8] = ip.ttl;
        b[9] = ip.protocol;
        b[10..12].copy_from_slice(&ip.checksum.to_be_bytes());
        b[12..16].copy_from_slice(&ip.src.octets());
        b[16..20].copy_from_slice(&ip.dst.octets());
        b
    }

    fn tcp_segment_bytes(&self) -> Vec<u8> {
        let t = &self.tcp;
        let mut b = Vec::with_capacity(TCP_HEADER_LEN + self.payload.len());
        b.extend_from_slice(&t.src_port.to_be_bytes());
        b.extend_from_slice(&t.dst_port.to_be_bytes());
        b.extend_from_slice(&t.seq.to_be_bytes());
        b.extend_from_slice(&t.ack.to_be_bytes());
        b.push(5 << 4);
        b.push(t.flags.0);
        b.extend_from_slice(&t.window.to_be_bytes());
        b.extend_from_slice(&t.checksum.to_be_bytes());
        b.extend_from_slice(&t.urgent.to_be_bytes());
        b.extend_from_slice(&self.payload);
        b
    }
}

/// Serialize a packet exactly as it is, header fields included. Use
/// [`WirePacket::finalize`] (or [`WirePacket::build`]) to refresh lengths and
/// checksums first.
pub fn encode(packet: &WirePacket) -> Result<Vec<u8>, WireError> {
    if packet.payload.len() > MSS {
        return Err(WireError::PayloadTooLarge(packet.payload.len()));
    }
    let mut out = Vec::with_capacity(MIN_FRAME_LEN + packet.payload.len());
    out.extend_from_slice(&packet.eth.dst.0);
    out.extend_from_slice(&packet.eth.src.0);
    out.extend_from_slice(&packet.eth.ethertype.to_be_bytes());
    out.extend_from_slice(&packet.ip_header_bytes());
    out.extend_from_slice(&packet.tcp_segment_bytes());
    Ok(out)
}

pub fn decode(frame: &[u8]) -> Result<Decoded, WireError> {
    if frame.len() < MIN_FRAME_LEN {
        return Err(WireError::Truncated(frame.len()));
    }
    let be16 = |i: usize| u16::from_be_bytes([frame[i], frame[i + 1]]);
    let be32 = |i: usize| u32::from_be_bytes([frame[i], frame[i + 1], frame[i + 2], frame[i + 3]]);
    let mac = |i: usize| {
        let mut m = [0u8; 6];
        m.copy_from_slice(&frame[i..i + 6]);
        MacAddr(m)
    };

    let ethertype = be16(12);
    if ethertype != ETHERTYPE_IPV4 {
        return Err(WireError::NotIpv4(ethertype));
    }
    let eth = EthernetHeader { dst: mac(0), src: mac(6), ethertype };

    let ip_off = ETH_HEADER_LEN;
    let ihl = frame[ip_off] & 0x0f;
    if ihl != 5 || frame[ip_off] >> 4 != 4 {
        return Err(WireError::IpOptions(ihl));
    }
    let protocol = frame[ip_off + 9];
    if protocol != IPPROTO_TCP {
        return Err(WireError::NotTcp(protocol));
    }
    let total_length = be16(ip_off + 2);
    let available = frame.len() - ETH_HEADER_LEN;
    if (total_length as usize) < IPV4_HEADER_LEN + TCP_HEADER_LEN || total_length as usize > available {
        return Err(WireError::BadTotalLength { total: total_length, available });
    }
    let ip = Ipv4Header {
        dscp_ecn: frame[ip_off + 1],
        total_length,
        identification: be16(ip_off + 4),
        flags_fragment: be16(ip_off + 6),
        ttl: frame[ip_off + 8],
        protocol,
        checksum: be16(ip_off + 10),
        src: Ipv4Addr::new(frame[ip_off + 12], frame[ip_off + 13], frame[ip_off + 14], frame[ip_off + 15]),
        dst: Ipv4Addr::new(frame[ip_off + 16], frame[ip_off + 17], frame[ip_off + 18], frame[ip_off + 19]),
    };
    let ip_checksum_ok = ones_complement_sum(&frame[ip_off..ip_off + IPV4_HEADER_LEN], 0) == 0xffff;

    let tcp_off = ip_off + IPV4_HEADER_LEN;
    let data_offset = frame[tcp_off + 12] >> 4;
    if data_offset != 5 {
        return Err(WireError::TcpOptions(data_offset));
    }
    let tcp = TcpHeader {
        src_port: be16(tcp_off),
        dst_port: be16(tcp_off + 2),
        seq: be32(tcp_off + 4),
        ack: be32(tcp_off + 8),
        flags: TcpFlags(frame[tcp_off + 13]),
        window: be16(tcp_off + 14),
        checksum: be16(tcp_off + 16),
        urgent: be16(tcp_off + 18),
    };
    let segment_end = ip_off + total_length as usize;
    let payload = frame[tcp_off + TCP_HEADER_LEN..segment_end].to_vec();
    let tcp_checksum_ok = tcp_checksum(ip.src, ip.dst, &frame[tcp_off..segment_end]) == 0;

    Ok(Decoded { packet: WirePacket { eth, ip, tcp, payload }, ip_checksum_ok, tcp_checksum_ok })
}

/// 16-bit ones-complement sum of `data` (odd trailing byte padded with zero),
/// folded, starting from `initial`. Not complemented.
pub fn ones_complement_sum(data: &[u8], initial: u32) -> u16 {
    let mut sum = initial;
    let mut chunks = data.chunks_exact(2);
    for pair in &mut chunks {
        sum += u32::from(u16::from_be_bytes([pair[0], pair[1]]));
    }
    if let [last] = chunks.remainder() {
        sum += u32::from(*last) << 8;
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    sum as u16
}

/// Header checksum over a 20-byte IPv4 header. With the checksum field
/// zeroed this yields the value to insert; over a header that already carries
/// a valid checksum it yields zero.
pub fn ipv4_checksum(header: &[u8]) -> u16 {
    !ones_complement_sum(header, 0)
}

/// TCP checksum over the IPv4 pseudo-header and `segment` (header + payload).
pub fn tcp_checksum(src: Ipv4Addr, dst: Ipv4Addr, segment: &[u8]) -> u16 {
    let mut pseudo = [0u8; 12];
    pseudo[0..4].copy_from_slice(&src.octets());
    pseudo[4..8].copy_from_slice(&dst.octets());
    pseudo[9] = IPPROTO_TCP;
    pseudo[10..12].copy_from_slice(&(segment.len() as u16).to_be_bytes());
    let partial = ones_complement_sum(&pseudo, 0);
    !ones_complement_sum(segment, u32::from(partial))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SegmentSpec {
        SegmentSpec {
            src_mac: "02:00:00:00:00:01".parse().unwrap(),
            dst_mac: "02:00:00:00:00:02".parse().unwrap(),
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            src_port: 40000,
            dst_port: 80,
            seq: 1000,
            ack: 0,
            flags: TcpFlags::SYN,
            ip_id: 7,
            ttl: DEFAULT_TTL,
            window: DEFAULT_WINDOW,
        }
    }

    #[test]
    fn minimal_syn_is_54_bytes() {
        let p = WirePacket::build(&spec(), Vec::new()).unwrap();
        assert_eq!(encode(&p).unwrap().len(), 54);
    }

    #[test]
    fn zero_header_checksum_is_ffff() {
        assert_eq!(ipv4_checksum(&[0u8; 20]), 0xffff);
    }

    #[test]
    fn short_frame_is_truncated() {
        assert_eq!(decode(&[0u8; 10]), Err(WireError::Truncated(10)));
    }

    #[test]
    fn rejects_non_ipv4_and_non_tcp() {
        let p = WirePacket::build(&spec(), b"hi".to_vec()).unwrap();
        let mut bytes = encode(&p).unwrap();
        bytes[12] = 0x86;
        bytes[13] = 0xdd;
        assert_eq!(decode(&bytes).unwrap_err(), WireError::NotIpv4(0x86dd));
        let mut bytes = encode(&p).unwrap();
        bytes[ETH_HEADER_LEN + 9] = 17;
        assert_eq!(decode(&bytes).unwrap_err(), WireError::NotTcp(17));
    }

    #[test]
    fn oversized_payload_rejected() {
        assert_eq!(
            WirePacket::build(&spec(), vec![0; MSS + 1]).unwrap_err(),
            WireError::PayloadTooLarge(MSS + 1)
        );
    }

    #[test]
    fn flipped_payload_bit_fails_tcp_checksum_only() {
        let p = WirePacket::build(&spec(), b"payload".to_vec()).unwrap();
        let mut bytes = encode(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        let d = decode(&bytes).unwrap();
        assert!(d.ip_checksum_ok);
        assert!(!d.tcp_checksum_ok);
    }

    #[test]
    fn flags_render() {
        assert_eq!((TcpFlags::SYN | TcpFlags::ACK).to_string(), "SYN,ACK");
        assert_eq!((TcpFlags::FIN | TcpFlags::ACK).to_string(), "FIN,ACK");
    }

    #[test]
    fn mac_parse_roundtrip() {
        let m: MacAddr = "02:0a:ff:00:10:01".parse().unwrap();
        assert_eq!(m.to_string(), "02:0a:ff:00:10:01");
        assert!("02:0a".parse::<MacAddr>().is_err());
    }
}
