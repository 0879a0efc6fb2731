use std::fmt;

use thiserror::Error;

pub const START: u8 = 0x68;
pub const MAX_APDU_LENGTH: usize = 253;
pub const APCI_LEN: usize = 6;
pub const ASDU_HEADER_LEN: usize = 6;
pub const SEQ_MODULO: u16 = 32768;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad start octet {0:#04x}")]
    BadStart(u8),
    #[error("APDU length {declared} overruns {available} available bytes")]
    LengthOverrun { declared: usize, available: usize },
    #[error("illegal APDU length {0}")]
    BadLength(usize),
    #[error("invalid control field {0:02x?}")]
    BadControl([u8; 4]),
    #[error("ASDU truncated")]
    Truncated,
    #[error("{0} information objects do not fit the 7-bit count")]
    TooManyObjects(usize),
    #[error("element does not match type {0}")]
    ElementMismatch(u8),
    #[error("step position {0} outside -64..=63")]
    StepOutOfRange(i8),
    #[error("sequence mode requires consecutive addresses")]
    NotSequential,
    #[error("trailing bytes inside APDU")]
    TrailingBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UFunction {
    StartDtAct,
    StartDtCon,
    StopDtAct,
    StopDtCon,
    TestFrAct,
    TestFrCon,
}

impl UFunction {
    pub const ALL: [UFunction; 6] = [
        UFunction::StartDtAct,
        UFunction::StartDtCon,
        UFunction::StopDtAct,
        UFunction::StopDtCon,
        UFunction::TestFrAct,
        UFunction::TestFrCon,
    ];

    pub fn octet(self) -> u8 {
        match self {
            UFunction::StartDtAct => 0x07,
            UFunction::StartDtCon => 0x0B,
            UFunction::StopDtAct => 0x13,
            UFunction::StopDtCon => 0x23,
            UFunction::TestFrAct => 0x43,
            UFunction::TestFrCon => 0x83,
        }
    }

    pub fn from_octet(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.octet() == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            UFunction::StartDtAct => "STARTDT act",
            UFunction::StartDtCon => "STARTDT con",
            UFunction::StopDtAct => "STOPDT act",
            UFunction::StopDtCon => "STOPDT con",
            UFunction::TestFrAct => "TESTFR act",
            UFunction::TestFrCon => "TESTFR con",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Apci {
    I { ns: u16, nr: u16 },
    S { nr: u16 },
    U(UFunction),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TypeId {
    SinglePoint,
    DoublePoint,
    StepPosition,
    Interrogation,
    Other(u8),
}

impl TypeId {
    pub fn code(self) -> u8 {
        match self {
            TypeId::SinglePoint => 1,
            TypeId::DoublePoint => 3,
            TypeId::StepPosition => 5,
            TypeId::Interrogation => 100,
            TypeId::Other(c) => c,
        }
    }

    pub fn from_code(c: u8) -> Self {
        match c {
            1 => TypeId::SinglePoint,
            3 => TypeId::DoublePoint,
            5 => TypeId::StepPosition,
            100 => TypeId::Interrogation,
            c => TypeId::Other(c),
        }
    }

    pub fn mnemonic(self) -> String {
        match self {
            TypeId::SinglePoint => "M_SP_NA_1".into(),
            TypeId::DoublePoint => "M_DP_NA_1".into(),
            TypeId::StepPosition => "M_ST_NA_1".into(),
            TypeId::Interrogation => "C_IC_NA_1".into(),
            TypeId::Other(c) => format!("type {c}"),
        }
    }

    fn element_len(self) -> Option<usize> {
        match self {
            TypeId::SinglePoint | TypeId::DoublePoint | TypeId::Interrogation => Some(1),
            TypeId::StepPosition => Some(2),
            TypeId::Other(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cot {
    Act,
    ActCon,
    ActTerm,
    InroGen,
    Other(u8),
}

impl Cot {
    pub fn code(self) -> u8 {
        match self {
            Cot::Act => 6,
            Cot::ActCon => 7,
            Cot::ActTerm => 10,
            Cot::InroGen => 20,
            Cot::Other(c) => c & 0x3f,
        }
    }

    pub fn from_code(c: u8) -> Self {
        match c & 0x3f {
            6 => Cot::Act,
            7 => Cot::ActCon,
            10 => Cot::ActTerm,
            20 => Cot::InroGen,
            c => Cot::Other(c),
        }
    }
}

impl fmt::Display for Cot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cot::Act => f.write_str("Act"),
            Cot::ActCon => f.write_str("ActCon"),
            Cot::ActTerm => f.write_str("ActTerm"),
            Cot::InroGen => f.write_str("Inrogen"),
            Cot::Other(c) => write!(f, "cot {c}"),
        }
    }
}

/// Quality descriptor bits IV, NT, SB, BL and (for measured values) OV.
pub const QUALITY_MASK: u8 = 0xF0;
pub const QDS_MASK: u8 = 0xF1;
pub const QOI_STATION: u8 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Element {
    SinglePoint { on: bool, quality: u8 },
    /// 0 indeterminate, 1 off, 2 on, 3 indeterminate.
    DoublePoint { state: u8, quality: u8 },
    StepPosition { value: i8, transient: bool, quality: u8 },
    Qoi(u8),
}

impl Element {
    fn type_id(&self) -> TypeId {
        match self {
            Element::SinglePoint { .. } => TypeId::SinglePoint,
            Element::DoublePoint { .. } => TypeId::DoublePoint,
            Element::StepPosition { .. } => TypeId::StepPosition,
            Element::Qoi(_) => TypeId::Interrogation,
        }
    }

    fn encode(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        match *self {
            Element::SinglePoint { on, quality } => out.push(u8::from(on) | (quality & QUALITY_MASK)),
            Element::DoublePoint { state, quality } => out.push((state & 3) | (quality & QUALITY_MASK)),
            Element::StepPosition { value, transient, quality } => {
                if !(-64..=63).contains(&value) {
                    return Err(CodecError::StepOutOfRange(value));
                }
                out.push((value as u8 & 0x7f) | (u8::from(transient) << 7));
                out.push(quality & QDS_MASK);
            }
            Element::Qoi(q) => out.push(q),
        }
        Ok(())
    }

    fn decode(type_id: TypeId, b: &[u8]) -> Element {
        match type_id {
            TypeId::SinglePoint => Element::SinglePoint { on: b[0] & 1 == 1, quality: b[0] & QUALITY_MASK },
            TypeId::DoublePoint => Element::DoublePoint { state: b[0] & 3, quality: b[0] & QUALITY_MASK },
            TypeId::StepPosition => {
                // Sign-extend the 7-bit two's complement value.
                let value = ((b[0] << 1) as i8) >> 1;
                Element::StepPosition { value, transient: b[0] & 0x80 != 0, quality: b[1] & QDS_MASK }
            }
            TypeId::Interrogation => Element::Qoi(b[0]),
            TypeId::Other(_) => unreachable!("opaque types carry no elements"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InformationObject {
    /// 24-bit address.
    pub ioa: u32,
    pub element: Element,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Asdu {
    pub type_id: TypeId,
    /// Sequence mode: one address followed by consecutive elements.
    pub sq: bool,
    pub cot: Cot,
    pub negative: bool,
    pub test: bool,
    pub originator: u8,
    pub common_address: u16,
    pub objects: Vec<InformationObject>,
    /// Undecoded body of an unknown type (count of objects kept in `opaque_count`).
    pub opaque: Option<Vec<u8>>,
    pub opaque_count: u8,
}

impl Asdu {
    pub fn new(type_id: TypeId, cot: Cot, common_address: u16, objects: Vec<InformationObject>) -> Self {
        Asdu {
            type_id,
            sq: false,
            cot,
            negative: false,
            test: false,
            originator: 0,
            common_address,
            objects,
            opaque: None,
            opaque_count: 0,
        }
    }

    /// Station interrogation command with the given cause.
    pub fn interrogation(cot: Cot, common_address: u16) -> Self {
        Self::new(
            TypeId::Interrogation,
            cot,
            common_address,
            vec![InformationObject { ioa: 0, element: Element::Qoi(QOI_STATION) }],
        )
    }

    /// Unknown type identifier: body kept verbatim.
    pub fn is_opaque(&self) -> bool {
        self.opaque.is_some()
    }

    pub fn encoded_len(&self) -> usize {
        if let Some(body) = &self.opaque {
            return ASDU_HEADER_LEN + body.len();
        }
        let elem = self.type_id.element_len().unwrap_or(0);
        let n = self.objects.len();
        if self.sq && n > 0 {
            ASDU_HEADER_LEN + 3 + n * elem
        } else {
            ASDU_HEADER_LEN + n * (3 + elem)
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        let count = match &self.opaque {
            Some(_) => usize::from(self.opaque_count),
            None => self.objects.len(),
        };
        if count > 127 {
            return Err(CodecError::TooManyObjects(count));
        }
        out.push(self.type_id.code());
        out.push(count as u8 | (u8::from(self.sq) << 7));
        out.push(self.cot.code() | (u8::from(self.negative) << 6) | (u8::from(self.test) << 7));
        out.push(self.originator);
        out.extend_from_slice(&self.common_address.to_le_bytes());
        if let Some(body) = &self.opaque {
            out.extend_from_slice(body);
            return Ok(());
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.element.type_id() != self.type_id {
                return Err(CodecError::ElementMismatch(self.type_id.code()));
            }
            if self.sq {
                if i == 0 {
                    out.extend_from_slice(&obj.ioa.to_le_bytes()[..3]);
                } else if obj.ioa != self.objects[0].ioa + i as u32 {
                    return Err(CodecError::NotSequential);
                }
            } else {
                out.extend_from_slice(&obj.ioa.to_le_bytes()[..3]);
            }
            obj.element.encode(out)?;
        }
        Ok(())
    }

    pub fn decode(b: &[u8]) -> Result<Asdu, CodecError> {
        if b.len() < ASDU_HEADER_LEN {
            return Err(CodecError::Truncated);
        }
        let type_id = TypeId::from_code(b[0]);
        let count = usize::from(b[1] & 0x7f);
        let sq = b[1] & 0x80 != 0;
        let mut asdu = Asdu {
            type_id,
            sq,
            cot: Cot::from_code(b[2]),
            negative: b[2] & 0x40 != 0,
            test: b[2] & 0x80 != 0,
            originator: b[3],
            common_address: u16::from_le_bytes([b[4], b[5]]),
            objects: Vec::with_capacity(count),
            opaque: None,
            opaque_count: 0,
        };
        let body = &b[ASDU_HEADER_LEN..];
        let Some(elem) = type_id.element_len() else {
            asdu.opaque = Some(body.to_vec());
            asdu.opaque_count = count as u8;
            return Ok(asdu);
        };
        let read_ioa = |p: &[u8]| u32::from_le_bytes([p[0], p[1], p[2], 0]);
        let mut pos = 0;
        if sq && count > 0 {
            if body.len() < 3 + count * elem {
                return Err(CodecError::Truncated);
            }
            let base = read_ioa(body);
            pos = 3;
            for i in 0..count {
                let element = Element::decode(type_id, &body[pos..pos + elem]);
                asdu.objects.push(InformationObject { ioa: base + i as u32, element });
                pos += elem;
            }
        } else {
            for _ in 0..count {
                if body.len() < pos + 3 + elem {
                    return Err(CodecError::Truncated);
                }
                let ioa = read_ioa(&body[pos..]);
                let element = Element::decode(type_id, &body[pos + 3..pos + 3 + elem]);
                asdu.objects.push(InformationObject { ioa, element });
                pos += 3 + elem;
            }
        }
        if pos != body.len() {
            return Err(CodecError::TrailingBytes);
        }
        Ok(asdu)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Apdu {
    pub apci: Apci,
    pub asdu: Option<Asdu>,
}

impl Apdu {
    pub fn u(function: UFunction) -> Self {
        Apdu { apci: Apci::U(function), asdu: None }
    }

    pub fn s(nr: u16) -> Self {
        Apdu { apci: Apci::S { nr }, asdu: None }
    }

    pub fn i(ns: u16, nr: u16, asdu: Asdu) -> Self {
        Apdu { apci: Apci::I { ns, nr }, asdu: Some(asdu) }
    }

    pub fn encoded_len(&self) -> usize {
        APCI_LEN + self.asdu.as_ref().map_or(0, Asdu::encoded_len)
    }
}

pub fn encode_apdu(apdu: &Apdu) -> Result<Vec<u8>, CodecError> {
    let mut out = vec![START, 0];
    match apdu.apci {
        Apci::I { ns, nr } => {
            let ns = ns % SEQ_MODULO;
            let nr = nr % SEQ_MODULO;
            out.extend_from_slice(&[(ns << 1) as u8, (ns >> 7) as u8, (nr << 1) as u8, (nr >> 7) as u8]);
        }
        Apci::S { nr } => {
            let nr = nr % SEQ_MODULO;
            out.extend_from_slice(&[0x01, 0x00, (nr << 1) as u8, (nr >> 7) as u8]);
        }
        Apci::U(f) => out.extend_from_slice(&[f.octet(), 0, 0, 0]),
    }
    if let Some(asdu) = &apdu.asdu {
        asdu.encode(&mut out)?;
    }
    let length = out.len() - 2;
    if length > MAX_APDU_LENGTH {
        return Err(CodecError::BadLength(length));
    }
    out[1] = length as u8;
    Ok(out)
}

/// Decode one APDU from the front of `bytes`; returns it and the bytes used.
pub fn decode_apdu(bytes: &[u8]) -> Result<(Apdu, usize), CodecError> {
    let first = *bytes.first().ok_or(CodecError::Truncated)?;
    if first != START {
        return Err(CodecError::BadStart(first));
    }
    let length = usize::from(*bytes.get(1).ok_or(CodecError::Truncated)?);
    if !(4..=MAX_APDU_LENGTH).contains(&length) {
        return Err(CodecError::BadLength(length));
    }
    if bytes.len() < 2 + length {
        return Err(CodecError::LengthOverrun { declared: length, available: bytes.len() - 2 });
    }
    let c = [bytes[2], bytes[3], bytes[4], bytes[5]];
    let word = |lo: u8, hi: u8| (u16::from(lo) >> 1) | (u16::from(hi) << 7);
    let body = &bytes[APCI_LEN..2 + length];
    let apdu = if c[0] & 1 == 0 {
        if c[2] & 1 != 0 {
            return Err(CodecError::BadControl(c));
        }
        let asdu = Asdu::decode(body)?;
        Apdu::i(word(c[0], c[1]), word(c[2], c[3]), asdu)
    } else if c[0] & 3 == 1 {
        if c[0] != 1 || c[1] != 0 || c[2] & 1 != 0 || !body.is_empty() {
            return Err(CodecError::BadControl(c));
        }
        Apdu::s(word(c[2], c[3]))
    } else {
        let f = UFunction::from_octet(c[0]).ok_or(CodecError::BadControl(c))?;
        if c[1] != 0 || c[2] != 0 || c[3] != 0 || !body.is_empty() {
            return Err(CodecError::BadControl(c));
        }
        Apdu::u(f)
    };
    Ok((apdu, 2 + length))
}

/// Split a TCP payload holding back-to-back APDUs.
pub fn split_apdus(mut payload: &[u8]) -> Result<Vec<Apdu>, CodecError> {
    let mut out = Vec::new();
    while !payload.is_empty() {
        let (apdu, used) = decode_apdu(payload)?;
        out.push(apdu);
        payload = &payload[used..];
    }
    Ok(out)
}

pub fn encode_all(apdus: &[Apdu]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    for a in apdus {
        out.extend(encode_apdu(a)?);
    }
    Ok(out)
}

impl fmt::Display for Apdu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.apci, &self.asdu) {
            (Apci::U(func), _) => write!(f, "U ({})", func.name()),
            (Apci::S { nr }, _) => write!(f, "S (Rx={nr})"),
            (Apci::I { ns, nr }, Some(asdu)) => {
                write!(f, "I (Tx={ns}, Rx={nr}) ASDU={} {} {}", asdu.common_address, asdu.type_id.mnemonic(), asdu.cot)
            }
            (Apci::I { ns, nr }, None) => write!(f, "I (Tx={ns}, Rx={nr})"),
        }
    }
}
