//! Randomized APDU round-trips and a bit-level reference dissector for the
//! control field.

use mots_core::iec104::*;
use proptest::prelude::*;

/// Reads the APCI the way a dissector does: the frame format from the two
/// least-significant bits of octet 3, sequence numbers as 15-bit values from
/// bits 1..15 of the little-endian 16-bit words.
fn reference_apci(bytes: &[u8]) -> (char, u16, u16, u8) {
    let w1 = u16::from_le_bytes([bytes[2], bytes[3]]);
    let w2 = u16::from_le_bytes([bytes[4], bytes[5]]);
    match w1 & 0b11 {
        0 | 2 => ('I', w1 >> 1, w2 >> 1, 0),
        1 => ('S', 0, w2 >> 1, 0),
        _ => ('U', 0, 0, bytes[2] & 0xFC),
    }
}

#[test]
fn reference_dissector_agrees_on_examples() {
    let startdt = encode_apdu(&Apdu::u(UFunction::StartDtAct)).unwrap();
    assert_eq!(reference_apci(&startdt), ('U', 0, 0, 0x04));
    let s = encode_apdu(&Apdu::s(4)).unwrap();
    assert_eq!(reference_apci(&s), ('S', 0, 4, 0));
    assert_eq!(s, [0x68, 0x04, 0x01, 0x00, 0x08, 0x00]);
}

fn arb_quality() -> impl Strategy<Value = u8> {
    (0u8..16).prop_map(|q| q << 4)
}

fn arb_asdu() -> impl Strategy<Value = Asdu> {
    let header = (any::<bool>(), any::<bool>(), any::<u8>(), any::<u16>(), prop_oneof![
        Just(Cot::Act),
        Just(Cot::ActCon),
        Just(Cot::ActTerm),
        Just(Cot::InroGen),
        (0u8..64).prop_map(Cot::from_code),
    ]);
    let sp = prop::collection::vec(
        (0u32..1 << 24, any::<bool>(), arb_quality()).prop_map(|(ioa, on, quality)| InformationObject {
            ioa,
            element: Element::SinglePoint { on, quality },
        }),
        0..40,
    )
    .prop_map(|o| (TypeId::SinglePoint, o));
    let dp = prop::collection::vec(
        (0u32..1 << 24, 0u8..4, arb_quality()).prop_map(|(ioa, state, quality)| InformationObject {
            ioa,
            element: Element::DoublePoint { state, quality },
        }),
        0..40,
    )
    .prop_map(|o| (TypeId::DoublePoint, o));
    let st = prop::collection::vec(
        (0u32..1 << 24, -64i8..=63, any::<bool>(), arb_quality(), any::<bool>()).prop_map(
            |(ioa, value, transient, q, ov)| InformationObject {
                ioa,
                element: Element::StepPosition { value, transient, quality: q | u8::from(ov) },
            },
        ),
        0..40,
    )
    .prop_map(|o| (TypeId::StepPosition, o));
    let gi = any::<u8>().prop_map(|q| (TypeId::Interrogation, vec![InformationObject { ioa: 0, element: Element::Qoi(q) }]));
    (header, prop_oneof![sp, dp, st, gi]).prop_map(|((neg, test, orig, ca, cot), (t, objects))| {
        let mut a = Asdu::new(t, cot, ca, objects);
        a.negative = neg;
        a.test = test;
        a.originator = orig;
        a
    })
}

fn arb_apdu() -> impl Strategy<Value = Apdu> {
    prop_oneof![
        prop::sample::select(UFunction::ALL.to_vec()).prop_map(Apdu::u),
        (0u16..SEQ_MODULO).prop_map(Apdu::s),
        (0u16..SEQ_MODULO, 0u16..SEQ_MODULO, arb_asdu()).prop_map(|(ns, nr, a)| Apdu::i(ns, nr, a)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn apdu_roundtrip(apdu in arb_apdu()) {
        let bytes = encode_apdu(&apdu).unwrap();
        prop_assert_eq!(bytes[0], START);
        prop_assert_eq!(usize::from(bytes[1]), bytes.len() - 2);
        prop_assert_eq!(bytes.len(), apdu.encoded_len());
        let (back, used) = decode_apdu(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(&back, &apdu);
        prop_assert_eq!(encode_apdu(&back).unwrap(), bytes.clone());

        let (format, ns, nr, _) = reference_apci(&bytes);
        match apdu.apci {
            Apci::I { ns: n, nr: r } => prop_assert_eq!((format, ns, nr), ('I', n, r)),
            Apci::S { nr: r } => prop_assert_eq!((format, nr), ('S', r)),
            Apci::U(_) => prop_assert_eq!(format, 'U'),
        }
    }

    #[test]
    fn packed_payload_splits_losslessly(apdus in prop::collection::vec(arb_apdu(), 1..6)) {
        let bytes = encode_all(&apdus).unwrap();
        prop_assert_eq!(split_apdus(&bytes).unwrap(), apdus);
    }
}
