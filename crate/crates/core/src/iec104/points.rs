use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::codec::{Asdu, Cot, Element, InformationObject, TypeId};
use crate::simnet::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointValue {
    Single(bool),
    Double(u8),
    Step(i8),
}

impl PointValue {
    pub fn from_element(e: &Element) -> Option<PointValue> {
        match *e {
            Element::SinglePoint { on, .. } => Some(PointValue::Single(on)),
            Element::DoublePoint { state, .. } => Some(PointValue::Double(state)),
            Element::StepPosition { value, .. } => Some(PointValue::Step(value)),
            Element::Qoi(_) => None,
        }
    }
}

/// Outstation process image, grouped by type for interrogation replies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointConfig {
    pub common_address: u16,
    pub singles: Vec<(u32, bool)>,
    pub doubles: Vec<(u32, u8)>,
    pub steps: Vec<(u32, i8)>,
}

impl PointConfig {
    /// 48 single points, 16 double points and 16 step positions.
    pub fn preset() -> Self {
        PointConfig {
            common_address: 1,
            singles: (0..48).map(|i| (1001 + i, i % 3 == 0)).collect(),
            doubles: (0..16).map(|i| (2001 + i, if i % 2 == 0 { 2 } else { 1 })).collect(),
            steps: (0..16).map(|i| (3001 + i, (i as i8) * 3 - 20)).collect(),
        }
    }

    /// One ASDU per non-empty group, cause Inrogen.
    pub fn interrogation_groups(&self) -> Vec<Asdu> {
        let ca = self.common_address;
        let mut out = Vec::new();
        if !self.singles.is_empty() {
            let objs = self
                .singles
                .iter()
                .map(|&(ioa, on)| InformationObject { ioa, element: Element::SinglePoint { on, quality: 0 } })
                .collect();
            out.push(Asdu::new(TypeId::SinglePoint, Cot::InroGen, ca, objs));
        }
        if !self.doubles.is_empty() {
            let objs = self
                .doubles
                .iter()
                .map(|&(ioa, state)| InformationObject { ioa, element: Element::DoublePoint { state, quality: 0 } })
                .collect();
            out.push(Asdu::new(TypeId::DoublePoint, Cot::InroGen, ca, objs));
        }
        if !self.steps.is_empty() {
            let objs = self
                .steps
                .iter()
                .map(|&(ioa, value)| InformationObject {
                    ioa,
                    element: Element::StepPosition { value, transient: false, quality: 0 },
                })
                .collect();
            out.push(Asdu::new(TypeId::StepPosition, Cot::InroGen, ca, objs));
        }
        out
    }

    pub fn values(&self) -> BTreeMap<u32, PointValue> {
        let mut m = BTreeMap::new();
        m.extend(self.singles.iter().map(|&(a, v)| (a, PointValue::Single(v))));
        m.extend(self.doubles.iter().map(|&(a, v)| (a, PointValue::Double(v))));
        m.extend(self.steps.iter().map(|&(a, v)| (a, PointValue::Step(v))));
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointRecord {
    pub value: PointValue,
    pub updated: SimTime,
}

/// Master-side view of the outstation: last value and when it arrived.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PointTable(pub BTreeMap<u32, PointRecord>);

impl PointTable {
    pub fn apply(&mut self, asdu: &Asdu, now: SimTime) -> usize {
        let mut n = 0;
        for obj in &asdu.objects {
            if let Some(value) = PointValue::from_element(&obj.element) {
                self.0.insert(obj.ioa, PointRecord { value, updated: now });
                n += 1;
            }
        }
        n
    }

    pub fn values(&self) -> BTreeMap<u32, PointValue> {
        self.0.iter().map(|(a, r)| (*a, r.value)).collect()
    }
}
