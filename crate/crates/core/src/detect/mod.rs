//! Offline rule engine over captured TCP streams.
//!
//! | Rule | Behavior it reproduces |
//! |------|------------------------|
//! | R1 | Suricata reassembly overlap with different data |
//! | R2 | Snort data on a stream not accepting data |
//! | R3 | Zeek FIN_advanced_last_seq |
//! | R4 | Zeek window_recision |
//! | R5 | Snort consecutive small segments |
//! | R6 | IEC-104 duplicate interrogation response |
//! | R7 | TTL / IP ID anomaly |

mod rules;
mod stream;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use rules::{
    rule_closed_stream, rule_iec104_semantic, rule_overlap_diff_data, rule_small_segments, rule_ttl_ipid,
    rule_window_recision,
};
pub use stream::{split_streams, Direction, OverlapConflict, Reassembly, Stream, StreamEvent};

use crate::capture::{read_pcap, Capture, CaptureError, SidecarEntry};
use crate::tcpstack::FourTuple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleId {
    R1OverlapDiffData,
    R2DataOnClosedStream,
    R3FinAdvancedLastSeq,
    R4WindowRecision,
    R5SmallSegmentBurst,
    R6Iec104DuplicateResponse,
    R7TtlIpIdAnomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Low,
    Medium,
    High,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
        })
    }
}

impl RuleId {
    pub const ALL: [RuleId; 7] = [
        RuleId::R1OverlapDiffData,
        RuleId::R2DataOnClosedStream,
        RuleId::R3FinAdvancedLastSeq,
        RuleId::R4WindowRecision,
        RuleId::R5SmallSegmentBurst,
        RuleId::R6Iec104DuplicateResponse,
        RuleId::R7TtlIpIdAnomaly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleId::R1OverlapDiffData => "R1_OverlapDiffData",
            RuleId::R2DataOnClosedStream => "R2_DataOnClosedStream",
            RuleId::R3FinAdvancedLastSeq => "R3_FinAdvancedLastSeq",
            RuleId::R4WindowRecision => "R4_WindowRecision",
            RuleId::R5SmallSegmentBurst => "R5_SmallSegmentBurst",
            RuleId::R6Iec104DuplicateResponse => "R6_Iec104DuplicateResponse",
            RuleId::R7TtlIpIdAnomaly => "R7_TtlIpIdAnomaly",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            RuleId::R1OverlapDiffData | RuleId::R6Iec104DuplicateResponse => Severity::High,
            RuleId::R2DataOnClosedStream | RuleId::R3FinAdvancedLastSeq | RuleId::R7TtlIpIdAnomaly => {
                Severity::Medium
            }
            RuleId::R4WindowRecision | RuleId::R5SmallSegmentBurst => Severity::Low,
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleId {
    type Err = String;
    /// Accepts `r1`..`r7` or the full name, case-insensitively.
    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.trim().to_ascii_lowercase();
        RuleId::ALL
            .into_iter()
            .find(|r| {
                let name = r.name().to_ascii_lowercase();
                name == lower || name.split('_').next() == Some(lower.as_str())
            })
            .ok_or_else(|| format!("unknown rule {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alert {
    pub rule: RuleId,
    pub stream: FourTuple,
    pub record_index: usize,
    /// Earlier records the alert is judged against.
    pub related: Vec<usize>,
    pub description: String,
    pub severity: Severity,
}

impl Alert {
    pub fn cites(&self, index: usize) -> bool {
        self.record_index == index || self.related.contains(&index)
    }
}

impl fmt::Display for Alert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.stream;
        write!(
            f,
            "#{} {} [{}] {}:{} <-> {}:{} {}",
            self.record_index, self.rule, self.severity, t.local_ip, t.local_port, t.remote_ip, t.remote_port, self.description
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectConfig {
    pub enabled: BTreeSet<RuleId>,
    pub small_segment_threshold: usize,
    pub small_segment_cutoff: usize,
    pub ttl_exact: bool,
    /// Largest forward IP ID step accepted from a server; `None` disables
    /// the IP ID clause.
    pub ipid_band: Option<u16>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            enabled: RuleId::ALL.into_iter().collect(),
            small_segment_threshold: 5,
            small_segment_cutoff: 16,
            ttl_exact: true,
            ipid_band: Some(64),
        }
    }
}

impl DetectConfig {
    pub fn only(rules: impl IntoIterator<Item = RuleId>) -> Self {
        DetectConfig { enabled: rules.into_iter().collect(), ..Default::default() }
    }
}

/// Alerts from one capture, ordered by record index then rule.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Analysis {
    pub alerts: Vec<Alert>,
}

impl Analysis {
    pub fn count(&self, rule: RuleId) -> usize {
        self.alerts.iter().filter(|a| a.rule == rule).count()
    }

    pub fn fired(&self, rule: RuleId) -> bool {
        self.count(rule) > 0
    }

    pub fn by_rule(&self, rule: RuleId) -> impl Iterator<Item = &Alert> {
        self.alerts.iter().filter(move |a| a.rule == rule)
    }
}

pub fn analyze(capture: &Capture, cfg: &DetectConfig) -> Analysis {
    let on = |r: RuleId| cfg.enabled.contains(&r);
    let mut alerts = Vec::new();
    for s in split_streams(capture) {
        if on(RuleId::R1OverlapDiffData) {
            alerts.extend(rule_overlap_diff_data(&s));
        }
        if on(RuleId::R2DataOnClosedStream) || on(RuleId::R3FinAdvancedLastSeq) {
            alerts.extend(rule_closed_stream(&s).into_iter().filter(|a| on(a.rule)));
        }
        if on(RuleId::R4WindowRecision) {
            alerts.extend(rule_window_recision(&s));
        }
        if on(RuleId::R5SmallSegmentBurst) {
            alerts.extend(rule_small_segments(&s, cfg.small_segment_threshold, cfg.small_segment_cutoff));
        }
        if on(RuleId::R6Iec104DuplicateResponse) {
            alerts.extend(rule_iec104_semantic(&s));
        }
        if on(RuleId::R7TtlIpIdAnomaly) {
            alerts.extend(rule_ttl_ipid(&s, cfg));
        }
    }
    alerts.sort_by(|a, b| (a.record_index, a.rule).cmp(&(b.record_index, b.rule)));
    Analysis { alerts }
}

pub fn analyze_pcap(path: &Path, cfg: &DetectConfig) -> Result<Analysis, CaptureError> {
    Ok(analyze(&read_pcap(path)?, cfg))
}

/// Ground-truth agreement. An alert is a true positive when it cites a
/// forged record; a forged record is recalled when any alert cites it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub alerts: usize,
    pub true_positives: usize,
    pub forged: usize,
    pub recalled: usize,
}

impl Score {
    pub fn precision(&self) -> Option<f64> {
        (self.alerts > 0).then(|| self.true_positives as f64 / self.alerts as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.forged > 0).then(|| self.recalled as f64 / self.forged as f64)
    }
}

pub fn score(analysis: &Analysis, truth: &[SidecarEntry], rule: Option<RuleId>) -> Score {
    let alerts: Vec<&Alert> = analysis.alerts.iter().filter(|a| rule.is_none_or(|r| a.rule == r)).collect();
    let forged: BTreeSet<usize> = truth.iter().map(|e| e.index).collect();
    Score {
        alerts: alerts.len(),
        true_positives: alerts.iter().filter(|a| forged.iter().any(|&f| a.cites(f))).count(),
        forged: forged.len(),
        recalled: forged.iter().filter(|&&f| alerts.iter().any(|a| a.cites(f))).count(),
    }
}

/// Rule by experiment table of alert counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionMatrix {
    pub rules: Vec<RuleId>,
    pub columns: Vec<String>,
    counts: BTreeMap<(RuleId, usize), usize>,
}

impl Default for DetectionMatrix {
    fn default() -> Self {
        Self::for_rules(RuleId::ALL)
    }
}

impl DetectionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn for_rules(rules: impl IntoIterator<Item = RuleId>) -> Self {
        let mut rules: Vec<RuleId> = rules.into_iter().collect();
        rules.sort();
        rules.dedup();
        DetectionMatrix { rules, columns: Vec::new(), counts: BTreeMap::new() }
    }

    pub fn add_column(&mut self, name: impl Into<String>, analysis: &Analysis) {
        let col = self.columns.len();
        self.columns.push(name.into());
        for rule in RuleId::ALL {
            self.counts.insert((rule, col), analysis.count(rule));
        }
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn count(&self, rule: RuleId, column: &str) -> Option<usize> {
        self.column(column).and_then(|c| self.counts.get(&(rule, c)).copied())
    }

    pub fn fired(&self, rule: RuleId, column: &str) -> Option<bool> {
        self.count(rule, column).map(|n| n > 0)
    }

    pub fn render_table(&self) -> String {
        let rule_w = self.rules.iter().map(|r| r.name().len()).max().unwrap_or(0);
        let widths: Vec<usize> = self.columns.iter().map(|c| c.len().max("fired (99)".len())).collect();
        let mut out = format!("{:<rule_w$}", "rule");
        for (c, w) in self.columns.iter().zip(&widths) {
            out.push_str(&format!("  {c:<w$}"));
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
        for &rule in &self.rules {
            out.push_str(&format!("{:<rule_w$}", rule.name()));
            for (i, w) in widths.iter().enumerate() {
                let n = self.counts.get(&(rule, i)).copied().unwrap_or(0);
                let cell = if n > 0 { format!("fired ({n})") } else { "silent".to_string() };
                out.push_str(&format!("  {cell:<w$}"));
            }
            out.truncate(out.trim_end().len());
            out.push('\n');
        }
        out
    }

    /// One `matrix.<rule>.<column>=<fired|silent> count=<n>` line per cell.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        for &rule in &self.rules {
            for (i, col) in self.columns.iter().enumerate() {
                let n = self.counts.get(&(rule, i)).copied().unwrap_or(0);
                let state = if n > 0 { "fired" } else { "silent" };
                out.push_str(&format!("matrix.{}.{col}={state} count={n}\n", rule.name()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_names_parse() {
        for r in RuleId::ALL {
            assert_eq!(r.name().parse::<RuleId>().unwrap(), r);
        }
        assert_eq!("r4".parse::<RuleId>().unwrap(), RuleId::R4WindowRecision);
        assert!("r8".parse::<RuleId>().is_err());
    }

    #[test]
    fn matrix_rendering() {
        let mut m = DetectionMatrix::new();
        m.add_column("a", &Analysis::default());
        assert_eq!(m.fired(RuleId::R1OverlapDiffData, "a"), Some(false));
        assert_eq!(m.fired(RuleId::R1OverlapDiffData, "b"), None);
        assert!(m.render_kv().starts_with("matrix.R1_OverlapDiffData.a=silent count=0\n"));
        assert_eq!(m.render_table().lines().count(), 8);
    }
}
