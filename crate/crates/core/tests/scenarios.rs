use mots_core::capture::Annotation;
use mots_core::httpmini::ConnectionOutcome;
use mots_core::iec104::{PointValue, SequenceFault};
use mots_core::mots::*;
use mots_core::simnet::{SimTime, TopologySpec};
use mots_core::tcpstack::CloseReason;

fn run(exp: Experiment) -> ScenarioOutcome {
    run_experiment(&ScenarioConfig::new(exp, 1)).expect("scenario runs")
}

#[test]
fn baseline_http_renders_legitimate_page() {
    let o = run(Experiment::BaselineHttp);
    let h = o.http.unwrap();
    assert_eq!(h.view.rendered_body, LEGIT_PAGE.as_bytes());
    assert_eq!(h.view.connection_outcome, ConnectionOutcome::ClosedByFin);
    assert!(o.injected.is_empty() && o.sidecar.is_empty());
}

#[test]
fn exp1_forged_page_wins_and_legit_response_is_refused() {
    let o = run(Experiment::Exp1);
    let h = o.http.as_ref().unwrap();
    assert_eq!(h.view.rendered_body, FORGED_PAGE.as_bytes());
    assert_eq!(h.view.status, Some(200));
    assert_eq!(h.server_log.len(), 1, "the real server still answers");
    assert_eq!(o.sidecar.len(), 1);
    // The real response still crosses the mirror, after the forged one.
    let forged = o.sidecar[0].index;
    let legit = o
        .capture
        .records
        .iter()
        .find(|r| r.index > forged && r.packet().is_some_and(|p| p.payload.len() > 200))
        .expect("legitimate response captured");
    assert!(legit.has(Annotation::OutOfOrder));
}

#[test]
fn exp2_redirect_is_followed_to_attacker() {
    let o = run(Experiment::Exp2);
    let h = o.http.unwrap();
    assert_eq!(h.view.followed_redirects, vec![REDIRECT_TARGET.to_string()]);
    assert_eq!(h.view.rendered_body, ATTACKER_PAGE.as_bytes());
    assert_eq!(h.attacker_log.len(), 1);
    assert_eq!(o.sidecar.len(), 1, "the attacker's own server traffic is not a target");
}

#[test]
fn slow_attacker_loses_the_race() {
    let mut cfg = ScenarioConfig::new(Experiment::Exp1, 1);
    cfg.attacker_delay = SimTime::from_millis(501);
    let o = run_experiment(&cfg).unwrap();
    assert_eq!(o.http.unwrap().view.rendered_body, LEGIT_PAGE.as_bytes());
    assert_eq!(o.injected.len(), 1, "the forgery is still sent");
}

#[test]
fn baseline_iec104_reads_every_point() {
    let o = run(Experiment::BaselineIec104);
    let i = o.iec.unwrap();
    assert_eq!(i.points.values(), i.configured);
    assert_eq!(i.s_frames, vec![5]);
    assert_eq!(i.hmi_closed, Some(CloseReason::Normal));
    assert_eq!(i.plc_fault, None);
}

#[test]
fn exp3_replay_is_accepted_and_legitimate_copy_is_spurious() {
    let o = run(Experiment::Exp3);
    let i = o.iec.as_ref().unwrap();
    assert_eq!(i.points.values(), i.configured, "replayed values are identical");
    assert_eq!(i.s_frames, vec![5]);
    assert_eq!(i.plc_fault.map(|f| f.1), Some(SequenceFault::ReceiveSequence { nr: 5, released: 1 }));
    assert_eq!(i.hmi_closed, Some(CloseReason::Timeout));
    let closed_at = i.hmi_closed_at.unwrap();
    assert!(closed_at > SimTime::from_secs(17) && closed_at < SimTime::from_secs(18), "{closed_at}");

    let forged = &o.capture.records[o.sidecar[0].index - 1];
    let spurious: Vec<_> = o.capture.records.iter().filter(|r| r.has(Annotation::SpuriousRetransmission)).collect();
    assert_eq!(spurious.len(), 1);
    assert_eq!(spurious[0].packet().unwrap().payload, forged.packet().unwrap().payload);
    assert!(o.capture.records.iter().any(|r| r.has(Annotation::DupAck)));
}

#[test]
fn exp4_crafted_values_reach_the_hmi() {
    let o = run(Experiment::Exp4);
    let i = o.iec.as_ref().unwrap();
    let v = i.points.values();
    assert_eq!(v.len(), 2);
    let steps: Vec<_> = v.values().cloned().collect();
    assert_eq!(steps, FORGED_STEPS.iter().map(|&s| PointValue::Step(s)).collect::<Vec<_>>());
    assert_eq!(i.s_frames, vec![4]);
    assert_eq!(i.hmi_closed, Some(CloseReason::Timeout));
    let forged = o.capture.records[o.sidecar[0].index - 1].packet().unwrap();
    assert_eq!(forged.payload.len(), 66);
}

#[test]
fn preset_topology_mismatch_is_reported() {
    let mut cfg = ScenarioConfig::new(Experiment::Exp3, 1);
    cfg.topology = Some(http_lab());
    match run_experiment(&cfg) {
        Err(ScenarioError::PresetMismatch(name, Experiment::Exp3)) => assert_eq!(name, "HMI"),
        other => panic!("expected mismatch, got {:?}", other.map(|o| o.config)),
    }
}

#[test]
fn builtin_topologies_parse() {
    for t in [HTTP_LAB, SCADA_LAB] {
        TopologySpec::from_toml(t).unwrap();
    }
}
