use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::attacker::{AttackError, AttackPlan, AttackerApp, InjectedFrame};
use super::forge::{AckMode, FlagsMode, ForgeOptions, ForgeTemplate};
use super::observe::TriggerRule;
use crate::capture::{Capture, SidecarEntry};
use crate::httpmini::{ClientView, HttpClient, HttpServer, ServerLogEntry, Uri};
use crate::iec104::{
    split_apdus, Asdu, Cot, Element, FaultPolicy, HmiApp, Iec104Params, InformationObject, PlcApp, PointConfig,
    PointTable, PointValue, SequenceFault, TypeId, IEC104_PORT,
};
use crate::simnet::{build_topology, HostInfo, SimError, SimReport, SimTime, Simulator, Topology, TopologyError, TopologySpec};
use crate::tcpstack::{CloseReason, HostConfig, OverlapPolicy, TcpHost};
use crate::wire;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Experiment {
    BaselineHttp,
    BaselineIec104,
    /// Forged page with FIN.
    Exp1,
    /// Forged redirect.
    Exp2,
    /// Replayed interrogation response.
    Exp3,
    /// Truncated interrogation response with two step positions.
    Exp4,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Exp1,
        Experiment::Exp2,
        Experiment::Exp3,
        Experiment::Exp4,
        Experiment::BaselineHttp,
        Experiment::BaselineIec104,
    ];

    pub fn is_http(self) -> bool {
        matches!(self, Experiment::BaselineHttp | Experiment::Exp1 | Experiment::Exp2)
    }

    pub fn is_attack(self) -> bool {
        !matches!(self, Experiment::BaselineHttp | Experiment::BaselineIec104)
    }

    /// Short name used for output directories and matrix columns.
    pub fn slug(self) -> &'static str {
        match self {
            Experiment::BaselineHttp => "baseline-http",
            Experiment::BaselineIec104 => "baseline-iec104",
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Exp3 => "exp3",
            Experiment::Exp4 => "exp4",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "1" | "exp1" => Experiment::Exp1,
            "2" | "exp2" => Experiment::Exp2,
            "3" | "exp3" => Experiment::Exp3,
            "4" | "exp4" => Experiment::Exp4,
            "baseline-http" => Experiment::BaselineHttp,
            "baseline-iec104" => Experiment::BaselineIec104,
            other => return Err(format!("unknown experiment {other:?} (1-4, baseline-http, baseline-iec104)")),
        })
    }
}

pub const HTTP_LAB: &str = include_str!("../../topologies/http_lab.toml");
pub const SCADA_LAB: &str = include_str!("../../topologies/scada_lab.toml");

pub fn http_lab() -> TopologySpec {
    TopologySpec::from_toml(HTTP_LAB).expect("built-in topology parses")
}

pub fn scada_lab() -> TopologySpec {
    TopologySpec::from_toml(SCADA_LAB).expect("built-in topology parses")
}

pub const LEGIT_PAGE: &str = "<html><head><title>Plant portal</title></head><body><h1>Plant portal</h1>\
<p>Welcome. Shift reports, maintenance windows and contact numbers are listed below.</p></body></html>";
pub const FORGED_PAGE: &str = "<html><body><h1>Injected</h1></body></html>";
pub const ATTACKER_PAGE: &str = "<html><body><h1>Attacker landing page</h1></body></html>";
pub const REDIRECT_TARGET: &str = "http://10.0.0.66/";

/// Values the Exp 4 forgery reports for the first two step positions.
pub const FORGED_STEPS: [i8; 2] = [42, -42];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub server_delay: SimTime,
    pub attacker_delay: SimTime,
    /// Defaults per family: standard for HTTP, request-seq for IEC-104.
    pub ack_mode: Option<AckMode>,
    pub flags: Option<FlagsMode>,
    pub ttl_skew: i8,
    pub client_overlap: OverlapPolicy,
    pub plc_policy: FaultPolicy,
    pub topology: Option<TopologySpec>,
    pub time_cap: SimTime,
}

impl ScenarioConfig {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        ScenarioConfig {
            experiment,
            seed,
            server_delay: SimTime::from_millis(500),
            attacker_delay: SimTime::from_micros(50),
            ack_mode: None,
            flags: None,
            ttl_skew: 0,
            client_overlap: OverlapPolicy::Discard,
            plc_policy: FaultPolicy::Stall,
            topology: None,
            time_cap: SimTime::from_secs(60),
        }
    }

    pub fn forge_options(&self) -> ForgeOptions {
        let http = self.experiment.is_http();
        ForgeOptions {
            flags: self.flags.unwrap_or(if http { FlagsMode::FinAck } else { FlagsMode::PushAck }),
            ack: self.ack_mode.unwrap_or(if http { AckMode::Standard } else { AckMode::RequestSeq }),
            ttl_skew: self.ttl_skew,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("topology lacks host {0:?} required by {1}")]
    PresetMismatch(String, Experiment),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("baseline run produced no interrogation response to replay")]
    NoReplaySource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpOutcome {
    pub view: ClientView,
    pub server_log: Vec<ServerLogEntry>,
    pub attacker_log: Vec<ServerLogEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IecOutcome {
    pub points: PointTable,
    pub configured: BTreeMap<u32, PointValue>,
    pub hmi_closed: Option<CloseReason>,
    pub hmi_closed_at: Option<SimTime>,
    pub s_frames: Vec<u16>,
    pub protocol_error: bool,
    pub plc_fault: Option<(SimTime, SequenceFault)>,
    pub plc_closed: Option<CloseReason>,
    pub plc_released: u16,
    pub plc_probes: u32,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub report: SimReport,
    /// Mirror-port capture, annotated, with ground truth marked.
    pub capture: Capture,
    pub injected: Vec<InjectedFrame>,
    pub sidecar: Vec<SidecarEntry>,
    pub attack_errors: Vec<AttackError>,
    pub http: Option<HttpOutcome>,
    pub iec: Option<IecOutcome>,
}

fn host<'a>(topo: &'a Topology, name: &str, exp: Experiment) -> Result<&'a HostInfo, ScenarioError> {
    topo.host_by_name(name).ok_or_else(|| ScenarioError::PresetMismatch(name.to_string(), exp))
}

fn host_config(topo: &Topology, h: &HostInfo, seed: u64) -> HostConfig {
    // Distinct, reproducible stream per host.
    let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(u64::from(h.id.0) + 1);
    HostConfig::from_topology(topo, h, s)
}

fn crafted_exp4(points: &PointConfig) -> Vec<Asdu> {
    let ca = points.common_address;
    let step = |ioa: u32, value: i8| {
        Asdu::new(
            TypeId::StepPosition,
            Cot::InroGen,
            ca,
            vec![InformationObject { ioa, element: Element::StepPosition { value, transient: false, quality: 0 } }],
        )
    };
    let ioas: Vec<u32> = points.steps.iter().map(|(a, _)| *a).take(2).collect();
    let (a, b) = (ioas.first().copied().unwrap_or(1), ioas.get(1).copied().unwrap_or(2));
    vec![
        Asdu::interrogation(Cot::ActCon, ca),
        step(a, FORGED_STEPS[0]),
        step(b, FORGED_STEPS[1]),
        Asdu::interrogation(Cot::ActTerm, ca),
    ]
}

/// The outstation's interrogation data segment (everything after ActCon)
/// from a capture.
pub fn gi_response_payload(capture: &Capture) -> Option<Vec<u8>> {
    capture.records.iter().find_map(|r| {
        let p = wire::decode(&r.bytes).ok()?.packet;
        if p.tcp.src_port != IEC104_PORT {
            return None;
        }
        let apdus = split_apdus(&p.payload).ok()?;
        apdus.iter().any(|a| a.asdu.as_ref().is_some_and(|s| s.cot == Cot::InroGen)).then_some(p.payload)
    })
}

pub fn run_experiment(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, ScenarioError> {
    let exp = cfg.experiment;
    let spec = cfg.topology.clone().unwrap_or_else(|| if exp.is_http() { http_lab() } else { scada_lab() });
    let mut topo = build_topology(&spec)?;
    let (victim_name, responder_name) = if exp.is_http() { ("Client", "Server") } else { ("HMI", "PLC") };
    let victim = host(&topo, victim_name, exp)?.clone();
    let responder_id = host(&topo, responder_name, exp)?.id;
    let attacker = host(&topo, "Attacker", exp)?.clone();
    topo.hosts[responder_id.index()].processing_delay = cfg.server_delay;
    let responder = topo.hosts[responder_id.index()].clone();

    let points = PointConfig::preset();
    let plan = match exp {
        Experiment::BaselineHttp | Experiment::BaselineIec104 => None,
        Experiment::Exp1 => Some((TriggerRule::http_get("/"), ForgeTemplate::StaticHttpPage(FORGED_PAGE.into()))),
        Experiment::Exp2 => Some((
            TriggerRule::http_get("/"),
            ForgeTemplate::HttpRedirect { status: 301, location: REDIRECT_TARGET.into() },
        )),
        Experiment::Exp3 => {
            let baseline = run_experiment(&ScenarioConfig { experiment: Experiment::BaselineIec104, ..cfg.clone() })?;
            let payload = gi_response_payload(&baseline.capture).ok_or(ScenarioError::NoReplaySource)?;
            Some((TriggerRule::Iec104ActCon, ForgeTemplate::ReplayedApdus(payload)))
        }
        Experiment::Exp4 => Some((TriggerRule::Iec104ActCon, ForgeTemplate::CraftedApdus(crafted_exp4(&points)))),
    }
    .map(|(trigger, template)| AttackPlan { trigger, template, options: cfg.forge_options(), delay: cfg.attacker_delay });

    let mut sim = Simulator::new(topo.clone()).with_time_cap(cfg.time_cap);
    let attacker_seed = cfg.seed ^ 0xA77A_C4E5;
    let mut attacker_app = AttackerApp::new(plan, attacker_seed);
    if exp == Experiment::Exp2 {
        attacker_app = attacker_app.with_server(HttpServer::single_page(ATTACKER_PAGE, SimTime::ZERO));
    }
    sim.install(attacker.id, Box::new(TcpHost::new(host_config(&topo, &attacker, cfg.seed), attacker_app)));

    let mut victim_cfg = host_config(&topo, &victim, cfg.seed);
    victim_cfg.tcp.overlap = cfg.client_overlap;
    if exp.is_http() {
        let server = HttpServer::single_page(LEGIT_PAGE, cfg.server_delay);
        sim.install(responder.id, Box::new(TcpHost::new(host_config(&topo, &responder, cfg.seed), server)));
        let uri = Uri { host: responder.ip.to_string(), port: 80, path: "/".into() };
        let resolver = topo.hosts.iter().map(|h| (h.name.clone(), h.ip)).collect();
        sim.install(victim.id, Box::new(TcpHost::new(victim_cfg, HttpClient::new(uri, resolver))));
    } else {
        let plc = PlcApp::new(points.clone(), cfg.plc_policy);
        sim.install(responder.id, Box::new(TcpHost::new(host_config(&topo, &responder, cfg.seed), plc)));
        let hmi = HmiApp::new(responder.ip, Iec104Params::default(), points.common_address);
        sim.install(victim.id, Box::new(TcpHost::new(victim_cfg, hmi)));
    }

    let report = sim.run_until_idle()?;
    let attacker_host = sim.host_as::<TcpHost<AttackerApp>>(attacker.id).expect("attacker installed");
    let injected = attacker_host.app.injected.clone();
    let attack_errors = attacker_host.app.errors.clone();

    let mut capture = Capture::from_trace(sim.trace(), attacker.id);
    capture.annotate();
    let frames: Vec<Vec<u8>> = injected.iter().map(|f| f.bytes.clone()).collect();
    capture.mark_forged(&frames);
    let sidecar = capture
        .records
        .iter()
        .filter(|r| r.has(crate::capture::Annotation::GroundTruthForged))
        .map(|r| SidecarEntry {
            index: r.index,
            reason: injected.iter().find(|f| f.bytes == r.bytes).map(|f| f.reason.clone()).unwrap_or_default(),
        })
        .collect();

    let (http, iec) = if exp.is_http() {
        let client = &sim.host_as::<TcpHost<HttpClient>>(victim.id).expect("client installed").app;
        let server = &sim.host_as::<TcpHost<HttpServer>>(responder.id).expect("server installed").app;
        let attacker_log = attacker_host.app.server.as_ref().map(|s| s.log.clone()).unwrap_or_default();
        (Some(HttpOutcome { view: client.view.clone(), server_log: server.log.clone(), attacker_log }), None)
    } else {
        let hmi = &sim.host_as::<TcpHost<HmiApp>>(victim.id).expect("hmi installed").app;
        let plc = &sim.host_as::<TcpHost<PlcApp>>(responder.id).expect("plc installed").app;
        let outcome = IecOutcome {
            points: hmi.session.points.clone(),
            configured: points.values(),
            hmi_closed: hmi.closed,
            hmi_closed_at: hmi.closed_at,
            s_frames: hmi.session.s_frames_sent.clone(),
            protocol_error: hmi.session.protocol_error,
            plc_fault: plc.fault,
            plc_closed: plc.closed,
            plc_released: plc.session.as_ref().map_or(0, |s| s.released),
            plc_probes: plc.probes_sent,
        };
        (None, Some(outcome))
    };

    Ok(ScenarioOutcome {
        config: cfg.clone(),
        topology: topo,
        report,
        capture,
        injected,
        sidecar,
        attack_errors,
        http,
        iec,
    })
}

fn lossy(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// Plain-text run summary: configuration, simulator counters, injected
/// frames and the victim-side outcome.
pub fn render_report(o: &ScenarioOutcome) -> String {
    use std::fmt::Write;
    let c = &o.config;
    let opts = c.forge_options();
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", c.experiment);
    let _ = writeln!(s, "seed: {}", c.seed);
    let _ = writeln!(s, "server_delay: {}", c.server_delay);
    let _ = writeln!(s, "attacker_delay: {}", c.attacker_delay);
    let _ = writeln!(s, "forge: flags={:?} ack={:?} ttl_skew={}", opts.flags, opts.ack, opts.ttl_skew);
    let r = &o.report;
    let _ = writeln!(s, "sim: outcome={:?} end={} events={} delivered={} dropped={} mirrored={}",
        r.outcome, r.end_time, r.events_processed, r.delivered, r.dropped, r.mirrored);
    let _ = writeln!(s, "captured: {} frames", o.capture.len());
    for f in &o.injected {
        let _ = writeln!(s, "injected: t={} len={} {}", f.time, f.bytes.len(), f.reason);
    }
    for e in &o.sidecar {
        let _ = writeln!(s, "forged_record: {}", e.index);
    }
    for e in &o.attack_errors {
        let _ = writeln!(s, "attack_error: {e:?}");
    }
    if let Some(h) = &o.http {
        let v = &h.view;
        let _ = writeln!(s, "client_status: {}", v.status.map_or("none".into(), |x| x.to_string()));
        let _ = writeln!(s, "client_connection: {:?}", v.connection_outcome);
        for u in &v.followed_redirects {
            let _ = writeln!(s, "client_redirect: {u}");
        }
        let _ = writeln!(s, "client_body: {}", lossy(&v.rendered_body));
        let _ = writeln!(s, "content_length_mismatch: {}", v.content_length_mismatch);
        for e in &h.server_log {
            let _ = writeln!(s, "server_log: t={} {} {} {}", e.time, e.method, e.path, e.status);
        }
        for e in &h.attacker_log {
            let _ = writeln!(s, "attacker_log: t={} {} {} {}", e.time, e.method, e.path, e.status);
        }
    }
    if let Some(i) = &o.iec {
        let values = i.points.values();
        let stale = i.configured.iter().filter(|(k, v)| values.get(k) == Some(v)).count();
        let _ = writeln!(s, "hmi_points: {} received, {} match the outstation", values.len(), stale);
        for (ioa, v) in values.iter().filter(|(k, v)| i.configured.get(k) != Some(v)) {
            let _ = writeln!(s, "hmi_point_mismatch: ioa={ioa} value={v:?} outstation={:?}", i.configured.get(ioa));
        }
        let _ = writeln!(s, "hmi_s_frames: {:?}", i.s_frames);
        let _ = writeln!(s, "hmi_closed: {:?} at {}", i.hmi_closed, i.hmi_closed_at.map_or("-".into(), |t| t.to_string()));
        let _ = writeln!(s, "plc_released: {}", i.plc_released);
        let _ = writeln!(s, "plc_fault: {:?}", i.plc_fault);
        let _ = writeln!(s, "plc_closed: {:?}", i.plc_closed);
    }
    s
}
