use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forge::{forge_response, ForgeError, ForgeOptions, ForgeTemplate};
use super::observe::{ObserveError, Observer, TriggerRule};
use crate::httpmini::HttpServer;
use crate::simnet::SimTime;
use crate::tcpstack::{App, AppEvent, AppIo, Command, ConnId};
use crate::wire;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackPlan {
    pub trigger: TriggerRule,
    pub template: ForgeTemplate,
    pub options: ForgeOptions,
    /// Time from observing the trigger to the forged frame leaving.
    pub delay: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectedFrame {
    pub time: SimTime,
    pub bytes: Vec<u8>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackError {
    Observe(ObserveError),
    Forge(ForgeError),
}

/// Man-on-the-side host: watches the mirror tap, forges on trigger, and
/// injects through its ordinary access port. Optionally serves HTTP (the
/// landing page for redirects).
pub struct AttackerApp {
    pub plan: Option<AttackPlan>,
    pub observer: Observer,
    pub injected: Vec<InjectedFrame>,
    pub errors: Vec<AttackError>,
    pub server: Option<HttpServer>,
    rng: ChaCha8Rng,
}

impl AttackerApp {
    pub fn new(plan: Option<AttackPlan>, seed: u64) -> Self {
        AttackerApp {
            plan,
            observer: Observer::default(),
            injected: Vec::new(),
            errors: Vec::new(),
            server: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_server(mut self, server: HttpServer) -> Self {
        self.server = Some(server);
        self
    }

    fn reason(template: &ForgeTemplate) -> &'static str {
        match template {
            ForgeTemplate::StaticHttpPage(_) => "forged HTTP page",
            ForgeTemplate::HttpRedirect { .. } => "forged HTTP redirect",
            ForgeTemplate::ReplayedApdus(_) => "replayed IEC-104 response",
            ForgeTemplate::CraftedApdus(_) => "crafted IEC-104 response",
        }
    }
}

impl App for AttackerApp {
    fn start(&mut self, io: &mut AppIo) {
        if let Some(s) = self.server.as_mut() {
            s.start(io);
        }
    }

    fn on_event(&mut self, io: &mut AppIo, conn: ConnId, event: AppEvent) {
        if let Some(s) = self.server.as_mut() {
            s.on_event(io, conn, event);
        }
    }

    fn on_tap(&mut self, io: &mut AppIo, frame: &[u8]) {
        let Some(plan) = &self.plan else { return };
        // Traffic to or from the attacker's own services is not a target.
        let own = io.local_ip();
        if wire::decode(frame).is_ok_and(|d| d.packet.ip.src == own || d.packet.ip.dst == own) {
            return;
        }
        let firing = match self.observer.observe(frame, &plan.trigger) {
            Ok(Some(f)) => f,
            Ok(None) => return,
            Err(e) => {
                self.errors.push(AttackError::Observe(e));
                return;
            }
        };
        let packets = match forge_response(&firing, &plan.template, plan.options, &mut self.rng) {
            Ok(p) => p,
            Err(e) => {
                self.errors.push(AttackError::Forge(e));
                return;
            }
        };
        for packet in packets {
            let Ok(bytes) = wire::encode(&packet) else { continue };
            self.injected.push(InjectedFrame {
                time: io.now() + plan.delay,
                bytes: bytes.clone(),
                reason: Self::reason(&plan.template).to_string(),
            });
            io.defer(plan.delay, Command::InjectRaw(bytes));
        }
    }
}
