//! The man-on-the-side attacker, experiment presets and race analysis.

mod attacker;
mod forge;
mod observe;
mod race;
mod scenario;

pub use attacker::{AttackError, AttackPlan, AttackerApp, InjectedFrame};
pub use forge::{forge_payload, forge_response, AckMode, FlagsMode, ForgeError, ForgeOptions, ForgeTemplate};
pub use observe::{DirState, Firing, IecCounters, ObserveError, ObservedConn, Observer, TriggerRule};
pub use race::{race_outcome, DelayDist, RaceModel, RaceResult};
pub use scenario::*;
