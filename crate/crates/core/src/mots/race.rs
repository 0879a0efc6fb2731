use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::simnet::{NodeId, SimTime, Topology};

/// A processing-delay distribution, in microseconds. Negative draws clamp
/// to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DelayDist {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl DelayDist {
    /// Map a uniform and a standard-normal draw to a delay. Using the same
    /// draws across parameter settings keeps comparisons monotone.
    pub fn sample(&self, u: f64, z: f64) -> f64 {
        let v = match *self {
            DelayDist::Constant(c) => c,
            DelayDist::Uniform { lo, hi } => lo + (hi - lo) * u,
            DelayDist::Normal { mean, sd } => mean + sd * z,
        };
        v.max(0.0)
    }

    pub fn shifted(&self, by: f64) -> DelayDist {
        match *self {
            DelayDist::Constant(c) => DelayDist::Constant(c + by),
            DelayDist::Uniform { lo, hi } => DelayDist::Uniform { lo: lo + by, hi: hi + by },
            DelayDist::Normal { mean, sd } => DelayDist::Normal { mean: mean + by, sd },
        }
    }
}

/// Fixed path latencies of one request/response race, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaceModel {
    /// Victim to responder.
    pub request_path: u64,
    /// Responder to victim.
    pub response_path: u64,
    /// Victim to the attacker's tap.
    pub observe_path: u64,
    /// Attacker's access port to victim.
    pub inject_path: u64,
}

impl RaceModel {
    pub fn from_topology(topo: &Topology, victim: NodeId, responder: NodeId, attacker: NodeId) -> Option<Self> {
        let us = |t: SimTime| t.as_micros();
        Some(RaceModel {
            request_path: us(topo.host_latency(victim, responder)?),
            response_path: us(topo.host_latency(responder, victim)?),
            observe_path: us(topo.mirror_latency(victim, attacker)?),
            inject_path: us(topo.host_latency(attacker, victim)?),
        })
    }

    /// Legitimate arrival minus forged arrival, excluding the two random delays.
    pub fn head_start(&self) -> f64 {
        (self.request_path + self.response_path) as f64 - (self.observe_path + self.inject_path) as f64
    }

    /// The attacker wins when its frame arrives strictly first.
    pub fn attacker_wins(&self, attacker_delay: f64, server_delay: f64) -> bool {
        let forged = self.observe_path as f64 + attacker_delay + self.inject_path as f64;
        let legit = self.request_path as f64 + server_delay + self.response_path as f64;
        forged < legit
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaceResult {
    pub trials: u64,
    pub wins: u64,
    pub seed: u64,
}

impl RaceResult {
    pub fn win_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.wins as f64 / self.trials as f64
        }
    }
}

/// Monte-Carlo estimate of how often the forged response wins.
pub fn race_outcome(model: &RaceModel, attacker: DelayDist, server: DelayDist, trials: u64, seed: u64) -> RaceResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0;
    for _ in 0..trials {
        let (ua, us): (f64, f64) = (rng.gen(), rng.gen());
        let za: f64 = rng.sample(StandardNormal);
        let zs: f64 = rng.sample(StandardNormal);
        if model.attacker_wins(attacker.sample(ua, za), server.sample(us, zs)) {
            wins += 1;
        }
    }
    RaceResult { trials, wins, seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL: RaceModel = RaceModel { request_path: 200, response_path: 200, observe_path: 100, inject_path: 200 };

    #[test]
    fn dominance() {
        let r = race_outcome(&MODEL, DelayDist::Uniform { lo: 0.0, hi: 999.0 }, DelayDist::Constant(500_000.0), 1000, 3);
        assert_eq!(r.win_rate(), 1.0);
        let r = race_outcome(&MODEL, DelayDist::Constant(600_000.0), DelayDist::Constant(500_000.0), 1000, 3);
        assert_eq!(r.win_rate(), 0.0);
    }

    #[test]
    fn ties_go_to_the_legitimate_sender() {
        assert!(!MODEL.attacker_wins(500_100.0, 500_000.0));
        assert!(MODEL.attacker_wins(500_099.0, 500_000.0));
    }

    #[test]
    fn deterministic_for_seed() {
        let a = DelayDist::Normal { mean: 100.0, sd: 50.0 };
        let s = DelayDist::Normal { mean: 80.0, sd: 50.0 };
        assert_eq!(race_outcome(&MODEL, a, s, 5000, 9), race_outcome(&MODEL, a, s, 5000, 9));
    }
}
