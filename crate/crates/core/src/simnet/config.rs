use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Params, PartyId};

pub const SCENARIO_SCHEMA: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unsupported schema version {0}")]
    Schema(u32),
    #[error("n = {n}, f = {f} violates n = 3f + 1 with f >= 1")]
    Resilience { n: usize, f: usize },
    #[error("{count} Byzantine parties exceed f = {f}")]
    TooManyByzantine { count: usize, f: usize },
    #[error("Byzantine party {0} listed twice or out of range")]
    BadByzantineParty(u16),
    #[error("max_steps must be positive")]
    NoSteps,
    #[error("instances must be positive")]
    NoInstances,
    #[error("overlap_ratio {0} outside [0, 1]")]
    Overlap(f64),
    #[error("policy target {0} out of range")]
    PolicyTarget(u16),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BehaviorSpec {
    /// Honest until the given step, then nothing.
    Crash { at_step: u64 },
    Silent,
    /// Sends one batch to the lower half of the parties and another to the
    /// upper half.
    EquivocatePpb,
    /// Flips a byte in every share it sends.
    CorruptShares,
    /// Never sends PROPOSAL or SUGGESTION.
    WithholdSuggestions,
    /// Sends each agreement vote with a per-recipient random bit.
    RandomVotes,
}

impl BehaviorSpec {
    pub fn label(&self) -> &'static str {
        match self {
            BehaviorSpec::Crash { .. } => "crash",
            BehaviorSpec::Silent => "silent",
            BehaviorSpec::EquivocatePpb => "equivocate-ppb",
            BehaviorSpec::CorruptShares => "corrupt-shares",
            BehaviorSpec::WithholdSuggestions => "withhold-suggestions",
            BehaviorSpec::RandomVotes => "random-votes",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ByzantineEntry {
    pub party: u16,
    #[serde(flatten)]
    pub behavior: BehaviorSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Policy {
    Fifo,
    Random,
    /// Holds every message from or about `target` for `delay` steps.
    /// `None` targets the lowest member of the first committee.
    AdversarialDelay {
        #[serde(default)]
        target: Option<u16>,
        delay: u64,
    },
    /// Holds every message sent by `target` until nothing else is
    /// deliverable or it has waited `budget` steps.
    TargetedStarve {
        #[serde(default)]
        target: Option<u16>,
        budget: u64,
    },
}

impl Policy {
    pub fn label(&self) -> &'static str {
        match self {
            Policy::Fifo => "fifo",
            Policy::Random => "random",
            Policy::AdversarialDelay { .. } => "adversarial-delay",
            Policy::TargetedStarve { .. } => "targeted-starve",
        }
    }

    /// Parses the short names accepted on the command line.
    pub fn from_name(name: &str, n: usize) -> Option<Policy> {
        let budget = 20 * (n * n) as u64;
        match name {
            "fifo" => Some(Policy::Fifo),
            "random" => Some(Policy::Random),
            "adversarial-delay" => Some(Policy::AdversarialDelay {
                target: None,
                delay: budget,
            }),
            "targeted-starve" => Some(Policy::TargetedStarve { target: None, budget }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestScenario {
    pub pool_size: usize,
    pub batch_size: usize,
    /// Fraction of every pool drawn from one shared request set.
    pub overlap_ratio: f64,
    #[serde(default = "default_request_size")]
    pub request_size: usize,
}

fn default_request_size() -> usize {
    32
}

impl Default for RequestScenario {
    fn default() -> Self {
        RequestScenario {
            pool_size: 8,
            batch_size: 4,
            overlap_ratio: 0.0,
            request_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub n: usize,
    pub f: usize,
    pub seed: u64,
    #[serde(default = "default_instances")]
    pub instances: u64,
    #[serde(default)]
    pub byzantine: Vec<ByzantineEntry>,
    #[serde(default)]
    pub scenario: RequestScenario,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
}

fn default_schema() -> u32 {
    SCENARIO_SCHEMA
}
fn default_instances() -> u64 {
    1
}
fn default_policy() -> Policy {
    Policy::Random
}
fn default_max_steps() -> u64 {
    5_000_000
}

impl SimConfig {
    pub fn honest(n: usize, seed: u64) -> SimConfig {
        SimConfig {
            schema: SCENARIO_SCHEMA,
            n,
            f: (n.max(1) - 1) / 3,
            seed,
            instances: 1,
            byzantine: Vec::new(),
            scenario: RequestScenario::default(),
            policy: Policy::Random,
            max_steps: default_max_steps(),
        }
    }

    pub fn validate(&self) -> Result<Params, ConfigError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(ConfigError::Schema(self.schema));
        }
        let params = Params::from_n(self.n)
            .filter(|p| p.f == self.f)
            .ok_or(ConfigError::Resilience { n: self.n, f: self.f })?;
        if self.byzantine.len() > self.f {
            return Err(ConfigError::TooManyByzantine {
                count: self.byzantine.len(),
                f: self.f,
            });
        }
        let mut seen = BTreeSet::new();
        for b in &self.byzantine {
            if b.party as usize >= self.n || !seen.insert(b.party) {
                return Err(ConfigError::BadByzantineParty(b.party));
            }
        }
        if self.max_steps == 0 {
            return Err(ConfigError::NoSteps);
        }
        if self.instances == 0 {
            return Err(ConfigError::NoInstances);
        }
        if !(0.0..=1.0).contains(&self.scenario.overlap_ratio) {
            return Err(ConfigError::Overlap(self.scenario.overlap_ratio));
        }
        match self.policy {
            Policy::AdversarialDelay { target: Some(t), .. } | Policy::TargetedStarve { target: Some(t), .. }
                if t as usize >= self.n =>
            {
                return Err(ConfigError::PolicyTarget(t))
            }
            _ => {}
        }
        Ok(params)
    }

    pub fn behavior(&self, p: PartyId) -> Option<&BehaviorSpec> {
        self.byzantine.iter().find(|b| b.party == p.0).map(|b| &b.behavior)
    }

    pub fn is_honest(&self, p: PartyId) -> bool {
        self.behavior(p).is_none()
    }

    /// Per-party request pools. The first `round(overlap · pool_size)`
    /// entries of every pool are the same shared requests; the rest are
    /// unique to the party.
    pub fn request_pools(&self) -> Vec<Vec<Vec<u8>>> {
        let s = &self.scenario;
        let shared = ((s.overlap_ratio * s.pool_size as f64).round() as usize).min(s.pool_size);
        let mut rng = ChaCha20Rng::from_seed(stream_seed(self.seed, b"requests"));
        let mut make = |owner: u16, idx: u32| {
            let mut r = Vec::with_capacity(s.request_size.max(6));
            r.extend_from_slice(&owner.to_be_bytes());
            r.extend_from_slice(&idx.to_be_bytes());
            let mut fill = vec![0u8; s.request_size.saturating_sub(6)];
            rng.fill_bytes(&mut fill);
            r.extend_from_slice(&fill);
            r
        };
        let common: Vec<Vec<u8>> = (0..shared as u32).map(|i| make(u16::MAX, i)).collect();
        (0..self.n as u16)
            .map(|p| {
                let mut pool = common.clone();
                pool.extend((shared as u32..s.pool_size as u32).map(|i| make(p, i)));
                pool
            })
            .collect()
    }
}

/// Domain-separated 32-byte seed derived from the run seed.
pub fn stream_seed(seed: u64, domain: &[u8]) -> [u8; 32] {
    crate::types::Digest::of_parts(&[b"sim-stream", &seed.to_be_bytes(), domain]).0
}
