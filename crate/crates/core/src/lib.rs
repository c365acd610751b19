//! Slim-ABC: asynchronous atomic broadcast with a rotating f + 1 committee,
//! prioritized provable broadcast and binary agreement biased towards 1,
//! run inside a deterministic adversarial network simulator.
//!
//! Layering, bottom up:
//!
//! - [`crypto`]: threshold signatures, named threshold coin, threshold
//!   encryption (trusted-dealer mock).
//! - [`committee`]: per-instance committee election from the coin.
//! - [`ppb`]: provable broadcast restricted to committee senders.
//! - [`abba`]: binary agreement biased towards 1.
//! - [`invocation`]: per-slot vote dissemination, agreement entry, ciphertext
//!   recovery and threshold decryption.
//! - [`protocol`]: the party state machine tying it all together.
//! - [`simnet`]: scheduler, Byzantine behaviours, run-level assertions.
//! - [`metrics`]: run reports and scaling fits.
//!
//! Every state machine is sans-IO: it consumes `(from, message)` events and
//! returns the messages it wants sent.

pub mod abba;
pub mod committee;
pub mod crypto;
pub mod invocation;
pub mod metrics;
pub mod ppb;
pub mod protocol;
pub mod simnet;
pub mod types;
pub mod wire;

pub use crypto::{
    key_setup, Ciphertext, CoinShare, CryptoError, Dealer, DecryptionShare, KeyMaterial, PartyKey,
    SignatureShare, ThresholdSignature, Verifier,
};
pub use committee::Committee;
pub use metrics::{RunReport, ScalingFit};
pub use ppb::{PpbId, PpbProof};
pub use protocol::{OutputSet, Party, RequestBatch};
pub use simnet::config::{BehaviorSpec, Policy, RequestScenario, SimConfig};
pub use simnet::{sim_run, SimError};
pub use types::{Digest, InstanceId, Params, PartyId};
pub use wire::{Body, ProtocolMessage};
