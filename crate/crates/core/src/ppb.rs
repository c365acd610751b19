//! Prioritized provable broadcast. A committee member multicasts its
//! ciphertext; each receiver countersigns the first payload it sees from
//! that member; n − f countersignatures combine into a proof that at least
//! f + 1 honest parties hold the payload.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::committee::Committee;
use crate::crypto::{Ciphertext, PartyKey, SignatureShare, ThresholdSignature, Verifier};
use crate::types::{Digest, InstanceId, PartyId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PpbError {
    #[error("{0} is not in the committee")]
    NotCommitteeMember(PartyId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PpbId {
    pub instance: InstanceId,
    pub sender: PartyId,
}

/// Bytes every receiver countersigns. Binding the id stops a proof from
/// being replayed into another instance or slot.
pub fn countersign_message(id: PpbId, payload_digest: &Digest) -> Vec<u8> {
    let mut m = Vec::with_capacity(3 + 8 + 2 + 32);
    m.extend_from_slice(b"PPB");
    m.extend_from_slice(&id.instance.0.to_be_bytes());
    m.extend_from_slice(&id.sender.0.to_be_bytes());
    m.extend_from_slice(&payload_digest.0);
    m
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PpbProof {
    pub id: PpbId,
    pub payload_digest: Digest,
    pub signature: ThresholdSignature,
}

impl PpbProof {
    pub fn verify(&self, verifier: &Verifier) -> bool {
        verifier.verify_signature(&countersign_message(self.id, &self.payload_digest), &self.signature)
    }

    pub fn binds(&self, c: &Ciphertext) -> bool {
        self.payload_digest == c.digest()
    }

    /// Valid, for the given slot, and (if given) bound to `c`.
    pub fn certifies(&self, verifier: &Verifier, id: PpbId, c: Option<&Ciphertext>) -> bool {
        self.id == id && c.map_or(true, |c| self.binds(c)) && self.verify(verifier)
    }
}

/// Application predicate on broadcast payloads.
pub trait ExternalValidity: Send + Sync {
    fn is_valid(&self, verifier: &Verifier, payload: &Ciphertext) -> bool;
}

/// Accepts every ciphertext that passes the structural check.
#[derive(Clone, Copy, Debug, Default)]
pub struct WellFormed;

impl ExternalValidity for WellFormed {
    fn is_valid(&self, verifier: &Verifier, payload: &Ciphertext) -> bool {
        verifier.check_ciphertext(payload)
    }
}

/// Sender side: collects countersignatures on its own payload.
#[derive(Debug)]
pub struct PpbSender {
    id: PpbId,
    payload: Ciphertext,
    message: Vec<u8>,
    shares: BTreeMap<PartyId, SignatureShare>,
    proof: Option<PpbProof>,
}

impl PpbSender {
    pub fn new(me: PartyId, payload: Ciphertext, committee: &Committee) -> Result<PpbSender, PpbError> {
        if !committee.contains(me) {
            return Err(PpbError::NotCommitteeMember(me));
        }
        let id = PpbId {
            instance: committee.instance,
            sender: me,
        };
        let message = countersign_message(id, &payload.digest());
        Ok(PpbSender {
            id,
            payload,
            message,
            shares: BTreeMap::new(),
            proof: None,
        })
    }

    pub fn id(&self) -> PpbId {
        self.id
    }

    pub fn payload(&self) -> &Ciphertext {
        &self.payload
    }

    /// Returns the proof exactly once, on the (n − f)-th distinct valid share.
    pub fn on_share(&mut self, from: PartyId, share: SignatureShare, verifier: &Verifier) -> Option<PpbProof> {
        if self.proof.is_some() || self.shares.contains_key(&from) {
            return None;
        }
        if !verifier.verify_share(&self.message, from, &share) {
            return None;
        }
        self.shares.insert(from, share);
        if self.shares.len() < verifier.params().quorum() {
            return None;
        }
        let shares: Vec<SignatureShare> = self.shares.values().cloned().collect();
        let signature = verifier
            .combine_shares(&self.message, &shares)
            .expect("quorum of verified shares");
        let proof = PpbProof {
            id: self.id,
            payload_digest: self.payload.digest(),
            signature,
        };
        self.proof = Some(proof.clone());
        Some(proof)
    }

    pub fn proof(&self) -> Option<&PpbProof> {
        self.proof.as_ref()
    }
}

/// Receiver side for one instance: at most one countersignature per
/// committee sender, and none after abandonment.
#[derive(Debug)]
pub struct PpbReceiver {
    instance: InstanceId,
    countersigned: BTreeMap<PartyId, Digest>,
    received: BTreeMap<PartyId, Ciphertext>,
    abandoned: bool,
}

impl PpbReceiver {
    pub fn new(instance: InstanceId) -> PpbReceiver {
        PpbReceiver {
            instance,
            countersigned: BTreeMap::new(),
            received: BTreeMap::new(),
            abandoned: false,
        }
    }

    /// Returns the countersignature to send back to `from`, if any.
    pub fn on_payload(
        &mut self,
        from: PartyId,
        payload: Ciphertext,
        committee: &Committee,
        key: &PartyKey,
        verifier: &Verifier,
        validity: &dyn ExternalValidity,
    ) -> Option<SignatureShare> {
        if self.abandoned
            || committee.instance != self.instance
            || !committee.contains(from)
            || self.countersigned.contains_key(&from)
            || !validity.is_valid(verifier, &payload)
        {
            return None;
        }
        let digest = payload.digest();
        let id = PpbId {
            instance: self.instance,
            sender: from,
        };
        self.countersigned.insert(from, digest);
        self.received.insert(from, payload);
        Some(key.sig_share(&countersign_message(id, &digest)))
    }

    pub fn abandon(&mut self) {
        self.abandoned = true;
    }

    pub fn is_abandoned(&self) -> bool {
        self.abandoned
    }

    /// The payload this party countersigned for `sender`, if any.
    pub fn received(&self, sender: PartyId) -> Option<&Ciphertext> {
        self.received.get(&sender)
    }

    pub fn countersigned(&self) -> &BTreeMap<PartyId, Digest> {
        &self.countersigned
    }
}
