//! Per-slot driver around one agreement instance: V-message voting,
//! agreement input, ciphertext recovery and threshold decryption.
//!
//! V-messages carry the provable-broadcast proof but not the ciphertext.
//! A party that ends up deciding 1 without the ciphertext asks for it with
//! RECOVER; any holder answers, and the proof's digest picks the right one.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::abba::AbbaId;
use crate::crypto::{Ciphertext, DecryptionShare, PartyKey, Verifier};
use crate::ppb::PpbProof;
use crate::types::{Digest, PartyId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvError {
    #[error("invocation already started")]
    AlreadyStarted,
    #[error("proof does not certify this slot and ciphertext")]
    InvalidProof,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InvMsg {
    V { u: bool, proof: Option<PpbProof> },
    Recover,
    DecShare(DecryptionShare),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SlotOutcome {
    /// The slot was decided 0 and contributes nothing.
    Excluded,
    /// Decrypted batch bytes.
    Included(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InvOut {
    Multicast(InvMsg),
    AbbaInput { bit: bool, evidence: Option<PpbProof> },
    Outcome(SlotOutcome),
}

pub struct Invocation {
    id: AbbaId,
    key: PartyKey,
    verifier: Verifier,
    started: bool,
    u: bool,
    proof: Option<PpbProof>,
    ciphertext: Option<Ciphertext>,
    v_received: BTreeMap<PartyId, bool>,
    abba_input: Option<bool>,
    decided: Option<bool>,
    recover_sent: bool,
    candidates: BTreeMap<Digest, Ciphertext>,
    dec_shares: BTreeMap<PartyId, DecryptionShare>,
    dec_sent: bool,
    outcome: Option<SlotOutcome>,
}

impl std::fmt::Debug for Invocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Invocation")
            .field("id", &self.id)
            .field("u", &self.u)
            .field("abba_input", &self.abba_input)
            .field("decided", &self.decided)
            .field("outcome", &self.outcome.is_some())
            .finish_non_exhaustive()
    }
}

impl Invocation {
    pub fn new(id: AbbaId, key: PartyKey, verifier: Verifier) -> Invocation {
        Invocation {
            id,
            key,
            verifier,
            started: false,
            u: false,
            proof: None,
            ciphertext: None,
            v_received: BTreeMap::new(),
            abba_input: None,
            decided: None,
            recover_sent: false,
            candidates: BTreeMap::new(),
            dec_shares: BTreeMap::new(),
            dec_sent: false,
            outcome: None,
        }
    }

    pub fn started(&self) -> bool {
        self.started
    }

    pub fn u(&self) -> bool {
        self.u
    }

    pub fn abba_input(&self) -> Option<bool> {
        self.abba_input
    }

    pub fn decided(&self) -> Option<bool> {
        self.decided
    }

    pub fn outcome(&self) -> Option<&SlotOutcome> {
        self.outcome.as_ref()
    }

    pub fn proof(&self) -> Option<&PpbProof> {
        self.proof.as_ref()
    }

    pub fn ciphertext(&self) -> Option<&Ciphertext> {
        self.ciphertext.as_ref()
    }

    /// Both the ciphertext and a proof binding it.
    pub fn holds(&self) -> bool {
        self.ciphertext.is_some() && self.proof.is_some()
    }

    pub fn v_count(&self) -> usize {
        self.v_received.len()
    }

    pub fn start(&mut self, bit: bool, payload: Option<(Ciphertext, PpbProof)>) -> Result<Vec<InvOut>, InvError> {
        if self.started {
            return Err(InvError::AlreadyStarted);
        }
        let mut out = Vec::new();
        if bit {
            let (c, proof) = payload.ok_or(InvError::InvalidProof)?;
            if !proof.certifies(&self.verifier, self.id.ppb_id(), Some(&c)) {
                return Err(InvError::InvalidProof);
            }
            self.u = true;
            self.learn(Some(c), Some(proof), &mut out);
        }
        self.started = true;
        out.insert(
            0,
            InvOut::Multicast(InvMsg::V {
                u: self.u,
                proof: if self.u { self.proof.clone() } else { None },
            }),
        );
        self.try_input(&mut out);
        Ok(out)
    }

    /// A suggestion for a slot whose invocation already started: switch
    /// the pending vote to 1 if the agreement has no input yet.
    pub fn upgrade(&mut self, c: Ciphertext, proof: PpbProof) -> Vec<InvOut> {
        let mut out = Vec::new();
        if !proof.certifies(&self.verifier, self.id.ppb_id(), Some(&c)) {
            return out;
        }
        if self.abba_input.is_none() {
            self.u = true;
        }
        self.learn(Some(c), Some(proof), &mut out);
        out
    }

    /// Records material from any source. The proof is checked; a
    /// ciphertext is only adopted once a proof binds it.
    pub fn learn(&mut self, c: Option<Ciphertext>, proof: Option<PpbProof>, out: &mut Vec<InvOut>) {
        if self.proof.is_none() {
            if let Some(p) = proof.filter(|p| p.certifies(&self.verifier, self.id.ppb_id(), None)) {
                self.proof = Some(p);
            }
        }
        if self.ciphertext.is_none() {
            if let Some(c) = c {
                if self.verifier.check_ciphertext(&c) {
                    self.candidates.entry(c.digest()).or_insert(c);
                }
            }
            if let Some(p) = &self.proof {
                if let Some(c) = self.candidates.remove(&p.payload_digest) {
                    self.candidates.clear();
                    self.ciphertext = Some(c);
                    self.after_ciphertext(out);
                }
            }
        }
    }

    pub fn on_v(&mut self, from: PartyId, u: bool, proof: Option<PpbProof>) -> Vec<InvOut> {
        let mut out = Vec::new();
        if self.v_received.contains_key(&from) {
            return out;
        }
        // an unprovable 1 counts as a 0 so the tally still advances
        let valid_one = u && proof.as_ref().is_some_and(|p| p.certifies(&self.verifier, self.id.ppb_id(), None));
        self.v_received.insert(from, valid_one);
        if valid_one {
            if self.abba_input.is_none() {
                self.u = true;
            }
            self.learn(None, proof, &mut out);
        }
        self.try_input(&mut out);
        out
    }

    fn try_input(&mut self, out: &mut Vec<InvOut>) {
        if !self.started || self.abba_input.is_some() || self.v_received.len() < self.verifier.params().quorum() {
            return;
        }
        self.abba_input = Some(self.u);
        out.push(InvOut::AbbaInput {
            bit: self.u,
            evidence: if self.u { self.proof.clone() } else { None },
        });
    }

    pub fn on_abba_decided(&mut self, bit: bool) -> Vec<InvOut> {
        let mut out = Vec::new();
        if self.decided.is_some() {
            return out;
        }
        self.decided = Some(bit);
        if !bit {
            self.outcome = Some(SlotOutcome::Excluded);
            out.push(InvOut::Outcome(SlotOutcome::Excluded));
        } else if self.ciphertext.is_some() {
            self.after_ciphertext(&mut out);
        } else if !self.recover_sent {
            self.recover_sent = true;
            out.push(InvOut::Multicast(InvMsg::Recover));
        }
        out
    }

    /// What this party can offer a RECOVER request.
    pub fn recover_response(&self) -> Option<(Ciphertext, Option<PpbProof>)> {
        self.ciphertext.clone().map(|c| (c, self.proof.clone()))
    }

    pub fn recovering(&self) -> bool {
        self.recover_sent && self.ciphertext.is_none()
    }

    pub fn on_dec_share(&mut self, from: PartyId, share: DecryptionShare) -> Vec<InvOut> {
        let mut out = Vec::new();
        if share.holder != from || self.outcome.is_some() {
            return out;
        }
        self.dec_shares.entry(from).or_insert(share);
        self.try_decrypt(&mut out);
        out
    }

    fn after_ciphertext(&mut self, out: &mut Vec<InvOut>) {
        if self.decided != Some(true) {
            return;
        }
        if !self.dec_sent {
            self.dec_sent = true;
            let c = self.ciphertext.as_ref().expect("ciphertext held");
            out.push(InvOut::Multicast(InvMsg::DecShare(self.key.tpke_dec_share(c))));
        }
        self.try_decrypt(out);
    }

    fn try_decrypt(&mut self, out: &mut Vec<InvOut>) {
        if self.outcome.is_some() || self.decided != Some(true) {
            return;
        }
        let Some(c) = &self.ciphertext else { return };
        let digest = c.digest();
        let verifier = &self.verifier;
        self.dec_shares.retain(|_, s| verifier.verify_dec_share(&digest, s));
        if self.dec_shares.len() <= verifier.params().f {
            return;
        }
        let shares: Vec<DecryptionShare> = self.dec_shares.values().cloned().collect();
        let plain = verifier.tpke_dec(c, &shares).expect("f + 1 verified shares on a bound ciphertext");
        let outcome = SlotOutcome::Included(plain);
        self.outcome = Some(outcome.clone());
        out.push(InvOut::Outcome(outcome));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Dealer;
    use crate::ppb::countersign_message;
    use crate::types::InstanceId;

    const ID: AbbaId = AbbaId {
        instance: InstanceId(1),
        slot: PartyId(2),
    };

    fn proof_for(d: &Dealer, c: &Ciphertext) -> PpbProof {
        let v = d.verifier();
        let msg = countersign_message(ID.ppb_id(), &c.digest());
        let shares: Vec<_> = v.params().parties().map(|p| d.party_key(p).sig_share(&msg)).collect();
        PpbProof {
            id: ID.ppb_id(),
            payload_digest: c.digest(),
            signature: v.combine_shares(&msg, &shares).unwrap(),
        }
    }

    fn setup() -> (Dealer, Ciphertext, PpbProof) {
        let d = Dealer::with_seed(4, 11).unwrap();
        let c = d.verifier().tpke_enc(b"the batch");
        let p = proof_for(&d, &c);
        (d, c, p)
    }

    fn inv(d: &Dealer, me: u16) -> Invocation {
        Invocation::new(ID, d.party_key(PartyId(me)), d.verifier())
    }

    #[test]
    fn start_with_one_and_zero() {
        let (d, c, p) = setup();
        let mut a = inv(&d, 0);
        let out = a.start(true, Some((c.clone(), p.clone()))).unwrap();
        assert_eq!(out[0], InvOut::Multicast(InvMsg::V { u: true, proof: Some(p) }));
        assert_eq!(a.start(false, None), Err(InvError::AlreadyStarted));
        let mut b = inv(&d, 1);
        assert_eq!(b.start(false, None).unwrap(), vec![InvOut::Multicast(InvMsg::V { u: false, proof: None })]);
    }

    #[test]
    fn forged_proof_rejected_at_start() {
        let (d, c, mut p) = setup();
        p.signature.sig_bytes[0] ^= 1;
        assert_eq!(inv(&d, 0).start(true, Some((c.clone(), p))), Err(InvError::InvalidProof));
        let other = d.verifier().tpke_enc(b"other");
        let wrong = proof_for(&d, &other);
        assert_eq!(inv(&d, 0).start(true, Some((c, wrong))), Err(InvError::InvalidProof));
    }

    #[test]
    fn v_one_upgrades_and_quorum_triggers_input() {
        let (d, _c, p) = setup();
        let mut a = inv(&d, 0);
        a.start(false, None).unwrap();
        let mut bad = p.clone();
        bad.signature.sig_bytes[3] ^= 4;
        assert!(a.on_v(PartyId(1), true, Some(bad)).is_empty());
        assert!(!a.u());
        assert!(a.on_v(PartyId(2), true, Some(p.clone())).is_empty());
        assert!(a.u());
        let out = a.on_v(PartyId(3), false, None);
        assert_eq!(out, vec![InvOut::AbbaInput { bit: true, evidence: Some(p) }]);
        assert!(a.on_v(PartyId(0), false, None).is_empty());
    }

    #[test]
    fn all_zero_vs_give_zero_input() {
        let (d, _, p) = setup();
        let mut a = inv(&d, 0);
        assert!(a.on_v(PartyId(1), false, None).is_empty());
        assert!(a.on_v(PartyId(2), false, None).is_empty());
        // a second V from the same sender is ignored
        assert!(a.on_v(PartyId(1), true, Some(p.clone())).is_empty());
        assert_eq!(a.start(false, None).unwrap().len(), 1);
        let out = a.on_v(PartyId(3), false, None);
        assert_eq!(out, vec![InvOut::AbbaInput { bit: false, evidence: None }]);
        // once input, a late valid 1 does not flip the vote
        a.on_v(PartyId(0), true, Some(p));
        assert!(!a.u());
    }

    fn decrypt_with(a: &mut Invocation, d: &Dealer, c: &Ciphertext, who: &[u16]) -> Vec<InvOut> {
        let mut out = Vec::new();
        for &p in who {
            out.extend(a.on_dec_share(PartyId(p), d.party_key(PartyId(p)).tpke_dec_share(c)));
        }
        out
    }

    #[test]
    fn decided_one_with_ciphertext_decrypts() {
        let (d, c, p) = setup();
        let mut a = inv(&d, 0);
        a.start(true, Some((c.clone(), p))).unwrap();
        let out = a.on_abba_decided(true);
        assert!(matches!(&out[..], [InvOut::Multicast(InvMsg::DecShare(s))] if s.holder == PartyId(0)));
        let out = decrypt_with(&mut a, &d, &c, &[0, 2]);
        assert_eq!(out, vec![InvOut::Outcome(SlotOutcome::Included(b"the batch".to_vec()))]);
        let again = d.verifier().tpke_enc(b"the batch");
        assert_eq!(again.digest(), c.digest());
    }

    #[test]
    fn garbage_dec_share_excluded() {
        let (d, c, p) = setup();
        let mut a = inv(&d, 0);
        a.start(true, Some((c.clone(), p))).unwrap();
        a.on_abba_decided(true);
        let mut junk = d.party_key(PartyId(1)).tpke_dec_share(&c);
        junk.share_bytes[0] ^= 0xff;
        assert!(a.on_dec_share(PartyId(1), junk).is_empty());
        assert!(decrypt_with(&mut a, &d, &c, &[3]).is_empty());
        let out = decrypt_with(&mut a, &d, &c, &[2]);
        assert!(matches!(&out[..], [InvOut::Outcome(SlotOutcome::Included(_))]));
    }

    #[test]
    fn decided_zero_is_excluded() {
        let (d, _, _) = setup();
        let mut a = inv(&d, 0);
        a.start(false, None).unwrap();
        assert_eq!(a.on_abba_decided(false), vec![InvOut::Outcome(SlotOutcome::Excluded)]);
    }

    #[test]
    fn recovery_adopts_only_the_bound_ciphertext() {
        let (d, c, p) = setup();
        let mut a = inv(&d, 0);
        a.start(false, None).unwrap();
        assert_eq!(a.on_abba_decided(true), vec![InvOut::Multicast(InvMsg::Recover)]);
        assert!(a.recovering());
        let mut out = Vec::new();
        let decoy = d.verifier().tpke_enc(b"decoy");
        a.learn(Some(decoy), None, &mut out);
        a.learn(Some(c.clone()), None, &mut out);
        assert!(out.is_empty() && a.ciphertext().is_none());
        a.learn(None, Some(p), &mut out);
        assert_eq!(a.ciphertext(), Some(&c));
        assert!(matches!(&out[..], [InvOut::Multicast(InvMsg::DecShare(_))]));
        assert!(!a.recovering());
    }
}
