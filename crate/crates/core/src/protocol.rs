//! The party state machine. Instances run strictly in sequence:
//!
//! 1. committee election from the instance coin;
//! 2. committee members encrypt a batch and run provable broadcast;
//! 3. a member with a proof multicasts PROPOSAL and SUGGESTION; every party
//!    relays one SUGGESTION on its first proposal or suggestion;
//! 4. each suggestion starts (or upgrades to 1) the invocation for its slot;
//!    after 2f + 1 distinct suggestion senders every remaining slot starts
//!    with 0;
//! 5. once every slot has an outcome the decrypted batches are appended to
//!    the log in slot order, duplicates removed.
//!
//! Messages for later instances are buffered until the instance starts, and
//! messages arriving before the committee is known are buffered per
//! instance. Finished instances keep answering (recovery, decryption).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::abba::{Abba, AbbaId, AbbaOut};
use crate::committee::{Committee, CsState};
use crate::crypto::{Ciphertext, PartyKey, Verifier};
use crate::invocation::{InvMsg, InvOut, Invocation, SlotOutcome};
use crate::ppb::{ExternalValidity, PpbId, PpbProof, PpbReceiver, PpbSender, WellFormed};
use crate::simnet::{Ctx, Node};
use crate::types::{Digest, InstanceId, Params, PartyId};
use crate::wire::{Body, ProtocolMessage};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestBatch {
    pub instance: InstanceId,
    pub proposer: PartyId,
    pub requests: Vec<Vec<u8>>,
}

impl RequestBatch {
    /// `instance: u64 ‖ proposer: u16 ‖ count: u32 ‖ (len: u32 ‖ bytes)*`
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.instance.0.to_be_bytes());
        out.extend_from_slice(&self.proposer.0.to_be_bytes());
        out.extend_from_slice(&(self.requests.len() as u32).to_be_bytes());
        for r in &self.requests {
            out.extend_from_slice(&(r.len() as u32).to_be_bytes());
            out.extend_from_slice(r);
        }
        out
    }

    pub fn decode(b: &[u8]) -> Option<RequestBatch> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Option<&[u8]> {
            let s = b.get(pos..pos.checked_add(n)?)?;
            pos += n;
            Some(s)
        };
        let instance = InstanceId(u64::from_be_bytes(take(8)?.try_into().ok()?));
        let proposer = PartyId(u16::from_be_bytes(take(2)?.try_into().ok()?));
        let count = u32::from_be_bytes(take(4)?.try_into().ok()?) as usize;
        let mut requests = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = u32::from_be_bytes(take(4)?.try_into().ok()?) as usize;
            requests.push(take(len)?.to_vec());
        }
        if pos != b.len() {
            return None;
        }
        Some(RequestBatch {
            instance,
            proposer,
            requests,
        })
    }
}

/// What one instance decided: the batches of every slot decided 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSet {
    pub instance: InstanceId,
    pub batches: BTreeMap<PartyId, RequestBatch>,
    /// Ciphertext digest per included slot, for tracing batches back to
    /// the broadcast that carried them.
    pub digests: BTreeMap<PartyId, Digest>,
    /// Slots decided 1 whose plaintext did not decode as a batch.
    pub undecodable: BTreeSet<PartyId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveredRequest {
    pub instance: InstanceId,
    pub slot: PartyId,
    pub request: Vec<u8>,
}

/// Per-instance timeline of one party, for metrics and assertions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceTrace {
    pub start_depth: u64,
    pub start_step: u64,
    pub finalize_depth: Option<u64>,
    pub finalize_step: Option<u64>,
    pub suggestion_wait_step: Option<u64>,
    pub abba_rounds: BTreeMap<PartyId, u32>,
    pub abba_inputs: BTreeMap<PartyId, bool>,
    pub abba_decisions: BTreeMap<PartyId, bool>,
}

struct SlotState {
    inv: Invocation,
    abba: Abba,
}

struct InstanceState {
    cs: CsState,
    committee: Option<Committee>,
    pending: Vec<(PartyId, Body)>,
    sender: Option<PpbSender>,
    receiver: PpbReceiver,
    suggest_sent: bool,
    suggestion_senders: BTreeSet<PartyId>,
    sweep_done: bool,
    slots: BTreeMap<PartyId, SlotState>,
    output: Option<OutputSet>,
    trace: InstanceTrace,
}

#[derive(Clone, Debug)]
pub struct PartyConfig {
    pub instances: u64,
    pub batch_size: usize,
    /// Seed for this party's batch sampling.
    pub seed: u64,
}

pub struct Party {
    me: PartyId,
    params: Params,
    key: PartyKey,
    verifier: Verifier,
    validity: Arc<dyn ExternalValidity>,
    config: PartyConfig,
    current: InstanceId,
    states: BTreeMap<InstanceId, InstanceState>,
    future: BTreeMap<InstanceId, Vec<(PartyId, Body)>>,
    pool: Vec<Vec<u8>>,
    initial_pool: Vec<Vec<u8>>,
    rng: ChaCha20Rng,
    log: Vec<DeliveredRequest>,
    delivered: HashSet<Vec<u8>>,
}

impl std::fmt::Debug for Party {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Party")
            .field("me", &self.me)
            .field("current", &self.current)
            .field("log_len", &self.log.len())
            .finish_non_exhaustive()
    }
}

impl Party {
    pub fn new(key: PartyKey, verifier: Verifier, pool: Vec<Vec<u8>>, config: PartyConfig) -> Party {
        Party::with_validity(key, verifier, pool, config, Arc::new(WellFormed))
    }

    pub fn with_validity(
        key: PartyKey,
        verifier: Verifier,
        pool: Vec<Vec<u8>>,
        config: PartyConfig,
        validity: Arc<dyn ExternalValidity>,
    ) -> Party {
        Party {
            me: key.id(),
            params: verifier.params(),
            rng: ChaCha20Rng::seed_from_u64(config.seed),
            key,
            verifier,
            validity,
            config,
            current: InstanceId(0),
            states: BTreeMap::new(),
            future: BTreeMap::new(),
            initial_pool: pool.clone(),
            pool,
            log: Vec::new(),
            delivered: HashSet::new(),
        }
    }

    pub fn id(&self) -> PartyId {
        self.me
    }

    pub fn verifier(&self) -> &Verifier {
        &self.verifier
    }

    pub fn log(&self) -> &[DeliveredRequest] {
        &self.log
    }

    pub fn initial_pool(&self) -> &[Vec<u8>] {
        &self.initial_pool
    }

    pub fn finished(&self) -> bool {
        self.finalized_count() >= self.config.instances
    }

    pub fn finalized_count(&self) -> u64 {
        self.states.values().filter(|s| s.output.is_some()).count() as u64
    }

    pub fn output(&self, instance: InstanceId) -> Option<&OutputSet> {
        self.states.get(&instance)?.output.as_ref()
    }

    pub fn trace(&self, instance: InstanceId) -> Option<&InstanceTrace> {
        self.states.get(&instance).map(|s| &s.trace)
    }

    pub fn committee(&self, instance: InstanceId) -> Option<&Committee> {
        self.states.get(&instance)?.committee.as_ref()
    }

    /// Slots for which this party holds a proof, with the proven digest.
    pub fn proofs_held(&self, instance: InstanceId) -> BTreeMap<PartyId, Digest> {
        self.slot_view(instance, |s| s.inv.proof().map(|p| p.payload_digest))
    }

    /// Slots for which this party holds both the ciphertext and its proof.
    pub fn holdings(&self, instance: InstanceId) -> BTreeMap<PartyId, Digest> {
        self.slot_view(instance, |s| s.inv.holds().then(|| s.inv.proof().unwrap().payload_digest))
    }

    /// Countersignatures this party gave, by sender.
    pub fn countersigned(&self, instance: InstanceId) -> BTreeMap<PartyId, Digest> {
        self.states
            .get(&instance)
            .map(|s| s.receiver.countersigned().clone())
            .unwrap_or_default()
    }

    fn slot_view(&self, instance: InstanceId, f: impl Fn(&SlotState) -> Option<Digest>) -> BTreeMap<PartyId, Digest> {
        let Some(st) = self.states.get(&instance) else {
            return BTreeMap::new();
        };
        st.slots.iter().filter_map(|(k, s)| f(s).map(|d| (*k, d))).collect()
    }

    fn start_instance(&mut self, instance: InstanceId, ctx: &mut Ctx) {
        self.current = instance;
        let mut st = InstanceState {
            cs: CsState::new(instance),
            committee: None,
            pending: Vec::new(),
            sender: None,
            receiver: PpbReceiver::new(instance),
            suggest_sent: false,
            suggestion_senders: BTreeSet::new(),
            sweep_done: false,
            slots: BTreeMap::new(),
            output: None,
            trace: InstanceTrace {
                start_depth: ctx.depth(),
                start_step: ctx.step(),
                ..Default::default()
            },
        };
        let share = st.cs.start(&self.key, &self.verifier).expect("fresh instance");
        let committee = st.cs.result().cloned();
        self.states.insert(instance, st);
        ctx.multicast(ProtocolMessage {
            instance,
            body: Body::Share(share),
        });
        if let Some(c) = committee {
            self.on_committee(instance, c, ctx);
        }
        for (from, body) in self.future.remove(&instance).unwrap_or_default() {
            self.dispatch(instance, from, body, ctx);
        }
    }

    fn on_committee(&mut self, instance: InstanceId, committee: Committee, ctx: &mut Ctx) {
        let st = self.states.get_mut(&instance).expect("started");
        for &slot in &committee.members {
            let id = AbbaId { instance, slot };
            st.slots.insert(
                slot,
                SlotState {
                    inv: Invocation::new(id, self.key.clone(), self.verifier.clone()),
                    abba: Abba::new(id, self.key.clone(), self.verifier.clone()),
                },
            );
        }
        st.committee = Some(committee.clone());
        if committee.contains(self.me) {
            let batch = self.draw_batch(instance);
            let c = self.verifier.tpke_enc(&batch.encode());
            let st = self.states.get_mut(&instance).expect("started");
            st.sender = Some(PpbSender::new(self.me, c.clone(), &committee).expect("member"));
            ctx.multicast(ProtocolMessage {
                instance,
                body: Body::PpbPayload(c),
            });
        }
        let pending = std::mem::take(&mut self.states.get_mut(&instance).expect("started").pending);
        for (from, body) in pending {
            self.dispatch(instance, from, body, ctx);
        }
    }

    fn draw_batch(&mut self, instance: InstanceId) -> RequestBatch {
        let requests: Vec<Vec<u8>> = self
            .pool
            .choose_multiple(&mut self.rng, self.config.batch_size)
            .cloned()
            .collect();
        RequestBatch {
            instance,
            proposer: self.me,
            requests,
        }
    }

    fn dispatch(&mut self, instance: InstanceId, from: PartyId, body: Body, ctx: &mut Ctx) {
        let Some(st) = self.states.get_mut(&instance) else { return };
        if let Body::Share(share) = body {
            if let Some(c) = st.cs.on_share(from, share, &self.verifier) {
                self.on_committee(instance, c, ctx);
            }
            return;
        }
        let Some(committee) = st.committee.clone() else {
            st.pending.push((from, body));
            return;
        };
        match body {
            Body::Share(_) => unreachable!(),
            Body::PpbPayload(c) => {
                let reply = st
                    .receiver
                    .on_payload(from, c.clone(), &committee, &self.key, &self.verifier, &*self.validity);
                if let Some(share) = reply {
                    ctx.send(
                        from,
                        ProtocolMessage {
                            instance,
                            body: Body::PpbShare { origin: from, share },
                        },
                    );
                    self.with_slot(instance, from, ctx, |s, out| s.inv.learn(Some(c), None, out));
                }
            }
            Body::PpbShare { origin, share } => {
                if origin != self.me {
                    return;
                }
                let Some(sender) = st.sender.as_mut() else { return };
                if let Some(proof) = sender.on_share(from, share, &self.verifier) {
                    let c = sender.payload().clone();
                    self.on_own_proof(instance, c, proof, ctx);
                }
            }
            Body::Proposal { slot, ciphertext, proof } => {
                if from != slot || !self.certified(&committee, slot, &ciphertext, &proof) {
                    return;
                }
                self.with_slot(instance, slot, ctx, |s, out| {
                    s.inv.learn(Some(ciphertext.clone()), Some(proof.clone()), out)
                });
                self.maybe_suggest(instance, slot, ciphertext, proof, ctx);
            }
            Body::Suggestion {
                slot,
                ciphertext,
                proof,
                relayer,
            } => {
                if relayer != from || !self.certified(&committee, slot, &ciphertext, &proof) {
                    return;
                }
                self.on_suggestion(instance, from, slot, ciphertext, proof, ctx);
            }
            Body::Slot { slot, msg } => match msg {
                InvMsg::V { u, proof } => self.with_slot(instance, slot, ctx, |s, out| out.extend(s.inv.on_v(from, u, proof))),
                InvMsg::DecShare(share) => {
                    self.with_slot(instance, slot, ctx, |s, out| out.extend(s.inv.on_dec_share(from, share)))
                }
                InvMsg::Recover => self.answer_recover(instance, from, slot, ctx),
            },
            Body::RecoverResp { slot, ciphertext, proof } => {
                self.with_slot(instance, slot, ctx, |s, out| s.inv.learn(Some(ciphertext), proof, out))
            }
            Body::Abba { slot, msg } => {
                let proof = msg.embedded_proof().cloned();
                self.with_slot(instance, slot, ctx, |s, out| {
                    if proof.is_some() {
                        s.inv.learn(None, proof, out);
                    }
                });
                let abba_out = match self.states.get_mut(&instance).and_then(|st| st.slots.get_mut(&slot)) {
                    Some(s) => s.abba.handle(from, msg),
                    None => return,
                };
                self.apply_abba(instance, slot, abba_out, ctx);
            }
        }
    }

    fn certified(&self, committee: &Committee, slot: PartyId, c: &Ciphertext, proof: &PpbProof) -> bool {
        let id = PpbId {
            instance: committee.instance,
            sender: slot,
        };
        committee.contains(slot) && proof.certifies(&self.verifier, id, Some(c))
    }

    fn on_own_proof(&mut self, instance: InstanceId, c: Ciphertext, proof: PpbProof, ctx: &mut Ctx) {
        ctx.multicast(ProtocolMessage {
            instance,
            body: Body::Proposal {
                slot: self.me,
                ciphertext: c.clone(),
                proof: proof.clone(),
            },
        });
        let me = self.me;
        self.with_slot(instance, me, ctx, |s, out| s.inv.learn(Some(c.clone()), Some(proof.clone()), out));
        self.maybe_suggest(instance, me, c, proof, ctx);
    }

    fn maybe_suggest(&mut self, instance: InstanceId, slot: PartyId, c: Ciphertext, proof: PpbProof, ctx: &mut Ctx) {
        let st = self.states.get_mut(&instance).expect("started");
        if st.suggest_sent {
            return;
        }
        st.suggest_sent = true;
        ctx.multicast(ProtocolMessage {
            instance,
            body: Body::Suggestion {
                slot,
                ciphertext: c,
                proof,
                relayer: self.me,
            },
        });
    }

    fn on_suggestion(
        &mut self,
        instance: InstanceId,
        from: PartyId,
        slot: PartyId,
        c: Ciphertext,
        proof: PpbProof,
        ctx: &mut Ctx,
    ) {
        let st = self.states.get_mut(&instance).expect("started");
        st.suggestion_senders.insert(from);
        self.maybe_suggest(instance, slot, c.clone(), proof.clone(), ctx);
        self.with_slot(instance, slot, ctx, |s, out| {
            if s.inv.started() {
                out.extend(s.inv.upgrade(c, proof));
            } else {
                out.extend(s.inv.start(true, Some((c, proof))).expect("certified payload"));
            }
        });
        let st = self.states.get_mut(&instance).expect("started");
        if st.sweep_done || st.suggestion_senders.len() < self.params.quorum() {
            return;
        }
        st.sweep_done = true;
        st.trace.suggestion_wait_step = Some(ctx.step());
        let idle: Vec<PartyId> = st.slots.iter().filter(|(_, s)| !s.inv.started()).map(|(k, _)| *k).collect();
        for slot in idle {
            self.with_slot(instance, slot, ctx, |s, out| {
                out.extend(s.inv.start(false, None).expect("idle slot"))
            });
        }
    }

    fn answer_recover(&mut self, instance: InstanceId, from: PartyId, slot: PartyId, ctx: &mut Ctx) {
        let Some(st) = self.states.get(&instance) else { return };
        let held = st.slots.get(&slot).and_then(|s| s.inv.recover_response());
        let (ciphertext, proof) = match held {
            Some(h) => h,
            None => match st.receiver.received(slot) {
                Some(c) => (c.clone(), None),
                None => return,
            },
        };
        ctx.send(
            from,
            ProtocolMessage {
                instance,
                body: Body::RecoverResp { slot, ciphertext, proof },
            },
        );
    }

    /// Runs `f` against a slot and feeds the produced invocation outputs
    /// back through the machine.
    fn with_slot(
        &mut self,
        instance: InstanceId,
        slot: PartyId,
        ctx: &mut Ctx,
        f: impl FnOnce(&mut SlotState, &mut Vec<InvOut>),
    ) {
        let mut out = Vec::new();
        match self.states.get_mut(&instance).and_then(|st| st.slots.get_mut(&slot)) {
            Some(s) => f(s, &mut out),
            None => return,
        }
        self.apply_inv(instance, slot, out, ctx);
    }

    fn apply_inv(&mut self, instance: InstanceId, slot: PartyId, out: Vec<InvOut>, ctx: &mut Ctx) {
        for o in out {
            match o {
                InvOut::Multicast(msg) => ctx.multicast(ProtocolMessage {
                    instance,
                    body: Body::Slot { slot, msg },
                }),
                InvOut::AbbaInput { bit, evidence } => {
                    let st = self.states.get_mut(&instance).expect("started");
                    st.trace.abba_inputs.insert(slot, bit);
                    let s = st.slots.get_mut(&slot).expect("slot");
                    let abba_out = s.abba.input(bit, evidence).expect("input once, with evidence for 1");
                    self.apply_abba(instance, slot, abba_out, ctx);
                }
                InvOut::Outcome(_) => self.try_finalize(instance, ctx),
            }
        }
    }

    fn apply_abba(&mut self, instance: InstanceId, slot: PartyId, out: Vec<AbbaOut>, ctx: &mut Ctx) {
        for o in out {
            match o {
                AbbaOut::Multicast(msg) => ctx.multicast(ProtocolMessage {
                    instance,
                    body: Body::Abba { slot, msg },
                }),
                AbbaOut::Decided(d) => {
                    let st = self.states.get_mut(&instance).expect("started");
                    st.trace.abba_rounds.insert(slot, d.round);
                    st.trace.abba_decisions.insert(slot, d.bit);
                    self.with_slot(instance, slot, ctx, |s, out| out.extend(s.inv.on_abba_decided(d.bit)));
                }
            }
        }
    }

    fn try_finalize(&mut self, instance: InstanceId, ctx: &mut Ctx) {
        let st = self.states.get_mut(&instance).expect("started");
        if st.output.is_some() || st.slots.is_empty() || st.slots.values().any(|s| s.inv.outcome().is_none()) {
            return;
        }
        let mut output = OutputSet {
            instance,
            batches: BTreeMap::new(),
            digests: BTreeMap::new(),
            undecodable: BTreeSet::new(),
        };
        for (slot, s) in &st.slots {
            let Some(SlotOutcome::Included(plain)) = s.inv.outcome() else { continue };
            match RequestBatch::decode(plain).filter(|b| b.instance == instance && b.proposer == *slot) {
                Some(batch) => {
                    output.batches.insert(*slot, batch);
                    output
                        .digests
                        .insert(*slot, s.inv.ciphertext().expect("decrypted").digest());
                }
                None => {
                    output.undecodable.insert(*slot);
                }
            }
        }
        st.receiver.abandon();
        st.trace.finalize_depth = Some(ctx.depth());
        st.trace.finalize_step = Some(ctx.step());
        st.output = Some(output.clone());
        log::debug!("{} finalized {} with {} batches", self.me, instance, output.batches.len());
        self.atomic_deliver(&output);
        let next = instance.next();
        if instance == self.current && next.0 <= self.config.instances {
            self.start_instance(next, ctx);
        }
    }

    /// Appends the batches in slot order, skipping requests already in the
    /// log or earlier in this output.
    pub fn atomic_deliver(&mut self, output: &OutputSet) {
        for (slot, batch) in &output.batches {
            for r in &batch.requests {
                if self.delivered.insert(r.clone()) {
                    self.log.push(DeliveredRequest {
                        instance: output.instance,
                        slot: *slot,
                        request: r.clone(),
                    });
                }
            }
        }
        let delivered = &self.delivered;
        self.pool.retain(|r| !delivered.contains(r));
    }
}

impl Node for Party {
    fn start(&mut self, ctx: &mut Ctx) {
        if self.config.instances > 0 {
            self.start_instance(InstanceId(1), ctx);
        }
    }

    fn handle(&mut self, from: PartyId, msg: ProtocolMessage, ctx: &mut Ctx) {
        let instance = msg.instance;
        if instance.0 == 0 || instance.0 > self.config.instances {
            return;
        }
        if instance > self.current {
            self.future.entry(instance).or_default().push((from, msg.body));
            return;
        }
        self.dispatch(instance, from, msg.body, ctx);
    }

    fn party(&self) -> Option<&Party> {
        Some(self)
    }
}
