//! Asynchronous binary agreement biased towards 1.
//!
//! One [`Abba`] instance decides one slot of one instance. Rounds follow the
//! pre-vote / main-vote / coin pattern with publicly verifiable
//! justifications on every vote:
//!
//! | vote | accepted justification |
//! |------|------------------------|
//! | round-1 pre-vote 1 | a provable-broadcast proof for this slot |
//! | round-1 pre-vote 0 | threshold signature on pre-process 0 |
//! | round-r pre-vote b | threshold on pre-vote (r−1, b), or threshold on main-vote (r−1, abstain) with coin(r−1) = b |
//! | main-vote b | threshold on pre-vote (r, b) |
//! | main-vote abstain | a justified pre-vote 0 and a justified pre-vote 1 of round r |
//!
//! Round 1 is where the bias lives. A 1 can only enter with external
//! evidence, and a 0 only with 2f + 1 signed pre-process zeros, so f + 1
//! honest inputs of 1 make every justified round-1 pre-vote a 1.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::{CoinShare, PartyKey, SignatureShare, ThresholdSignature, Verifier};
use crate::ppb::{PpbId, PpbProof};
use crate::types::{InstanceId, PartyId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbbaError {
    #[error("input already provided")]
    AlreadyInput,
    #[error("input 1 requires a valid proof for this slot")]
    MissingEvidence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AbbaId {
    pub instance: InstanceId,
    pub slot: PartyId,
}

impl AbbaId {
    pub fn ppb_id(self) -> PpbId {
        PpbId {
            instance: self.instance,
            sender: self.slot,
        }
    }

    fn prefix(self, phase: &[u8]) -> Vec<u8> {
        let mut m = b"ABBA".to_vec();
        m.extend_from_slice(&self.instance.0.to_be_bytes());
        m.extend_from_slice(&self.slot.0.to_be_bytes());
        m.extend_from_slice(&(phase.len() as u8).to_be_bytes());
        m.extend_from_slice(phase);
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MainValue {
    Zero,
    One,
    Abstain,
}

impl MainValue {
    pub fn bit(self) -> Option<bool> {
        match self {
            MainValue::Zero => Some(false),
            MainValue::One => Some(true),
            MainValue::Abstain => None,
        }
    }

    pub fn from_bit(b: bool) -> MainValue {
        if b {
            MainValue::One
        } else {
            MainValue::Zero
        }
    }

    pub fn code(self) -> u8 {
        match self {
            MainValue::Zero => 0,
            MainValue::One => 1,
            MainValue::Abstain => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<MainValue> {
        match c {
            0 => Some(MainValue::Zero),
            1 => Some(MainValue::One),
            2 => Some(MainValue::Abstain),
            _ => None,
        }
    }
}

pub fn preprocess_message(id: AbbaId, bit: bool) -> Vec<u8> {
    let mut m = id.prefix(b"pre-process");
    m.push(bit as u8);
    m
}

pub fn prevote_message(id: AbbaId, round: u32, bit: bool) -> Vec<u8> {
    let mut m = id.prefix(b"pre-vote");
    m.extend_from_slice(&round.to_be_bytes());
    m.push(bit as u8);
    m
}

pub fn mainvote_message(id: AbbaId, round: u32, value: MainValue) -> Vec<u8> {
    let mut m = id.prefix(b"main-vote");
    m.extend_from_slice(&round.to_be_bytes());
    m.push(value.code());
    m
}

pub fn coin_name(id: AbbaId, round: u32) -> Vec<u8> {
    let mut m = id.prefix(b"coin");
    m.extend_from_slice(&round.to_be_bytes());
    m
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Justification {
    Threshold(ThresholdSignature),
    /// A justified pre-vote 0 and a justified pre-vote 1, in that order.
    Conflict(Box<(PreVote, PreVote)>),
    External(PpbProof),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreProcess {
    pub bit: bool,
    pub share: SignatureShare,
    /// Required when `bit` is 1.
    pub evidence: Option<PpbProof>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreVote {
    pub round: u32,
    pub bit: bool,
    pub justification: Justification,
    pub share: SignatureShare,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MainVote {
    pub round: u32,
    pub value: MainValue,
    pub justification: Justification,
    pub share: SignatureShare,
}

/// Transferable proof of the outcome: a threshold signature on
/// main-vote `(round, bit)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub round: u32,
    pub bit: bool,
    pub proof: ThresholdSignature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AbbaMsg {
    PreProcess(PreProcess),
    PreVote(PreVote),
    MainVote(MainVote),
    Coin { round: u32, share: CoinShare },
    Decision(Decision),
}

impl AbbaMsg {
    /// Any provable-broadcast proof carried by the message, including one
    /// nested inside conflict evidence.
    pub fn embedded_proof(&self) -> Option<&PpbProof> {
        fn in_just(j: &Justification) -> Option<&PpbProof> {
            match j {
                Justification::External(p) => Some(p),
                Justification::Conflict(pair) => in_just(&pair.0.justification).or(in_just(&pair.1.justification)),
                Justification::Threshold(_) => None,
            }
        }
        match self {
            AbbaMsg::PreProcess(pp) => pp.evidence.as_ref(),
            AbbaMsg::PreVote(pv) => in_just(&pv.justification),
            AbbaMsg::MainVote(mv) => in_just(&mv.justification),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AbbaOut {
    /// Send to every party, this one included.
    Multicast(AbbaMsg),
    Decided(Decision),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    AwaitingInput,
    PreProcessing,
    PreVote(u32),
    MainVote(u32),
    Coin(u32),
    Done,
}

enum Check {
    Valid,
    Invalid,
    /// Needs the coin of this round to decide.
    NeedCoin(u32),
}

impl Check {
    fn and(self, other: impl FnOnce() -> Check) -> Check {
        match self {
            Check::Valid => other(),
            c => c,
        }
    }
}

pub struct Abba {
    id: AbbaId,
    me: PartyId,
    key: PartyKey,
    verifier: Verifier,
    step: Step,
    input: Option<bool>,
    preprocess: BTreeMap<PartyId, PreProcess>,
    prevotes: BTreeMap<u32, BTreeMap<PartyId, PreVote>>,
    mainvotes: BTreeMap<u32, BTreeMap<PartyId, MainVote>>,
    coin_shares: BTreeMap<u32, BTreeMap<PartyId, CoinShare>>,
    coins: BTreeMap<u32, bool>,
    deferred: BTreeMap<u32, Vec<(PartyId, AbbaMsg)>>,
    decided: Option<Decision>,
    rejected: u64,
}

impl std::fmt::Debug for Abba {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Abba")
            .field("id", &self.id)
            .field("me", &self.me)
            .field("step", &self.step)
            .field("decided", &self.decided)
            .finish_non_exhaustive()
    }
}

impl Abba {
    pub fn new(id: AbbaId, key: PartyKey, verifier: Verifier) -> Abba {
        Abba {
            id,
            me: key.id(),
            key,
            verifier,
            step: Step::AwaitingInput,
            input: None,
            preprocess: BTreeMap::new(),
            prevotes: BTreeMap::new(),
            mainvotes: BTreeMap::new(),
            coin_shares: BTreeMap::new(),
            coins: BTreeMap::new(),
            deferred: BTreeMap::new(),
            decided: None,
            rejected: 0,
        }
    }

    pub fn id(&self) -> AbbaId {
        self.id
    }

    pub fn step(&self) -> Step {
        self.step
    }

    pub fn input_value(&self) -> Option<bool> {
        self.input
    }

    pub fn decision(&self) -> Option<&Decision> {
        self.decided.as_ref()
    }

    /// Messages dropped for failing validation.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    fn quorum(&self) -> usize {
        self.verifier.params().quorum()
    }

    pub fn input(&mut self, bit: bool, evidence: Option<PpbProof>) -> Result<Vec<AbbaOut>, AbbaError> {
        if self.input.is_some() {
            return Err(AbbaError::AlreadyInput);
        }
        let evidence = if bit {
            match evidence {
                Some(p) if p.certifies(&self.verifier, self.id.ppb_id(), None) => Some(p),
                _ => return Err(AbbaError::MissingEvidence),
            }
        } else {
            None
        };
        self.input = Some(bit);
        let mut out = Vec::new();
        if self.step == Step::Done {
            return Ok(out);
        }
        self.step = Step::PreProcessing;
        out.push(AbbaOut::Multicast(AbbaMsg::PreProcess(PreProcess {
            bit,
            share: self.key.sig_share(&preprocess_message(self.id, bit)),
            evidence,
        })));
        self.progress(&mut out);
        Ok(out)
    }

    pub fn handle(&mut self, from: PartyId, msg: AbbaMsg) -> Vec<AbbaOut> {
        let mut out = Vec::new();
        if self.step == Step::Done {
            return out;
        }
        if let AbbaMsg::Decision(d) = &msg {
            self.on_decision(d.clone(), &mut out);
            return out;
        }
        self.accept(from, msg);
        self.progress(&mut out);
        out
    }

    fn on_decision(&mut self, d: Decision, out: &mut Vec<AbbaOut>) {
        let message = mainvote_message(self.id, d.round, MainValue::from_bit(d.bit));
        if self.verifier.verify_signature(&message, &d.proof) {
            self.finish(d, out);
        } else {
            self.rejected += 1;
        }
    }

    fn finish(&mut self, d: Decision, out: &mut Vec<AbbaOut>) {
        self.step = Step::Done;
        self.decided = Some(d.clone());
        out.push(AbbaOut::Multicast(AbbaMsg::Decision(d.clone())));
        out.push(AbbaOut::Decided(d));
    }

    /// Validates and stores; the first vote per sender and phase wins.
    fn accept(&mut self, from: PartyId, msg: AbbaMsg) {
        match self.check(from, &msg) {
            Check::Invalid => {
                self.rejected += 1;
                return;
            }
            Check::NeedCoin(r) => {
                self.deferred.entry(r).or_default().push((from, msg));
                return;
            }
            Check::Valid => {}
        }
        match msg {
            AbbaMsg::PreProcess(pp) => {
                self.preprocess.entry(from).or_insert(pp);
            }
            AbbaMsg::PreVote(pv) => {
                self.prevotes.entry(pv.round).or_default().entry(from).or_insert(pv);
            }
            AbbaMsg::MainVote(mv) => {
                self.mainvotes.entry(mv.round).or_default().entry(from).or_insert(mv);
            }
            AbbaMsg::Coin { round, share } => {
                let shares = self.coin_shares.entry(round).or_default();
                shares.entry(from).or_insert(share);
                if !self.coins.contains_key(&round) && shares.len() > self.verifier.params().f {
                    let all: Vec<CoinShare> = shares.values().cloned().collect();
                    let bit = self
                        .verifier
                        .coin_toss_bit(&coin_name(self.id, round), &all)
                        .expect("f + 1 verified coin shares");
                    self.coins.insert(round, bit);
                    for (from, msg) in self.deferred.remove(&round).unwrap_or_default() {
                        self.accept(from, msg);
                    }
                }
            }
            AbbaMsg::Decision(_) => unreachable!("decisions are handled before accept"),
        }
    }

    fn check(&self, from: PartyId, msg: &AbbaMsg) -> Check {
        match msg {
            AbbaMsg::PreProcess(pp) => {
                let share_ok = self
                    .verifier
                    .verify_share(&preprocess_message(self.id, pp.bit), from, &pp.share);
                let evidence_ok = !pp.bit
                    || pp
                        .evidence
                        .as_ref()
                        .is_some_and(|p| p.certifies(&self.verifier, self.id.ppb_id(), None));
                ok(share_ok && evidence_ok)
            }
            AbbaMsg::PreVote(pv) => self.check_prevote(from, pv),
            AbbaMsg::MainVote(mv) => self.check_mainvote(from, mv),
            AbbaMsg::Coin { round, share } => {
                ok(*round >= 1 && self.verifier.coin_share_verify(&coin_name(self.id, *round), from, share))
            }
            AbbaMsg::Decision(_) => Check::Invalid,
        }
    }

    fn threshold_on(&self, j: &Justification, message: &[u8]) -> bool {
        matches!(j, Justification::Threshold(sig) if self.verifier.verify_signature(message, sig))
    }

    fn check_prevote(&self, from: PartyId, pv: &PreVote) -> Check {
        let r = pv.round;
        if r == 0 || !self.verifier.verify_share(&prevote_message(self.id, r, pv.bit), from, &pv.share) {
            return Check::Invalid;
        }
        self.check_prevote_justification(pv)
    }

    fn check_prevote_justification(&self, pv: &PreVote) -> Check {
        let r = pv.round;
        if r == 1 {
            return ok(if pv.bit {
                matches!(&pv.justification, Justification::External(p)
                    if p.certifies(&self.verifier, self.id.ppb_id(), None))
            } else {
                self.threshold_on(&pv.justification, &preprocess_message(self.id, false))
            });
        }
        if cfg!(feature = "mutant-jv2") {
            // Deliberately broken rule: any round r−1 certificate will do.
            let any = [
                prevote_message(self.id, r - 1, false),
                prevote_message(self.id, r - 1, true),
                mainvote_message(self.id, r - 1, MainValue::Abstain),
            ];
            return ok(any.iter().any(|m| self.threshold_on(&pv.justification, m)));
        }
        if self.threshold_on(&pv.justification, &prevote_message(self.id, r - 1, pv.bit)) {
            return Check::Valid;
        }
        if self.threshold_on(&pv.justification, &mainvote_message(self.id, r - 1, MainValue::Abstain)) {
            return match self.coins.get(&(r - 1)) {
                Some(&c) => ok(c == pv.bit),
                None => Check::NeedCoin(r - 1),
            };
        }
        Check::Invalid
    }

    fn check_mainvote(&self, from: PartyId, mv: &MainVote) -> Check {
        let r = mv.round;
        if r == 0 || !self.verifier.verify_share(&mainvote_message(self.id, r, mv.value), from, &mv.share) {
            return Check::Invalid;
        }
        match mv.value.bit() {
            Some(b) => ok(self.threshold_on(&mv.justification, &prevote_message(self.id, r, b))),
            None => match &mv.justification {
                Justification::Conflict(pair) => {
                    let (zero, one) = (&pair.0, &pair.1);
                    if zero.round != r || one.round != r || zero.bit || !one.bit {
                        return Check::Invalid;
                    }
                    let share_ok = |pv: &PreVote| {
                        self.verifier
                            .verify_share(&prevote_message(self.id, r, pv.bit), pv.share.signer, &pv.share)
                    };
                    ok(share_ok(zero) && share_ok(one))
                        .and(|| self.check_prevote_justification(zero))
                        .and(|| self.check_prevote_justification(one))
                }
                _ => Check::Invalid,
            },
        }
    }

    fn progress(&mut self, out: &mut Vec<AbbaOut>) {
        loop {
            let before = self.step;
            match self.step {
                Step::AwaitingInput | Step::Done => return,
                Step::PreProcessing => self.try_round1_prevote(out),
                Step::PreVote(r) => self.try_mainvote(r, out),
                Step::MainVote(r) => self.try_decide(r, out),
                Step::Coin(r) => self.try_next_prevote(r, out),
            }
            if self.step == before {
                return;
            }
        }
    }

    fn try_round1_prevote(&mut self, out: &mut Vec<AbbaOut>) {
        if self.preprocess.len() < self.quorum() {
            return;
        }
        let one = self.preprocess.values().find_map(|pp| pp.evidence.clone().filter(|_| pp.bit));
        let (bit, justification) = match one {
            Some(proof) => (true, Justification::External(proof)),
            None => {
                let shares: Vec<SignatureShare> = self.preprocess.values().map(|pp| pp.share.clone()).collect();
                let sig = self
                    .verifier
                    .combine_shares(&preprocess_message(self.id, false), &shares)
                    .expect("quorum of verified pre-process zeros");
                (false, Justification::Threshold(sig))
            }
        };
        self.send_prevote(1, bit, justification, out);
    }

    fn send_prevote(&mut self, round: u32, bit: bool, justification: Justification, out: &mut Vec<AbbaOut>) {
        self.step = Step::PreVote(round);
        out.push(AbbaOut::Multicast(AbbaMsg::PreVote(PreVote {
            round,
            bit,
            justification,
            share: self.key.sig_share(&prevote_message(self.id, round, bit)),
        })));
    }

    fn try_mainvote(&mut self, r: u32, out: &mut Vec<AbbaOut>) {
        let Some(votes) = self.prevotes.get(&r) else { return };
        if votes.len() < self.quorum() {
            return;
        }
        let quorum = self.quorum();
        let for_bit = |b: bool| votes.values().filter(|v| v.bit == b).count();
        let (value, justification) = if let Some(b) = [false, true].into_iter().find(|&b| for_bit(b) >= quorum) {
            let shares: Vec<SignatureShare> =
                votes.values().filter(|v| v.bit == b).map(|v| v.share.clone()).collect();
            let sig = self
                .verifier
                .combine_shares(&prevote_message(self.id, r, b), &shares)
                .expect("quorum of verified pre-votes");
            (MainValue::from_bit(b), Justification::Threshold(sig))
        } else {
            // n − f votes with no bit at quorum: both bits are present.
            let zero = votes.values().find(|v| !v.bit).cloned().expect("some pre-vote 0");
            let one = votes.values().find(|v| v.bit).cloned().expect("some pre-vote 1");
            (MainValue::Abstain, Justification::Conflict(Box::new((zero, one))))
        };
        self.step = Step::MainVote(r);
        out.push(AbbaOut::Multicast(AbbaMsg::MainVote(MainVote {
            round: r,
            value,
            justification,
            share: self.key.sig_share(&mainvote_message(self.id, r, value)),
        })));
    }

    fn try_decide(&mut self, r: u32, out: &mut Vec<AbbaOut>) {
        let Some(votes) = self.mainvotes.get(&r) else { return };
        if votes.len() < self.quorum() {
            return;
        }
        for b in [false, true] {
            let value = MainValue::from_bit(b);
            let shares: Vec<SignatureShare> =
                votes.values().filter(|v| v.value == value).map(|v| v.share.clone()).collect();
            if shares.len() >= self.quorum() {
                let proof = self
                    .verifier
                    .combine_shares(&mainvote_message(self.id, r, value), &shares)
                    .expect("quorum of verified main-votes");
                self.finish(Decision { round: r, bit: b, proof }, out);
                return;
            }
        }
        self.step = Step::Coin(r);
        out.push(AbbaOut::Multicast(AbbaMsg::Coin {
            round: r,
            share: self.key.coin_share(&coin_name(self.id, r)),
        }));
    }

    fn try_next_prevote(&mut self, r: u32, out: &mut Vec<AbbaOut>) {
        let have = self.coin_shares.get(&r).map_or(0, BTreeMap::len);
        if have < self.quorum() {
            return;
        }
        let coin = self.coins[&r];
        let votes = &self.mainvotes[&r];
        let hard = votes.values().find(|v| v.value != MainValue::Abstain);
        let (bit, justification) = match hard {
            Some(v) if !cfg!(feature = "mutant-jv2") || !votes.values().any(|v| v.value == MainValue::Abstain) => {
                (v.value.bit().expect("non-abstain"), v.justification.clone())
            }
            Some(v) => (coin, v.justification.clone()),
            None => {
                let shares: Vec<SignatureShare> = votes.values().map(|v| v.share.clone()).collect();
                let sig = self
                    .verifier
                    .combine_shares(&mainvote_message(self.id, r, MainValue::Abstain), &shares)
                    .expect("quorum of verified abstains");
                (coin, Justification::Threshold(sig))
            }
        };
        self.send_prevote(r + 1, bit, justification, out);
    }

    /// Rounds this instance has pre-voted in, for introspection.
    pub fn rounds_started(&self) -> BTreeSet<u32> {
        self.prevotes
            .iter()
            .filter(|(_, v)| v.contains_key(&self.me))
            .map(|(r, _)| *r)
            .collect()
    }
}

fn ok(b: bool) -> Check {
    if b {
        Check::Valid
    } else {
        Check::Invalid
    }
}
