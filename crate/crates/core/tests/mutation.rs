//! A scripted split-decision attack on one agreement instance at n = 4.
//!
//! Party 0 inputs 1, parties 1 and 2 input 0, party 3 is Byzantine. The
//! schedule lets party 0 decide 1 in round 1 while parties 1 and 2 see
//! mixed main-votes, then hands them a 0 coin. Under the correct round-2
//! pre-vote rule they must carry 1 forward and agreement survives; a build
//! with the weakened rule (`--features mutant-jv2`) lets them pre-vote 0 on
//! a round-1 certificate for 1, and the attack splits the decision.

use std::collections::BTreeMap;

use slim_abc::abba::{
    self, Abba, AbbaId, AbbaMsg, AbbaOut, Justification, MainValue, MainVote, PreProcess, PreVote,
};
use slim_abc::ppb::{countersign_message, PpbProof};
use slim_abc::{Dealer, InstanceId, PartyId, PartyKey, Verifier};

const ID: AbbaId = AbbaId {
    instance: InstanceId(1),
    slot: PartyId(0),
};
const A: PartyId = PartyId(0);
const B: PartyId = PartyId(1);
const C: PartyId = PartyId(2);
const Z: PartyId = PartyId(3);

struct Net {
    nodes: BTreeMap<PartyId, Abba>,
    /// Undelivered messages per recipient, in send order.
    queues: BTreeMap<PartyId, Vec<(PartyId, AbbaMsg)>>,
    decisions: BTreeMap<PartyId, bool>,
    sent: Vec<(PartyId, AbbaMsg)>,
}

impl Net {
    fn push(&mut self, from: PartyId, to: &[PartyId], m: &AbbaMsg) {
        for t in to {
            self.queues.entry(*t).or_default().push((from, m.clone()));
        }
    }

    fn emit(&mut self, from: PartyId, out: Vec<AbbaOut>) {
        for o in out {
            match o {
                AbbaOut::Multicast(m) => {
                    self.sent.push((from, m.clone()));
                    self.push(from, &[A, B, C], &m);
                }
                AbbaOut::Decided(d) => {
                    self.decisions.insert(from, d.bit);
                }
            }
        }
    }

    /// Delivers to `to` every queued message accepted by `pick`, repeating
    /// until none is left.
    fn deliver(&mut self, to: PartyId, pick: impl Fn(PartyId, &AbbaMsg) -> bool) {
        loop {
            let q = self.queues.entry(to).or_default();
            let Some(i) = q.iter().position(|(f, m)| pick(*f, m)) else { return };
            let (from, m) = q.remove(i);
            let out = self.nodes.get_mut(&to).unwrap().handle(from, m);
            self.emit(to, out);
        }
    }

    fn flush(&mut self) {
        for _ in 0..10_000 {
            let Some(to) = [A, B, C].into_iter().find(|p| !self.queues.get(p).map_or(true, Vec::is_empty)) else {
                return;
            };
            self.deliver(to, |_, _| true);
        }
    }

    fn last(&self, from: PartyId, pick: impl Fn(&AbbaMsg) -> bool) -> Option<AbbaMsg> {
        self.sent.iter().rev().find(|(f, m)| *f == from && pick(m)).map(|(_, m)| m.clone())
    }
}

fn proof(dealer: &Dealer, v: &Verifier) -> PpbProof {
    let c = v.tpke_enc(b"batch");
    let pid = ID.ppb_id();
    let msg = countersign_message(pid, &c.digest());
    let shares: Vec<_> = v.params().parties().map(|p| dealer.party_key(p).sig_share(&msg)).collect();
    PpbProof {
        id: pid,
        payload_digest: c.digest(),
        signature: v.combine_shares(&msg, &shares).unwrap(),
    }
}

fn round1_coin(dealer: &Dealer, v: &Verifier) -> bool {
    let name = abba::coin_name(ID, 1);
    let shares: Vec<_> = [A, B].iter().map(|p| dealer.party_key(*p).coin_share(&name)).collect();
    v.coin_toss_bit(&name, &shares).unwrap()
}

fn from_in(set: &'static [PartyId], kind: fn(&AbbaMsg) -> bool) -> impl Fn(PartyId, &AbbaMsg) -> bool {
    move |f, m| set.contains(&f) && kind(m)
}

fn is_pp(m: &AbbaMsg) -> bool {
    matches!(m, AbbaMsg::PreProcess(_))
}
fn is_pv1(m: &AbbaMsg) -> bool {
    matches!(m, AbbaMsg::PreVote(pv) if pv.round == 1)
}
fn is_mv1(m: &AbbaMsg) -> bool {
    matches!(m, AbbaMsg::MainVote(mv) if mv.round == 1)
}
fn is_coin1(m: &AbbaMsg) -> bool {
    matches!(m, AbbaMsg::Coin { round: 1, .. })
}
fn is_pv2(m: &AbbaMsg) -> bool {
    matches!(m, AbbaMsg::PreVote(pv) if pv.round == 2)
}
fn is_mv2(m: &AbbaMsg) -> bool {
    matches!(m, AbbaMsg::MainVote(mv) if mv.round == 2)
}

fn prevote_share(m: &AbbaMsg) -> (bool, slim_abc::SignatureShare) {
    match m {
        AbbaMsg::PreVote(pv) => (pv.bit, pv.share.clone()),
        _ => unreachable!(),
    }
}

/// Runs the attack and returns the honest decisions.
fn attack(seed: u64) -> BTreeMap<PartyId, bool> {
    let dealer = Dealer::with_seed(4, seed).unwrap();
    let v = dealer.verifier();
    let z: PartyKey = dealer.party_key(Z);
    let evidence = proof(&dealer, &v);
    let mut net = Net {
        nodes: [A, B, C].into_iter().map(|p| (p, Abba::new(ID, dealer.party_key(p), v.clone()))).collect(),
        queues: BTreeMap::new(),
        decisions: BTreeMap::new(),
        sent: Vec::new(),
    };

    for (p, bit) in [(A, true), (B, false), (C, false)] {
        let out = net.nodes.get_mut(&p).unwrap().input(bit, bit.then(|| evidence.clone())).unwrap();
        net.emit(p, out);
    }
    let z_pp0 = AbbaMsg::PreProcess(PreProcess {
        bit: false,
        share: z.sig_share(&abba::preprocess_message(ID, false)),
        evidence: None,
    });
    net.push(Z, &[A, B, C], &z_pp0);

    // Round 1 pre-votes: B sees only zeros, A and C see the 1.
    net.deliver(B, from_in(&[B, C, Z], is_pp));
    net.deliver(A, from_in(&[A, B, C], is_pp));
    net.deliver(C, from_in(&[C, A, Z], is_pp));
    let z_pv1 = PreVote {
        round: 1,
        bit: true,
        justification: Justification::External(evidence.clone()),
        share: z.sig_share(&abba::prevote_message(ID, 1, true)),
    };
    net.push(Z, &[A, B, C], &AbbaMsg::PreVote(z_pv1.clone()));

    // Main-votes: A and C see three 1s, B sees the conflict.
    net.deliver(A, from_in(&[A, C, Z], is_pv1));
    net.deliver(C, from_in(&[C, A, Z], is_pv1));
    net.deliver(B, from_in(&[B, A, C], is_pv1));
    let ones: Vec<_> = [A, C]
        .iter()
        .map(|p| prevote_share(&net.last(*p, is_pv1).unwrap()).1)
        .chain([z_pv1.share.clone()])
        .collect();
    let pv1_cert = v.combine_shares(&abba::prevote_message(ID, 1, true), &ones).unwrap();
    let b_pv0 = match net.last(B, is_pv1).unwrap() {
        AbbaMsg::PreVote(pv) if !pv.bit => pv,
        other => panic!("party 1 should pre-vote 0, got {other:?}"),
    };
    let z_mv1 = MainVote {
        round: 1,
        value: MainValue::One,
        justification: Justification::Threshold(pv1_cert.clone()),
        share: z.sig_share(&abba::mainvote_message(ID, 1, MainValue::One)),
    };
    let z_abstain = MainVote {
        round: 1,
        value: MainValue::Abstain,
        justification: Justification::Conflict(Box::new((b_pv0, z_pv1))),
        share: z.sig_share(&abba::mainvote_message(ID, 1, MainValue::Abstain)),
    };
    net.push(Z, &[A], &AbbaMsg::MainVote(z_mv1));
    net.push(Z, &[B, C], &AbbaMsg::MainVote(z_abstain));

    // A decides 1; its DECISION stays queued. B and C see mixed votes.
    net.deliver(A, from_in(&[A, C, Z], is_mv1));
    assert_eq!(net.decisions.get(&A), Some(&true));
    net.deliver(B, from_in(&[B, C, Z], is_mv1));
    net.deliver(C, from_in(&[C, B, Z], is_mv1));
    let z_coin = AbbaMsg::Coin {
        round: 1,
        share: z.coin_share(&abba::coin_name(ID, 1)),
    };
    net.push(Z, &[B, C], &z_coin);
    net.deliver(B, from_in(&[B, C, Z], is_coin1));
    net.deliver(C, from_in(&[C, B, Z], is_coin1));

    // Round 2: Z pre-votes 0 on the round-1 certificate for 1.
    let z_pv2 = PreVote {
        round: 2,
        bit: false,
        justification: Justification::Threshold(pv1_cert),
        share: z.sig_share(&abba::prevote_message(ID, 2, false)),
    };
    net.push(Z, &[B, C], &AbbaMsg::PreVote(z_pv2.clone()));
    net.deliver(B, from_in(&[B, C, Z], is_pv2));
    net.deliver(C, from_in(&[C, B, Z], is_pv2));
    let zeros: Vec<_> = [B, C]
        .iter()
        .filter_map(|p| net.last(*p, is_pv2))
        .map(|m| prevote_share(&m))
        .filter(|(bit, _)| !bit)
        .map(|(_, s)| s)
        .chain([z_pv2.share])
        .collect();
    if let Ok(cert) = v.combine_shares(&abba::prevote_message(ID, 2, false), &zeros) {
        let z_mv2 = MainVote {
            round: 2,
            value: MainValue::Zero,
            justification: Justification::Threshold(cert),
            share: z.sig_share(&abba::mainvote_message(ID, 2, MainValue::Zero)),
        };
        net.push(Z, &[B, C], &AbbaMsg::MainVote(z_mv2));
        net.deliver(B, from_in(&[B, C, Z], is_mv2));
        net.deliver(C, from_in(&[C, B, Z], is_mv2));
    }

    // Release everything, A's DECISION included.
    net.flush();
    net.decisions
}

#[test]
#[cfg_attr(feature = "mutant-jv2", should_panic(expected = "agreement violated"))]
fn split_decision_attack_keeps_agreement() {
    let mut tried = 0;
    for seed in 0..64 {
        let dealer = Dealer::with_seed(4, seed).unwrap();
        if round1_coin(&dealer, &dealer.verifier()) {
            continue;
        }
        tried += 1;
        let d = attack(seed);
        assert_eq!(d.len(), 3, "every honest party decides (seed {seed}): {d:?}");
        let bits: Vec<bool> = d.values().copied().collect();
        assert!(bits.windows(2).all(|w| w[0] == w[1]), "agreement violated at seed {seed}: {d:?}");
        assert!(bits[0], "round-1 decision of 1 must stand");
    }
    assert!(tried >= 10);
}
