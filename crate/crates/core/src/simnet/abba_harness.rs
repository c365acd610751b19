//! Agreement-only harness: one slot, n parties, the last f of them
//! Byzantine, random delivery order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::stream_seed;
use crate::abba::{self, Abba, AbbaId, AbbaMsg, AbbaOut, MainValue};
use crate::crypto::{key_setup, Dealer, PartyKey};
use crate::ppb::{countersign_message, PpbProof};
use crate::types::{InstanceId, Params, PartyId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adversary {
    Silent,
    /// Runs the honest machine with input 0.
    Honest0,
    /// Runs the honest machine and flips every vote bit per recipient at
    /// random, re-signing with its own key.
    Flip,
    /// Runs the honest machine and sends every vote with one bit to the
    /// lower half of the parties and the other bit to the upper half.
    Split,
}

#[derive(Clone, Debug)]
pub struct HarnessConfig {
    pub n: usize,
    pub seed: u64,
    /// How many honest parties input 1; the other honest parties input 0.
    pub ones: usize,
    pub adversary: Adversary,
    pub max_steps: u64,
}

#[derive(Clone, Debug)]
pub struct HarnessOutcome {
    pub inputs: Vec<bool>,
    /// Per honest party.
    pub decisions: Vec<Option<bool>>,
    pub max_round: u32,
    pub steps: u64,
    /// Whether a Byzantine party entered with a valid proof for input 1.
    pub adversary_evidence: bool,
}

impl HarnessOutcome {
    pub fn all_decided(&self) -> bool {
        self.decisions.iter().all(Option::is_some)
    }

    pub fn agreement(&self) -> bool {
        self.decisions.windows(2).all(|w| w[0] == w[1])
    }

    /// Decision forced by the inputs, if any. A 1 backed by a valid proof
    /// is admissible even when no honest party input it.
    pub fn forced(&self, f: usize) -> Option<bool> {
        let ones = self.inputs.iter().filter(|b| **b).count();
        if ones > f || ones == self.inputs.len() {
            Some(true)
        } else if ones == 0 && !self.adversary_evidence {
            Some(false)
        } else {
            None
        }
    }

    /// Forced decisions hold, and a 0 is only decided if some honest party
    /// input 0.
    pub fn validity(&self, f: usize) -> bool {
        let forced_ok = self
            .forced(f)
            .map_or(true, |b| self.decisions.iter().all(|d| *d == Some(b)));
        let zero_ok = !self.decisions.contains(&Some(false)) || self.inputs.contains(&false);
        forced_ok && zero_ok
    }
}

const ID: AbbaId = AbbaId {
    instance: InstanceId(1),
    slot: PartyId(0),
};

/// A proof for the harness slot, as a completed broadcast would produce.
fn proof(dealer: &Dealer) -> PpbProof {
    let v = dealer.verifier();
    let c = v.tpke_enc(b"harness batch");
    let pid = ID.ppb_id();
    let msg = countersign_message(pid, &c.digest());
    let shares: Vec<_> = v.params().parties().map(|p| dealer.party_key(p).sig_share(&msg)).collect();
    PpbProof {
        id: pid,
        payload_digest: c.digest(),
        signature: v.combine_shares(&msg, &shares).expect("all shares valid"),
    }
}

fn flip(key: &PartyKey, m: &AbbaMsg) -> AbbaMsg {
    match m {
        AbbaMsg::PreVote(pv) => {
            let mut pv = pv.clone();
            pv.bit = !pv.bit;
            pv.share = key.sig_share(&abba::prevote_message(ID, pv.round, pv.bit));
            AbbaMsg::PreVote(pv)
        }
        AbbaMsg::MainVote(mv) => {
            let mut mv = mv.clone();
            mv.value = match mv.value {
                MainValue::One => MainValue::Zero,
                MainValue::Zero | MainValue::Abstain => MainValue::One,
            };
            mv.share = key.sig_share(&abba::mainvote_message(ID, mv.round, mv.value));
            AbbaMsg::MainVote(mv)
        }
        AbbaMsg::PreProcess(pp) => {
            let mut pp = pp.clone();
            pp.bit = !pp.bit;
            pp.share = key.sig_share(&abba::preprocess_message(ID, pp.bit));
            AbbaMsg::PreProcess(pp)
        }
        other => other.clone(),
    }
}

pub fn run(cfg: &HarnessConfig) -> HarnessOutcome {
    let params = Params::from_n(cfg.n).expect("n = 3f + 1");
    let (n, f) = (params.n, params.f);
    let honest = n - f;
    assert!(cfg.ones <= honest);
    let dealer = Dealer::new(key_setup(128, n, params.quorum(), cfg.seed).expect("valid parameters"));
    let verifier = dealer.verifier();
    let evidence = proof(&dealer);
    let mut rng = ChaCha20Rng::from_seed(stream_seed(cfg.seed, b"abba-harness"));
    let mut nodes: Vec<Abba> = params
        .parties()
        .map(|p| Abba::new(ID, dealer.party_key(p), verifier.clone()))
        .collect();
    let keys: Vec<PartyKey> = params.parties().map(|p| dealer.party_key(p)).collect();
    let inputs: Vec<bool> = (0..honest).map(|i| i < cfg.ones).collect();
    let mut queue: Vec<(PartyId, PartyId, AbbaMsg)> = Vec::new();
    let mut decisions = vec![None; honest];
    let mut adversary_evidence = false;

    let emit = |from: usize, out: Vec<AbbaOut>, queue: &mut Vec<_>, decisions: &mut Vec<Option<bool>>, rng: &mut ChaCha20Rng| {
        for o in out {
            match o {
                AbbaOut::Decided(d) => {
                    if from < honest {
                        decisions[from] = Some(d.bit);
                    }
                }
                AbbaOut::Multicast(m) => {
                    for to in 0..n {
                        let flipped = from >= honest
                            && match cfg.adversary {
                                Adversary::Flip => rng.gen_bool(0.5),
                                Adversary::Split => to < n / 2,
                                _ => false,
                            };
                        let m = if flipped { flip(&keys[from], &m) } else { m.clone() };
                        queue.push((PartyId(from as u16), PartyId(to as u16), m));
                    }
                }
            }
        }
    };

    for i in 0..n {
        let out = if i < honest {
            let b = inputs[i];
            nodes[i].input(b, b.then(|| evidence.clone())).expect("fresh input")
        } else {
            match cfg.adversary {
                Adversary::Silent => continue,
                Adversary::Honest0 => nodes[i].input(false, None).expect("fresh input"),
                Adversary::Flip | Adversary::Split => {
                    let b = rng.gen_bool(0.5);
                    adversary_evidence |= b;
                    nodes[i].input(b, b.then(|| evidence.clone())).expect("fresh input")
                }
            }
        };
        emit(i, out, &mut queue, &mut decisions, &mut rng);
    }

    let mut steps = 0;
    while !queue.is_empty() && steps < cfg.max_steps {
        let k = rng.gen_range(0..queue.len());
        let (from, to, m) = queue.swap_remove(k);
        steps += 1;
        let t = to.index();
        if t >= honest && cfg.adversary == Adversary::Silent {
            continue;
        }
        let out = nodes[t].handle(from, m);
        emit(t, out, &mut queue, &mut decisions, &mut rng);
        if decisions.iter().all(Option::is_some) {
            break;
        }
    }
    let max_round = nodes[..honest]
        .iter()
        .filter_map(|a| a.rounds_started().last().copied())
        .max()
        .unwrap_or(0);
    HarnessOutcome {
        inputs,
        decisions,
        max_round,
        steps,
        adversary_evidence,
    }
}
