//! Byzantine behaviours. Each wraps an honest [`Party`] and rewrites what
//! it sends, so it can only ever sign with its own key.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::{stream_seed, BehaviorSpec};
use super::{Ctx, Dest, Node};
use crate::abba::{self, AbbaId, AbbaMsg, MainValue};
use crate::crypto::{PartyKey, Verifier};
use crate::invocation::InvMsg;
use crate::protocol::{Party, RequestBatch};
use crate::types::PartyId;
use crate::wire::{Body, ProtocolMessage};

pub struct Byzantine {
    inner: Party,
    behavior: BehaviorSpec,
    key: PartyKey,
    verifier: Verifier,
    rng: ChaCha20Rng,
    n: usize,
}

impl Byzantine {
    pub fn new(inner: Party, behavior: BehaviorSpec, key: PartyKey, verifier: Verifier, seed: u64) -> Byzantine {
        let n = verifier.params().n;
        let domain = format!("byzantine/{}", key.id().0);
        Byzantine {
            inner,
            behavior,
            key,
            verifier,
            rng: ChaCha20Rng::from_seed(stream_seed(seed, domain.as_bytes())),
            n,
        }
    }

    fn active(&self, ctx: &Ctx) -> bool {
        match self.behavior {
            BehaviorSpec::Crash { at_step } => ctx.step() < at_step,
            BehaviorSpec::Silent => false,
            _ => true,
        }
    }

    fn run(&mut self, ctx: &mut Ctx, f: impl FnOnce(&mut Party, &mut Ctx)) {
        if !self.active(ctx) {
            return;
        }
        let mut inner = ctx.child();
        f(&mut self.inner, &mut inner);
        for (dest, msg) in inner.take_outbox() {
            self.rewrite(dest, msg, ctx);
        }
    }

    fn rewrite(&mut self, dest: Dest, msg: ProtocolMessage, ctx: &mut Ctx) {
        match &self.behavior {
            BehaviorSpec::EquivocatePpb => match (&dest, &msg.body) {
                (Dest::All, Body::PpbPayload(c)) => {
                    let other = self.alternative_payload(&msg, c);
                    for p in 0..self.n as u16 {
                        let body = if (p as usize) < self.n / 2 {
                            Body::PpbPayload(c.clone())
                        } else {
                            Body::PpbPayload(other.clone())
                        };
                        ctx.send(
                            PartyId(p),
                            ProtocolMessage {
                                instance: msg.instance,
                                body,
                            },
                        );
                    }
                }
                _ => ctx.route(dest, msg),
            },
            BehaviorSpec::CorruptShares => ctx.route(dest, corrupt(msg)),
            BehaviorSpec::WithholdSuggestions => {
                if !matches!(msg.body, Body::Proposal { .. } | Body::Suggestion { .. }) {
                    ctx.route(dest, msg)
                }
            }
            BehaviorSpec::RandomVotes => match (&dest, &msg.body) {
                (Dest::All, Body::Abba { slot, msg: m @ (AbbaMsg::PreVote(_) | AbbaMsg::MainVote(_)) }) => {
                    let id = AbbaId {
                        instance: msg.instance,
                        slot: *slot,
                    };
                    for p in 0..self.n as u16 {
                        let flip = self.rng.gen_bool(0.5);
                        let m = if flip { self.flipped(id, m) } else { m.clone() };
                        ctx.send(
                            PartyId(p),
                            ProtocolMessage {
                                instance: msg.instance,
                                body: Body::Abba { slot: *slot, msg: m },
                            },
                        );
                    }
                }
                _ => ctx.route(dest, msg),
            },
            BehaviorSpec::Crash { .. } | BehaviorSpec::Silent => ctx.route(dest, msg),
        }
    }

    /// A different well-formed batch for the same slot.
    fn alternative_payload(&self, msg: &ProtocolMessage, _c: &crate::crypto::Ciphertext) -> crate::crypto::Ciphertext {
        let batch = RequestBatch {
            instance: msg.instance,
            proposer: self.key.id(),
            requests: vec![format!("equivocation-{}-{}", msg.instance.0, self.key.id().0).into_bytes()],
        };
        self.verifier.tpke_enc(&batch.encode())
    }

    /// The same vote with the other bit, re-signed with our own key and
    /// carrying the original justification.
    fn flipped(&self, id: AbbaId, m: &AbbaMsg) -> AbbaMsg {
        match m {
            AbbaMsg::PreVote(pv) => {
                let mut pv = pv.clone();
                pv.bit = !pv.bit;
                pv.share = self.key.sig_share(&abba::prevote_message(id, pv.round, pv.bit));
                AbbaMsg::PreVote(pv)
            }
            AbbaMsg::MainVote(mv) => {
                let mut mv = mv.clone();
                mv.value = match mv.value {
                    MainValue::Zero => MainValue::One,
                    MainValue::One => MainValue::Zero,
                    MainValue::Abstain => MainValue::One,
                };
                mv.share = self.key.sig_share(&abba::mainvote_message(id, mv.round, mv.value));
                AbbaMsg::MainVote(mv)
            }
            other => other.clone(),
        }
    }
}

fn flip(bytes: &mut [u8; 32]) {
    bytes[0] ^= 0x01;
}

fn corrupt(mut msg: ProtocolMessage) -> ProtocolMessage {
    match &mut msg.body {
        Body::Share(s) => flip(&mut s.share_bytes),
        Body::PpbShare { share, .. } => flip(&mut share.share_bytes),
        Body::Slot {
            msg: InvMsg::DecShare(s),
            ..
        } => flip(&mut s.share_bytes),
        Body::Abba { msg: m, .. } => match m {
            AbbaMsg::PreProcess(pp) => flip(&mut pp.share.share_bytes),
            AbbaMsg::PreVote(pv) => flip(&mut pv.share.share_bytes),
            AbbaMsg::MainVote(mv) => flip(&mut mv.share.share_bytes),
            AbbaMsg::Coin { share, .. } => flip(&mut share.share_bytes),
            AbbaMsg::Decision(_) => {}
        },
        _ => {}
    }
    msg
}

impl Node for Byzantine {
    fn start(&mut self, ctx: &mut Ctx) {
        self.run(ctx, |p, c| p.start(c));
    }

    fn handle(&mut self, from: PartyId, msg: ProtocolMessage, ctx: &mut Ctx) {
        self.run(ctx, |p, c| p.handle(from, msg, c));
    }

    fn party(&self) -> Option<&Party> {
        Some(&self.inner)
    }
}
