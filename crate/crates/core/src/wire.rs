//! Canonical wire encoding. Every message is
//! `tag: u8 ‖ instance: u64 ‖ body`, big-endian, with byte strings
//! prefixed by a u32 length. Byte counts in run reports are the lengths of
//! these encodings.
//!
//! Coin share names are not sent: the receiver rebuilds them from the
//! instance, slot and round.

use crate::abba::{self, AbbaId, AbbaMsg, Decision, Justification, MainValue, MainVote, PreProcess, PreVote};
use crate::committee;
use crate::crypto::{Ciphertext, CoinShare, DecryptionShare, SignatureShare, ThresholdSignature};
use crate::invocation::InvMsg;
use crate::ppb::{PpbId, PpbProof};
use crate::types::{Digest, InstanceId, PartyId, DIGEST_LEN};

pub mod tag {
    pub const SHARE: u8 = 1;
    pub const PPB_PAYLOAD: u8 = 2;
    pub const PPB_SHARE: u8 = 3;
    pub const PROPOSAL: u8 = 4;
    pub const SUGGESTION: u8 = 5;
    pub const V_MSG: u8 = 6;
    pub const RECOVER: u8 = 7;
    pub const RECOVER_RESP: u8 = 8;
    pub const DEC_SHARE: u8 = 9;
    pub const ABBA_PREPROCESS: u8 = 10;
    pub const ABBA_PREVOTE: u8 = 11;
    pub const ABBA_MAINVOTE: u8 = 12;
    pub const ABBA_COIN: u8 = 13;
    pub const ABBA_DECISION: u8 = 14;

    pub fn name(t: u8) -> &'static str {
        match t {
            SHARE => "SHARE",
            PPB_PAYLOAD => "PPB_PAYLOAD",
            PPB_SHARE => "PPB_SHARE",
            PROPOSAL => "PROPOSAL",
            SUGGESTION => "SUGGESTION",
            V_MSG => "V_MSG",
            RECOVER => "RECOVER",
            RECOVER_RESP => "RECOVER_RESP",
            DEC_SHARE => "DEC_SHARE",
            ABBA_PREPROCESS => "ABBA_PREPROCESS",
            ABBA_PREVOTE => "ABBA_PREVOTE",
            ABBA_MAINVOTE => "ABBA_MAINVOTE",
            ABBA_COIN => "ABBA_COIN",
            ABBA_DECISION => "ABBA_DECISION",
            _ => "UNKNOWN",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    Share(CoinShare),
    PpbPayload(Ciphertext),
    PpbShare {
        origin: PartyId,
        share: SignatureShare,
    },
    Proposal {
        slot: PartyId,
        ciphertext: Ciphertext,
        proof: PpbProof,
    },
    Suggestion {
        slot: PartyId,
        ciphertext: Ciphertext,
        proof: PpbProof,
        relayer: PartyId,
    },
    Slot {
        slot: PartyId,
        msg: InvMsg,
    },
    RecoverResp {
        slot: PartyId,
        ciphertext: Ciphertext,
        proof: Option<PpbProof>,
    },
    Abba {
        slot: PartyId,
        msg: AbbaMsg,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub instance: InstanceId,
    pub body: Body,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated message")]
    Truncated,
    #[error("unknown tag {0}")]
    UnknownTag(u8),
    #[error("invalid field value")]
    Invalid,
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

impl ProtocolMessage {
    pub fn tag(&self) -> u8 {
        match &self.body {
            Body::Share(_) => tag::SHARE,
            Body::PpbPayload(_) => tag::PPB_PAYLOAD,
            Body::PpbShare { .. } => tag::PPB_SHARE,
            Body::Proposal { .. } => tag::PROPOSAL,
            Body::Suggestion { .. } => tag::SUGGESTION,
            Body::Slot { msg, .. } => match msg {
                InvMsg::V { .. } => tag::V_MSG,
                InvMsg::Recover => tag::RECOVER,
                InvMsg::DecShare(_) => tag::DEC_SHARE,
            },
            Body::RecoverResp { .. } => tag::RECOVER_RESP,
            Body::Abba { msg, .. } => match msg {
                AbbaMsg::PreProcess(_) => tag::ABBA_PREPROCESS,
                AbbaMsg::PreVote(_) => tag::ABBA_PREVOTE,
                AbbaMsg::MainVote(_) => tag::ABBA_MAINVOTE,
                AbbaMsg::Coin { .. } => tag::ABBA_COIN,
                AbbaMsg::Decision(_) => tag::ABBA_DECISION,
            },
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(64));
        w.u8(self.tag());
        w.u64(self.instance.0);
        match &self.body {
            Body::Share(s) => {
                w.party(s.holder);
                w.bytes(&s.share_bytes);
            }
            Body::PpbPayload(c) => w.ciphertext(c),
            Body::PpbShare { origin, share } => {
                w.party(*origin);
                w.sig_share(share);
            }
            Body::Proposal { slot, ciphertext, proof } => {
                w.party(*slot);
                w.ciphertext(ciphertext);
                w.proof(proof);
            }
            Body::Suggestion {
                slot,
                ciphertext,
                proof,
                relayer,
            } => {
                w.party(*slot);
                w.ciphertext(ciphertext);
                w.proof(proof);
                w.party(*relayer);
            }
            Body::Slot { slot, msg } => {
                w.party(*slot);
                match msg {
                    InvMsg::V { u, proof } => {
                        w.u8(*u as u8);
                        w.opt_proof(proof.as_ref());
                    }
                    InvMsg::Recover => {}
                    InvMsg::DecShare(s) => {
                        w.party(s.holder);
                        w.raw(&s.ciphertext_digest.0);
                        w.raw(&s.share_bytes);
                    }
                }
            }
            Body::RecoverResp { slot, ciphertext, proof } => {
                w.party(*slot);
                w.ciphertext(ciphertext);
                w.opt_proof(proof.as_ref());
            }
            Body::Abba { slot, msg } => {
                w.party(*slot);
                match msg {
                    AbbaMsg::PreProcess(pp) => {
                        w.u8(pp.bit as u8);
                        w.sig_share(&pp.share);
                        w.opt_proof(pp.evidence.as_ref());
                    }
                    AbbaMsg::PreVote(pv) => w.prevote(pv),
                    AbbaMsg::MainVote(mv) => {
                        w.u32(mv.round);
                        w.u8(mv.value.code());
                        w.justification(&mv.justification);
                        w.sig_share(&mv.share);
                    }
                    AbbaMsg::Coin { round, share } => {
                        w.u32(*round);
                        w.party(share.holder);
                        w.raw(&share.share_bytes);
                    }
                    AbbaMsg::Decision(d) => {
                        w.u32(d.round);
                        w.u8(d.bit as u8);
                        w.raw(&d.proof.to_bytes());
                    }
                }
            }
        }
        w.0
    }

    /// Same as `encode().len()`.
    pub fn encoded_len(&self) -> usize {
        self.encode().len()
    }

    pub fn decode(bytes: &[u8]) -> Result<ProtocolMessage, DecodeError> {
        let mut r = Reader { b: bytes, pos: 0 };
        let t = r.u8()?;
        let instance = InstanceId(r.u64()?);
        let body = match t {
            tag::SHARE => {
                let holder = r.party()?;
                let share_bytes = r.arr32_lp()?;
                Body::Share(CoinShare {
                    holder,
                    coin_name: committee::coin_name(instance),
                    share_bytes,
                })
            }
            tag::PPB_PAYLOAD => Body::PpbPayload(r.ciphertext()?),
            tag::PPB_SHARE => Body::PpbShare {
                origin: r.party()?,
                share: r.sig_share()?,
            },
            tag::PROPOSAL => Body::Proposal {
                slot: r.party()?,
                ciphertext: r.ciphertext()?,
                proof: r.proof()?,
            },
            tag::SUGGESTION => Body::Suggestion {
                slot: r.party()?,
                ciphertext: r.ciphertext()?,
                proof: r.proof()?,
                relayer: r.party()?,
            },
            tag::V_MSG => Body::Slot {
                slot: r.party()?,
                msg: InvMsg::V {
                    u: r.bit()?,
                    proof: r.opt_proof()?,
                },
            },
            tag::RECOVER => Body::Slot {
                slot: r.party()?,
                msg: InvMsg::Recover,
            },
            tag::DEC_SHARE => Body::Slot {
                slot: r.party()?,
                msg: InvMsg::DecShare(DecryptionShare {
                    holder: r.party()?,
                    ciphertext_digest: Digest(r.arr32()?),
                    share_bytes: r.arr32()?,
                }),
            },
            tag::RECOVER_RESP => Body::RecoverResp {
                slot: r.party()?,
                ciphertext: r.ciphertext()?,
                proof: r.opt_proof()?,
            },
            tag::ABBA_PREPROCESS..=tag::ABBA_DECISION => {
                let slot = r.party()?;
                let id = AbbaId { instance, slot };
                let msg = match t {
                    tag::ABBA_PREPROCESS => AbbaMsg::PreProcess(PreProcess {
                        bit: r.bit()?,
                        share: r.sig_share()?,
                        evidence: r.opt_proof()?,
                    }),
                    tag::ABBA_PREVOTE => AbbaMsg::PreVote(r.prevote(0)?),
                    tag::ABBA_MAINVOTE => AbbaMsg::MainVote(MainVote {
                        round: r.u32()?,
                        value: MainValue::from_code(r.u8()?).ok_or(DecodeError::Invalid)?,
                        justification: r.justification(0)?,
                        share: r.sig_share()?,
                    }),
                    tag::ABBA_COIN => {
                        let round = r.u32()?;
                        AbbaMsg::Coin {
                            round,
                            share: CoinShare {
                                holder: r.party()?,
                                coin_name: abba::coin_name(id, round),
                                share_bytes: r.arr32()?,
                            },
                        }
                    }
                    _ => AbbaMsg::Decision(Decision {
                        round: r.u32()?,
                        bit: r.bit()?,
                        proof: ThresholdSignature::from_bytes(r.take(ThresholdSignature::ENCODED_LEN)?)
                            .ok_or(DecodeError::Invalid)?,
                    }),
                };
                Body::Abba { slot, msg }
            }
            other => return Err(DecodeError::UnknownTag(other)),
        };
        if r.pos != bytes.len() {
            return Err(DecodeError::Trailing(bytes.len() - r.pos));
        }
        Ok(ProtocolMessage { instance, body })
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn party(&mut self, p: PartyId) {
        self.u16(p.0);
    }
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.raw(b);
    }
    fn ciphertext(&mut self, c: &Ciphertext) {
        self.u32(c.length_plain);
        self.bytes(&c.payload);
    }
    fn sig_share(&mut self, s: &SignatureShare) {
        self.raw(&s.to_bytes());
    }
    fn proof(&mut self, p: &PpbProof) {
        self.u64(p.id.instance.0);
        self.party(p.id.sender);
        self.raw(&p.payload_digest.0);
        self.raw(&p.signature.to_bytes());
    }
    fn opt_proof(&mut self, p: Option<&PpbProof>) {
        match p {
            None => self.u8(0),
            Some(p) => {
                self.u8(1);
                self.proof(p);
            }
        }
    }
    fn prevote(&mut self, pv: &PreVote) {
        self.u32(pv.round);
        self.u8(pv.bit as u8);
        self.justification(&pv.justification);
        self.sig_share(&pv.share);
    }
    fn justification(&mut self, j: &Justification) {
        match j {
            Justification::Threshold(sig) => {
                self.u8(0);
                self.raw(&sig.to_bytes());
            }
            Justification::Conflict(pair) => {
                self.u8(1);
                self.prevote(&pair.0);
                self.prevote(&pair.1);
            }
            Justification::External(p) => {
                self.u8(2);
                self.proof(p);
            }
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let s = self.b.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn bit(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Invalid),
        }
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn party(&mut self) -> Result<PartyId, DecodeError> {
        self.u16().map(PartyId)
    }
    fn arr32(&mut self) -> Result<[u8; DIGEST_LEN], DecodeError> {
        Ok(self.take(DIGEST_LEN)?.try_into().unwrap())
    }
    fn arr32_lp(&mut self) -> Result<[u8; DIGEST_LEN], DecodeError> {
        if self.u32()? as usize != DIGEST_LEN {
            return Err(DecodeError::Invalid);
        }
        self.arr32()
    }
    fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn ciphertext(&mut self) -> Result<Ciphertext, DecodeError> {
        let length_plain = self.u32()?;
        let payload = self.bytes()?;
        Ok(Ciphertext { payload, length_plain })
    }
    fn sig_share(&mut self) -> Result<SignatureShare, DecodeError> {
        SignatureShare::from_bytes(self.take(SignatureShare::ENCODED_LEN)?).ok_or(DecodeError::Invalid)
    }
    fn proof(&mut self) -> Result<PpbProof, DecodeError> {
        Ok(PpbProof {
            id: PpbId {
                instance: InstanceId(self.u64()?),
                sender: self.party()?,
            },
            payload_digest: Digest(self.arr32()?),
            signature: ThresholdSignature::from_bytes(self.take(ThresholdSignature::ENCODED_LEN)?)
                .ok_or(DecodeError::Invalid)?,
        })
    }
    fn opt_proof(&mut self) -> Result<Option<PpbProof>, DecodeError> {
        Ok(if self.bit()? { Some(self.proof()?) } else { None })
    }
    fn prevote(&mut self, depth: u8) -> Result<PreVote, DecodeError> {
        Ok(PreVote {
            round: self.u32()?,
            bit: self.bit()?,
            justification: self.justification(depth)?,
            share: self.sig_share()?,
        })
    }
    fn justification(&mut self, depth: u8) -> Result<Justification, DecodeError> {
        match self.u8()? {
            0 => Ok(Justification::Threshold(
                ThresholdSignature::from_bytes(self.take(ThresholdSignature::ENCODED_LEN)?)
                    .ok_or(DecodeError::Invalid)?,
            )),
            // conflict evidence nests pre-votes, which never nest further
            1 if depth == 0 => Ok(Justification::Conflict(Box::new((
                self.prevote(depth + 1)?,
                self.prevote(depth + 1)?,
            )))),
            2 => Ok(Justification::External(self.proof()?)),
            _ => Err(DecodeError::Invalid),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arr() -> impl Strategy<Value = [u8; 32]> {
        any::<[u8; 32]>()
    }

    fn party() -> impl Strategy<Value = PartyId> {
        (0u16..16).prop_map(PartyId)
    }

    fn tsig() -> impl Strategy<Value = ThresholdSignature> {
        (arr(), arr()).prop_map(|(d, s)| ThresholdSignature {
            message_digest: Digest(d),
            sig_bytes: s,
        })
    }

    fn sig_share() -> impl Strategy<Value = SignatureShare> {
        (party(), arr(), arr()).prop_map(|(signer, d, s)| SignatureShare {
            signer,
            message_digest: Digest(d),
            share_bytes: s,
        })
    }

    fn proof() -> impl Strategy<Value = PpbProof> {
        (any::<u64>(), party(), arr(), tsig()).prop_map(|(i, s, d, signature)| PpbProof {
            id: PpbId {
                instance: InstanceId(i),
                sender: s,
            },
            payload_digest: Digest(d),
            signature,
        })
    }

    fn ciphertext() -> impl Strategy<Value = Ciphertext> {
        (proptest::collection::vec(any::<u8>(), 0..200), any::<u32>())
            .prop_map(|(payload, length_plain)| Ciphertext { payload, length_plain })
    }

    fn flat_justification() -> impl Strategy<Value = Justification> {
        prop_oneof![tsig().prop_map(Justification::Threshold), proof().prop_map(Justification::External)]
    }

    fn prevote() -> impl Strategy<Value = PreVote> {
        (any::<u32>(), any::<bool>(), flat_justification(), sig_share()).prop_map(|(round, bit, justification, share)| {
            PreVote {
                round,
                bit,
                justification,
                share,
            }
        })
    }

    fn justification() -> impl Strategy<Value = Justification> {
        prop_oneof![
            flat_justification(),
            (prevote(), prevote()).prop_map(|(a, b)| Justification::Conflict(Box::new((a, b))))
        ]
    }

    fn abba_msg(instance: InstanceId, slot: PartyId) -> impl Strategy<Value = AbbaMsg> {
        let id = AbbaId { instance, slot };
        prop_oneof![
            (any::<bool>(), sig_share(), proptest::option::of(proof()))
                .prop_map(|(bit, share, evidence)| AbbaMsg::PreProcess(PreProcess { bit, share, evidence })),
            prevote().prop_map(AbbaMsg::PreVote),
            (any::<u32>(), 0u8..3, justification(), sig_share()).prop_map(|(round, v, justification, share)| {
                AbbaMsg::MainVote(MainVote {
                    round,
                    value: MainValue::from_code(v).unwrap(),
                    justification,
                    share,
                })
            }),
            (any::<u32>(), party(), arr()).prop_map(move |(round, holder, share_bytes)| AbbaMsg::Coin {
                round,
                share: CoinShare {
                    holder,
                    coin_name: abba::coin_name(id, round),
                    share_bytes,
                },
            }),
            (any::<u32>(), any::<bool>(), tsig()).prop_map(|(round, bit, proof)| AbbaMsg::Decision(Decision {
                round,
                bit,
                proof
            })),
        ]
    }

    fn message() -> impl Strategy<Value = ProtocolMessage> {
        (any::<u64>(), party()).prop_flat_map(|(i, slot)| {
            let instance = InstanceId(i);
            let body = prop_oneof![
                (party(), arr()).prop_map(move |(holder, share_bytes)| Body::Share(CoinShare {
                    holder,
                    coin_name: committee::coin_name(instance),
                    share_bytes,
                })),
                ciphertext().prop_map(Body::PpbPayload),
                (party(), sig_share()).prop_map(|(origin, share)| Body::PpbShare { origin, share }),
                (ciphertext(), proof()).prop_map(move |(ciphertext, proof)| Body::Proposal {
                    slot,
                    ciphertext,
                    proof
                }),
                (ciphertext(), proof(), party()).prop_map(move |(ciphertext, proof, relayer)| Body::Suggestion {
                    slot,
                    ciphertext,
                    proof,
                    relayer
                }),
                (any::<bool>(), proptest::option::of(proof())).prop_map(move |(u, proof)| Body::Slot {
                    slot,
                    msg: InvMsg::V { u, proof }
                }),
                Just(Body::Slot {
                    slot,
                    msg: InvMsg::Recover
                }),
                (party(), arr(), arr()).prop_map(move |(holder, d, s)| Body::Slot {
                    slot,
                    msg: InvMsg::DecShare(DecryptionShare {
                        holder,
                        ciphertext_digest: Digest(d),
                        share_bytes: s,
                    })
                }),
                (ciphertext(), proptest::option::of(proof())).prop_map(move |(ciphertext, proof)| {
                    Body::RecoverResp { slot, ciphertext, proof }
                }),
                abba_msg(instance, slot).prop_map(move |msg| Body::Abba { slot, msg }),
            ];
            body.prop_map(move |body| ProtocolMessage { instance, body })
        })
    }

    proptest! {
        #[test]
        fn roundtrip(m in message()) {
            let bytes = m.encode();
            prop_assert_eq!(bytes.len(), m.encoded_len());
            prop_assert_eq!(bytes[0], m.tag());
            prop_assert_eq!(ProtocolMessage::decode(&bytes), Ok(m));
        }

        #[test]
        fn truncation_never_panics(m in message(), cut in 0usize..1000) {
            let bytes = m.encode();
            let cut = cut % bytes.len();
            prop_assert!(ProtocolMessage::decode(&bytes[..cut]).is_err());
        }

        #[test]
        fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
            let _ = ProtocolMessage::decode(&bytes);
        }
    }

    #[test]
    fn recover_is_small() {
        let m = ProtocolMessage {
            instance: InstanceId(1),
            body: Body::Slot {
                slot: PartyId(0),
                msg: InvMsg::Recover,
            },
        };
        assert_eq!(m.encode(), vec![tag::RECOVER, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0]);
    }

    #[test]
    fn unknown_tag_and_trailing() {
        assert_eq!(ProtocolMessage::decode(&[99, 0, 0, 0, 0, 0, 0, 0, 1]), Err(DecodeError::UnknownTag(99)));
        let mut b = ProtocolMessage {
            instance: InstanceId(1),
            body: Body::Slot {
                slot: PartyId(0),
                msg: InvMsg::Recover,
            },
        }
        .encode();
        b.push(0);
        assert_eq!(ProtocolMessage::decode(&b), Err(DecodeError::Trailing(1)));
    }
}
