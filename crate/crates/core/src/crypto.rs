//! Threshold cryptography provider.
//!
//! Three primitives share one key setup: a `(t, n)` threshold signature, a
//! named threshold coin (bits and committee sets), and an `(f + 1, n)`
//! threshold encryption scheme.
//!
//! The implementation is a trusted-dealer simulation. Every share is a keyed
//! SHA-256 digest of a per-party secret and the signed bytes, and every
//! combined value is a keyed digest of the dealer's master secret. Nothing
//! here is secure against a real attacker; it exists so the protocol layers
//! above can be checked against the exact interface contracts of the real
//! schemes (determinism, subset independence, robustness, non-forgeability
//! relative to the capabilities handed out).
//!
//! Capabilities are split three ways:
//!
//! - [`Dealer`] owns the [`KeyMaterial`] and hands out keys. Only simulator
//!   setup code holds one.
//! - [`PartyKey`] lets party `i` produce *its own* shares and nothing else.
//! - [`Verifier`] is the public handle: share verification, combination,
//!   signature verification, coin tossing and encryption.
//!
//! The master secret never leaves this module.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::types::{Digest, Params, PartyId, DIGEST_LEN};

const KEY_BLOB_MAGIC: &[u8; 8] = b"SABC-KM1";

type Secret = [u8; DIGEST_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("party count {0} is not of the form 3f + 1 with f >= 1")]
    BadPartyCount(usize),
    #[error("signature threshold {t} outside ({f}, {max}]")]
    BadThreshold { t: usize, f: usize, max: usize },
    #[error("committee size {kappa} exceeds party count {n}")]
    BadCommitteeSize { kappa: usize, n: usize },
    #[error("need {needed} distinct valid shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("invalid shares from {0:?}")]
    InvalidShare(Vec<PartyId>),
    #[error("ciphertext failed structural checks")]
    Malformed,
    #[error("key material blob rejected: {0}")]
    BadKeyBlob(&'static str),
}

pub type Result<T, E = CryptoError> = std::result::Result<T, E>;

/// Output of the trusted dealer.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    security_param: u32,
    n: u16,
    t_sig: u16,
    seed: u64,
    master: Secret,
    party_secrets: Vec<Secret>,
}

impl std::fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyMaterial")
            .field("security_param", &self.security_param)
            .field("n", &self.n)
            .field("t_sig", &self.t_sig)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Runs the dealer. Deterministic in `(seed, n, t_sig)`; `security_param` is
/// recorded but does not change the mock's strength.
pub fn key_setup(security_param: u32, n: usize, t_sig: usize, seed: u64) -> Result<KeyMaterial> {
    let params = Params::from_n(n).ok_or(CryptoError::BadPartyCount(n))?;
    if n > u16::MAX as usize {
        return Err(CryptoError::BadPartyCount(n));
    }
    if t_sig <= params.f || t_sig > params.quorum() {
        return Err(CryptoError::BadThreshold {
            t: t_sig,
            f: params.f,
            max: params.quorum(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut master = [0u8; DIGEST_LEN];
    rng.fill_bytes(&mut master);
    let party_secrets: Vec<Secret> = (0..n as u16)
        .map(|i| keyed(&master, b"party-secret", &[&i.to_be_bytes()]).0)
        .collect();
    let km = KeyMaterial {
        security_param,
        n: n as u16,
        t_sig: t_sig as u16,
        seed,
        master,
        party_secrets,
    };
    km.check_distinct()?;
    Ok(km)
}

impl KeyMaterial {
    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn f(&self) -> usize {
        (self.n() - 1) / 3
    }

    pub fn t_sig(&self) -> usize {
        self.t_sig as usize
    }

    pub fn security_param(&self) -> u32 {
        self.security_param
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_distinct(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        if self.party_secrets.iter().all(|s| seen.insert(*s)) {
            Ok(())
        } else {
            Err(CryptoError::BadKeyBlob("party secrets not distinct"))
        }
    }

    /// Versioned binary blob: magic `SABC-KM1`, then big-endian
    /// `security_param: u32, n: u16, t_sig: u16, seed: u64`, the master
    /// secret and `n` party secrets (32 bytes each).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(56 + DIGEST_LEN * self.party_secrets.len());
        out.extend_from_slice(KEY_BLOB_MAGIC);
        out.extend_from_slice(&self.security_param.to_be_bytes());
        out.extend_from_slice(&self.n.to_be_bytes());
        out.extend_from_slice(&self.t_sig.to_be_bytes());
        out.extend_from_slice(&self.seed.to_be_bytes());
        out.extend_from_slice(&self.master);
        for s in &self.party_secrets {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<KeyMaterial> {
        let header = 8 + 4 + 2 + 2 + 8 + DIGEST_LEN;
        if bytes.len() < header || &bytes[..8] != KEY_BLOB_MAGIC {
            return Err(CryptoError::BadKeyBlob("missing SABC-KM1 header"));
        }
        let security_param = u32::from_be_bytes(bytes[8..12].try_into().unwrap());
        let n = u16::from_be_bytes(bytes[12..14].try_into().unwrap());
        let t_sig = u16::from_be_bytes(bytes[14..16].try_into().unwrap());
        let seed = u64::from_be_bytes(bytes[16..24].try_into().unwrap());
        let master: Secret = bytes[24..header].try_into().unwrap();
        let body = &bytes[header..];
        if body.len() != n as usize * DIGEST_LEN {
            return Err(CryptoError::BadKeyBlob("party secret section has wrong length"));
        }
        let params = Params::from_n(n as usize).ok_or(CryptoError::BadKeyBlob("bad n"))?;
        if (t_sig as usize) <= params.f || (t_sig as usize) > params.quorum() {
            return Err(CryptoError::BadKeyBlob("bad t_sig"));
        }
        let party_secrets = body
            .chunks_exact(DIGEST_LEN)
            .map(|c| c.try_into().unwrap())
            .collect();
        let km = KeyMaterial {
            security_param,
            n,
            t_sig,
            seed,
            master,
            party_secrets,
        };
        km.check_distinct()?;
        Ok(km)
    }

    fn secret(&self, party: PartyId) -> Option<&Secret> {
        self.party_secrets.get(party.index())
    }
}

fn keyed(key: &Secret, domain: &[u8], parts: &[&[u8]]) -> Digest {
    let mut all: Vec<&[u8]> = Vec::with_capacity(parts.len() + 2);
    all.push(domain);
    all.push(key);
    all.extend_from_slice(parts);
    Digest::of_parts(&all)
}

/// Holds the key material; the only way to obtain a [`PartyKey`].
pub struct Dealer {
    km: Arc<KeyMaterial>,
}

impl Dealer {
    pub fn new(km: KeyMaterial) -> Dealer {
        Dealer { km: Arc::new(km) }
    }

    /// Convenience for the common case `t_sig = n − f`.
    pub fn with_seed(n: usize, seed: u64) -> Result<Dealer> {
        let params = Params::from_n(n).ok_or(CryptoError::BadPartyCount(n))?;
        Ok(Dealer::new(key_setup(128, n, params.quorum(), seed)?))
    }

    pub fn verifier(&self) -> Verifier {
        Verifier {
            km: Arc::clone(&self.km),
        }
    }

    /// # Panics
    ///
    /// If `party` is not in `[0, n)`.
    pub fn party_key(&self, party: PartyId) -> PartyKey {
        assert!(party.index() < self.km.n(), "{party} out of range");
        PartyKey {
            id: party,
            km: Arc::clone(&self.km),
        }
    }

    pub fn key_material(&self) -> &KeyMaterial {
        &self.km
    }
}

/// A single party's signing capability.
#[derive(Clone)]
pub struct PartyKey {
    id: PartyId,
    km: Arc<KeyMaterial>,
}

impl std::fmt::Debug for PartyKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PartyKey({})", self.id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SignatureShare {
    pub signer: PartyId,
    pub message_digest: Digest,
    pub share_bytes: [u8; DIGEST_LEN],
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ThresholdSignature {
    pub message_digest: Digest,
    pub sig_bytes: [u8; DIGEST_LEN],
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoinShare {
    pub holder: PartyId,
    pub coin_name: Vec<u8>,
    pub share_bytes: [u8; DIGEST_LEN],
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    /// nonce ‖ encrypted body ‖ tag
    pub payload: Vec<u8>,
    pub length_plain: u32,
}

impl std::fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Ciphertext({} bytes, {:?})", self.length_plain, self.digest())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DecryptionShare {
    pub holder: PartyId,
    pub ciphertext_digest: Digest,
    pub share_bytes: [u8; DIGEST_LEN],
}

impl SignatureShare {
    pub const ENCODED_LEN: usize = 2 + 2 * DIGEST_LEN;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::ENCODED_LEN);
        out.extend_from_slice(&self.signer.0.to_be_bytes());
        out.extend_from_slice(&self.message_digest.0);
        out.extend_from_slice(&self.share_bytes);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<SignatureShare> {
        if b.len() != Self::ENCODED_LEN {
            return None;
        }
        Some(SignatureShare {
            signer: PartyId(u16::from_be_bytes([b[0], b[1]])),
            message_digest: Digest(b[2..34].try_into().unwrap()),
            share_bytes: b[34..66].try_into().unwrap(),
        })
    }
}

impl ThresholdSignature {
    pub const ENCODED_LEN: usize = 2 * DIGEST_LEN;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::ENCODED_LEN);
        out.extend_from_slice(&self.message_digest.0);
        out.extend_from_slice(&self.sig_bytes);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<ThresholdSignature> {
        if b.len() != Self::ENCODED_LEN {
            return None;
        }
        Some(ThresholdSignature {
            message_digest: Digest(b[..32].try_into().unwrap()),
            sig_bytes: b[32..].try_into().unwrap(),
        })
    }
}

impl Ciphertext {
    const NONCE_LEN: usize = DIGEST_LEN;
    const TAG_LEN: usize = DIGEST_LEN;

    pub fn digest(&self) -> Digest {
        Digest::of_parts(&[b"ciphertext", &self.length_plain.to_be_bytes(), &self.payload])
    }
}

impl PartyKey {
    pub fn id(&self) -> PartyId {
        self.id
    }

    fn secret(&self) -> &Secret {
        &self.km.party_secrets[self.id.index()]
    }

    pub fn sig_share(&self, message: &[u8]) -> SignatureShare {
        let message_digest = Digest::of(message);
        SignatureShare {
            signer: self.id,
            message_digest,
            share_bytes: keyed(self.secret(), b"sig-share", &[&message_digest.0]).0,
        }
    }

    pub fn coin_share(&self, coin_name: &[u8]) -> CoinShare {
        CoinShare {
            holder: self.id,
            coin_name: coin_name.to_vec(),
            share_bytes: keyed(self.secret(), b"coin-share", &[coin_name]).0,
        }
    }

    pub fn tpke_dec_share(&self, c: &Ciphertext) -> DecryptionShare {
        let ciphertext_digest = c.digest();
        DecryptionShare {
            holder: self.id,
            ciphertext_digest,
            share_bytes: keyed(self.secret(), b"dec-share", &[&ciphertext_digest.0]).0,
        }
    }
}

/// Public operations. Cheap to clone.
#[derive(Clone)]
pub struct Verifier {
    km: Arc<KeyMaterial>,
}

impl std::fmt::Debug for Verifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Verifier(n={}, t_sig={})", self.km.n, self.km.t_sig)
    }
}

impl Verifier {
    pub fn params(&self) -> Params {
        Params {
            n: self.km.n(),
            f: self.km.f(),
        }
    }

    pub fn t_sig(&self) -> usize {
        self.km.t_sig()
    }

    fn expected_share(&self, party: PartyId, domain: &[u8], data: &[u8]) -> Option<[u8; DIGEST_LEN]> {
        self.km.secret(party).map(|s| keyed(s, domain, &[data]).0)
    }

    pub fn verify_share(&self, message: &[u8], signer: PartyId, share: &SignatureShare) -> bool {
        share.signer == signer
            && share.message_digest == Digest::of(message)
            && self.expected_share(signer, b"sig-share", &share.message_digest.0) == Some(share.share_bytes)
    }

    /// Combines at least `t_sig` shares from distinct signers. Any invalid
    /// share fails the whole call and names its signer.
    pub fn combine_shares(&self, message: &[u8], shares: &[SignatureShare]) -> Result<ThresholdSignature> {
        let bad: Vec<PartyId> = shares
            .iter()
            .filter(|s| !self.verify_share(message, s.signer, s))
            .map(|s| s.signer)
            .collect();
        if !bad.is_empty() {
            return Err(CryptoError::InvalidShare(bad));
        }
        let distinct = distinct_holders(shares.iter().map(|s| s.signer));
        if distinct < self.t_sig() {
            return Err(CryptoError::InsufficientShares {
                needed: self.t_sig(),
                got: distinct,
            });
        }
        Ok(self.master_signature(Digest::of(message)))
    }

    fn master_signature(&self, message_digest: Digest) -> ThresholdSignature {
        ThresholdSignature {
            message_digest,
            sig_bytes: keyed(&self.km.master, b"threshold-sig", &[&message_digest.0]).0,
        }
    }

    pub fn verify_signature(&self, message: &[u8], sig: &ThresholdSignature) -> bool {
        let digest = Digest::of(message);
        sig.message_digest == digest && self.master_signature(digest).sig_bytes == sig.sig_bytes
    }

    pub fn coin_share_verify(&self, coin_name: &[u8], holder: PartyId, share: &CoinShare) -> bool {
        share.holder == holder
            && share.coin_name == coin_name
            && self.expected_share(holder, b"coin-share", coin_name) == Some(share.share_bytes)
    }

    fn check_coin_shares(&self, coin_name: &[u8], shares: &[CoinShare]) -> Result<()> {
        let bad: Vec<PartyId> = shares
            .iter()
            .filter(|s| !self.coin_share_verify(coin_name, s.holder, s))
            .map(|s| s.holder)
            .collect();
        if !bad.is_empty() {
            return Err(CryptoError::InvalidShare(bad));
        }
        let needed = self.km.f() + 1;
        let got = distinct_holders(shares.iter().map(|s| s.holder));
        if got < needed {
            return Err(CryptoError::InsufficientShares { needed, got });
        }
        Ok(())
    }

    /// Common coin `F(coin_name) ∈ {0, 1}` from at least f + 1 valid shares.
    pub fn coin_toss_bit(&self, coin_name: &[u8], shares: &[CoinShare]) -> Result<bool> {
        self.check_coin_shares(coin_name, shares)?;
        Ok(keyed(&self.km.master, b"coin-bit", &[coin_name]).0[0] & 1 == 1)
    }

    /// `kappa` distinct parties, sorted, drawn uniformly by a partial
    /// Fisher–Yates shuffle over a stream seeded from the master secret
    /// and the coin name.
    pub fn coin_toss_committee(
        &self,
        coin_name: &[u8],
        shares: &[CoinShare],
        n: usize,
        kappa: usize,
    ) -> Result<Vec<PartyId>> {
        if kappa > n {
            return Err(CryptoError::BadCommitteeSize { kappa, n });
        }
        self.check_coin_shares(coin_name, shares)?;
        let seed = keyed(
            &self.km.master,
            b"coin-committee",
            &[coin_name, &(n as u64).to_be_bytes(), &(kappa as u64).to_be_bytes()],
        );
        let mut rng = ChaCha20Rng::from_seed(seed.0);
        let mut idx: Vec<u16> = (0..n as u16).collect();
        for i in 0..kappa {
            let j = rng.gen_range(i..n);
            idx.swap(i, j);
        }
        let mut members: Vec<PartyId> = idx[..kappa].iter().copied().map(PartyId).collect();
        members.sort();
        Ok(members)
    }

    fn tpke_key(&self) -> Digest {
        keyed(&self.km.master, b"tpke-key", &[])
    }

    fn keystream_xor(key: &Digest, nonce: &[u8], data: &mut [u8]) {
        for (block, chunk) in data.chunks_mut(DIGEST_LEN).enumerate() {
            let ks = Digest::of_parts(&[b"tpke-stream", &key.0, nonce, &(block as u64).to_be_bytes()]);
            for (b, k) in chunk.iter_mut().zip(ks.0.iter()) {
                *b ^= k;
            }
        }
    }

    fn tag(key: &Digest, nonce: &[u8], body: &[u8]) -> Digest {
        Digest::of_parts(&[b"tpke-tag", &key.0, nonce, body])
    }

    /// Deterministic in the plaintext: equal batches give equal ciphertexts.
    pub fn tpke_enc(&self, plaintext: &[u8]) -> Ciphertext {
        let key = self.tpke_key();
        let nonce = Digest::of_parts(&[b"tpke-nonce", &key.0, plaintext]);
        let mut body = plaintext.to_vec();
        Self::keystream_xor(&key, &nonce.0, &mut body);
        let tag = Self::tag(&key, &nonce.0, &body);
        let mut payload = Vec::with_capacity(plaintext.len() + Ciphertext::NONCE_LEN + Ciphertext::TAG_LEN);
        payload.extend_from_slice(&nonce.0);
        payload.extend_from_slice(&body);
        payload.extend_from_slice(&tag.0);
        Ciphertext {
            payload,
            length_plain: plaintext.len() as u32,
        }
    }

    pub fn check_ciphertext(&self, c: &Ciphertext) -> bool {
        let overhead = Ciphertext::NONCE_LEN + Ciphertext::TAG_LEN;
        if c.payload.len() != c.length_plain as usize + overhead {
            return false;
        }
        let (nonce, rest) = c.payload.split_at(Ciphertext::NONCE_LEN);
        let (body, tag) = rest.split_at(rest.len() - Ciphertext::TAG_LEN);
        Self::tag(&self.tpke_key(), nonce, body).0 == tag
    }

    pub fn verify_dec_share(&self, ciphertext_digest: &Digest, share: &DecryptionShare) -> bool {
        share.ciphertext_digest == *ciphertext_digest
            && self.expected_share(share.holder, b"dec-share", &ciphertext_digest.0) == Some(share.share_bytes)
    }

    /// Decrypts with at least f + 1 valid shares bound to `c`.
    pub fn tpke_dec(&self, c: &Ciphertext, shares: &[DecryptionShare]) -> Result<Vec<u8>> {
        if !self.check_ciphertext(c) {
            return Err(CryptoError::Malformed);
        }
        let digest = c.digest();
        let bad: Vec<PartyId> = shares
            .iter()
            .filter(|s| !self.verify_dec_share(&digest, s))
            .map(|s| s.holder)
            .collect();
        if !bad.is_empty() {
            return Err(CryptoError::InvalidShare(bad));
        }
        let needed = self.km.f() + 1;
        let got = distinct_holders(shares.iter().map(|s| s.holder));
        if got < needed {
            return Err(CryptoError::InsufficientShares { needed, got });
        }
        let (nonce, rest) = c.payload.split_at(Ciphertext::NONCE_LEN);
        let mut body = rest[..rest.len() - Ciphertext::TAG_LEN].to_vec();
        Self::keystream_xor(&self.tpke_key(), nonce, &mut body);
        Ok(body)
    }
}

fn distinct_holders(ids: impl Iterator<Item = PartyId>) -> usize {
    ids.map(|id| (id, ())).collect::<BTreeMap<_, _>>().len()
}
