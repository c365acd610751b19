//! Committee election. Each party multicasts a coin share for the instance's
//! coin; the first f + 1 valid shares fix the committee.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CoinShare, PartyKey, Verifier};
use crate::types::{InstanceId, PartyId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CsError {
    #[error("committee selection for {0} already started")]
    AlreadyStarted(InstanceId),
}

/// The f + 1 parties allowed to propose in one instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Committee {
    pub instance: InstanceId,
    /// Sorted, distinct.
    pub members: Vec<PartyId>,
}

impl Committee {
    pub fn contains(&self, p: PartyId) -> bool {
        self.members.binary_search(&p).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// `"CS" ‖ instance` as a big-endian u64.
pub fn coin_name(instance: InstanceId) -> Vec<u8> {
    let mut name = b"CS".to_vec();
    name.extend_from_slice(&instance.0.to_be_bytes());
    name
}

#[derive(Debug)]
pub struct CsState {
    instance: InstanceId,
    my_share_sent: bool,
    collected: BTreeMap<PartyId, CoinShare>,
    result: Option<Committee>,
}

impl CsState {
    pub fn new(instance: InstanceId) -> CsState {
        CsState {
            instance,
            my_share_sent: false,
            collected: BTreeMap::new(),
            result: None,
        }
    }

    /// Returns the share to multicast. The share is also recorded locally,
    /// which may complete the committee; check [`CsState::result`].
    pub fn start(&mut self, key: &PartyKey, verifier: &Verifier) -> Result<CoinShare, CsError> {
        if self.my_share_sent {
            return Err(CsError::AlreadyStarted(self.instance));
        }
        self.my_share_sent = true;
        let share = key.coin_share(&coin_name(self.instance));
        self.on_share(key.id(), share.clone(), verifier);
        Ok(share)
    }

    /// Accepts shares before [`CsState::start`] too; a fast peer may be
    /// ahead of us. Returns the committee exactly once.
    pub fn on_share(&mut self, from: PartyId, share: CoinShare, verifier: &Verifier) -> Option<Committee> {
        if self.result.is_some() || self.collected.contains_key(&from) {
            return None;
        }
        let name = coin_name(self.instance);
        if !verifier.coin_share_verify(&name, from, &share) {
            return None;
        }
        self.collected.insert(from, share);
        let params = verifier.params();
        if self.collected.len() < params.kappa() {
            return None;
        }
        let shares: Vec<CoinShare> = self.collected.values().cloned().collect();
        let members = verifier
            .coin_toss_committee(&name, &shares, params.n, params.kappa())
            .expect("f + 1 verified shares");
        let committee = Committee {
            instance: self.instance,
            members,
        };
        self.result = Some(committee.clone());
        Some(committee)
    }

    pub fn result(&self) -> Option<&Committee> {
        self.result.as_ref()
    }

    pub fn collected(&self) -> usize {
        self.collected.len()
    }

    pub fn started(&self) -> bool {
        self.my_share_sent
    }
}

/// The committee for `instance` as the dealer would compute it. For
/// simulator setup and tests only: real parties must go through [`CsState`].
pub fn committee_oracle(dealer: &crate::crypto::Dealer, instance: InstanceId) -> Committee {
    let verifier = dealer.verifier();
    let params = verifier.params();
    let name = coin_name(instance);
    let shares: Vec<CoinShare> = params
        .parties()
        .take(params.kappa())
        .map(|p| dealer.party_key(p).coin_share(&name))
        .collect();
    Committee {
        instance,
        members: verifier
            .coin_toss_committee(&name, &shares, params.n, params.kappa())
            .expect("dealer shares are valid"),
    }
}
