//! Run-level assertions over the final honest state, and report assembly.

use std::collections::{BTreeMap, BTreeSet};

use super::Simulation;
use crate::metrics::{duplicate_ratio, CensorshipStats, InstanceReport, RunReport, RunStatus, REPORT_SCHEMA};
use crate::protocol::Party;
use crate::types::{InstanceId, PartyId};

pub const AGREEMENT: &str = "agreement";
pub const VALIDITY: &str = "validity";
pub const TOTALITY: &str = "totality";
pub const LEMMA1: &str = "lemma1";
pub const LEMMA2: &str = "lemma2";
pub const ABBA_AGREEMENT: &str = "abba_agreement";
pub const ABBA_BIASED_VALIDITY: &str = "abba_biased_validity";
pub const PPB_PROVABILITY: &str = "ppb_provability";
pub const TOTAL_ORDER: &str = "total_order";

pub const ALL: [&str; 9] = [
    AGREEMENT,
    VALIDITY,
    TOTALITY,
    LEMMA1,
    LEMMA2,
    ABBA_AGREEMENT,
    ABBA_BIASED_VALIDITY,
    PPB_PROVABILITY,
    TOTAL_ORDER,
];

fn instances(sim: &Simulation) -> impl Iterator<Item = InstanceId> {
    (1..=sim.config.instances).map(InstanceId)
}

/// Honest outputs for one instance agree.
pub fn agreement(sim: &Simulation) -> bool {
    instances(sim).all(|inst| {
        let outs: Vec<_> = sim.honest_parties().filter_map(|p| p.output(inst)).collect();
        outs.windows(2).all(|w| w[0] == w[1])
    })
}

/// Every finalized output is non-empty, fully decodable, and each batch is
/// a payload some committee member actually broadcast for that slot.
pub fn validity(sim: &Simulation) -> bool {
    sim.honest_parties().all(|p| {
        instances(sim).all(|inst| {
            let Some(out) = p.output(inst) else { return true };
            let Some(committee) = p.committee(inst) else { return false };
            !out.digests.is_empty()
                && out.undecodable.is_empty()
                && out.batches.len() == out.digests.len()
                && out.digests.iter().all(|(slot, d)| {
                    committee.contains(*slot)
                        && sim.ppb_log.get(&(inst, *slot)).is_some_and(|s| s.contains(d))
                        && out.batches.get(slot).is_some_and(|b| b.instance == inst)
                })
        })
    })
}

pub fn totality(sim: &Simulation) -> bool {
    sim.honest_parties().all(Party::finished)
}

pub fn lemma1(sim: &Simulation) -> bool {
    instances(sim).all(|i| sim.snapshots.get(&i).is_some_and(|s| s.max_proof_holders >= 2))
}

pub fn lemma2(sim: &Simulation) -> bool {
    let need = 2 * sim.params.f + 1;
    instances(sim).all(|i| sim.snapshots.get(&i).is_some_and(|s| s.max_holders_in_flight >= need))
}

/// Per-slot decisions, inputs and rounds across honest parties.
fn slot_views(sim: &Simulation, inst: InstanceId) -> BTreeMap<PartyId, (Vec<bool>, Vec<bool>)> {
    let mut views: BTreeMap<PartyId, (Vec<bool>, Vec<bool>)> = BTreeMap::new();
    for p in sim.honest_parties() {
        let Some(t) = p.trace(inst) else { continue };
        for (slot, b) in &t.abba_inputs {
            views.entry(*slot).or_default().0.push(*b);
        }
        for (slot, b) in &t.abba_decisions {
            views.entry(*slot).or_default().1.push(*b);
        }
    }
    views
}

pub fn abba_agreement(sim: &Simulation) -> bool {
    instances(sim).all(|inst| {
        slot_views(sim, inst)
            .values()
            .all(|(_, d)| d.windows(2).all(|w| w[0] == w[1]))
    })
}

/// f + 1 honest inputs of 1 force 1, and 0 is only decided when some
/// honest party input 0. A 1 needs a valid proof by construction, so it is
/// admissible even without an honest input of 1.
pub fn abba_biased_validity(sim: &Simulation) -> bool {
    let f = sim.params.f;
    instances(sim).all(|inst| {
        slot_views(sim, inst).values().all(|(inputs, decisions)| {
            let ones = inputs.iter().filter(|b| **b).count();
            let forced_one = ones > f && decisions.iter().any(|d| !*d);
            let bad_zero = decisions.iter().any(|d| !*d) && !inputs.contains(&false);
            !forced_one && !bad_zero
        })
    })
}

/// Every proof held by an honest party is backed by f + 1 honest
/// countersignatures on the same digest, and proofs for one sender agree.
pub fn ppb_provability(sim: &Simulation) -> bool {
    let f = sim.params.f;
    instances(sim).all(|inst| {
        let mut proven: BTreeMap<PartyId, BTreeSet<_>> = BTreeMap::new();
        for p in sim.honest_parties() {
            for (slot, d) in p.proofs_held(inst) {
                proven.entry(slot).or_default().insert(d);
            }
        }
        proven.iter().all(|(slot, ds)| {
            ds.len() == 1 && {
                let d = ds.iter().next().unwrap();
                sim.honest_parties()
                    .filter(|p| p.countersigned(inst).get(slot) == Some(d))
                    .count()
                    > f
            }
        })
    })
}

/// Logs are append-only, so pairwise prefix consistency at the end implies
/// it at every step.
pub fn total_order(sim: &Simulation) -> bool {
    let logs: Vec<_> = sim.honest_parties().map(Party::log).collect();
    logs.iter().enumerate().all(|(i, a)| {
        logs[i + 1..].iter().all(|b| {
            let k = a.len().min(b.len());
            a[..k] == b[..k]
        })
    })
}

pub fn assertions(sim: &Simulation) -> BTreeMap<String, bool> {
    let checks: [(&str, fn(&Simulation) -> bool); 9] = [
        (AGREEMENT, agreement),
        (VALIDITY, validity),
        (TOTALITY, totality),
        (LEMMA1, lemma1),
        (LEMMA2, lemma2),
        (ABBA_AGREEMENT, abba_agreement),
        (ABBA_BIASED_VALIDITY, abba_biased_validity),
        (PPB_PROVABILITY, ppb_provability),
        (TOTAL_ORDER, total_order),
    ];
    checks.iter().map(|(k, f)| (k.to_string(), f(sim))).collect()
}

fn instance_report(sim: &Simulation, inst: InstanceId) -> InstanceReport {
    let first = sim.honest_parties().find(|p| p.output(inst).is_some());
    let out = first.and_then(|p| p.output(inst));
    let committee = sim
        .honest_parties()
        .find_map(|p| p.committee(inst))
        .map(|c| c.members.clone())
        .unwrap_or_default();
    let (messages_honest, bytes_honest) = sim.counters.per_instance.get(&inst).copied().unwrap_or_default();
    let mut phases = 0;
    let mut abba_rounds: BTreeMap<PartyId, u32> = BTreeMap::new();
    for p in sim.honest_parties() {
        let Some(t) = p.trace(inst) else { continue };
        if let Some(d) = t.finalize_depth {
            phases = phases.max(d.saturating_sub(t.start_depth));
        }
        for (slot, r) in &t.abba_rounds {
            let e = abba_rounds.entry(*slot).or_default();
            *e = (*e).max(*r);
        }
    }
    InstanceReport {
        instance: inst,
        committee,
        messages_honest,
        bytes_honest,
        phases,
        decided_slots: out.map_or(0, |o| o.digests.len()),
        output_size_requests: out.map_or(0, |o| o.batches.values().map(|b| b.requests.len()).sum()),
        duplicate_ratio: out.map_or(0.0, |o| duplicate_ratio(o.batches.values().map(|b| b.requests.as_slice()))),
        abba_rounds,
    }
}

fn censorship(sim: &Simulation) -> CensorshipStats {
    let honest: Vec<&Party> = sim.honest_parties().collect();
    let need = sim.params.n - sim.params.f;
    let mut count: BTreeMap<&Vec<u8>, usize> = BTreeMap::new();
    for p in &honest {
        for r in p.initial_pool().iter().collect::<BTreeSet<_>>() {
            *count.entry(r).or_default() += 1;
        }
    }
    let tracked: BTreeSet<&Vec<u8>> = count.into_iter().filter(|(_, c)| *c >= need).map(|(r, _)| r).collect();
    let Some(reference) = honest.iter().max_by_key(|p| p.log().len()) else {
        return CensorshipStats::default();
    };
    let delivered: Vec<u64> = reference
        .log()
        .iter()
        .filter(|d| tracked.contains(&d.request))
        .map(|d| d.instance.0)
        .collect();
    CensorshipStats {
        tracked: tracked.len(),
        delivered: delivered.len(),
        mean_delivery_instance: (!delivered.is_empty())
            .then(|| delivered.iter().sum::<u64>() as f64 / delivered.len() as f64),
        max_delivery_instance: delivered.iter().copied().max(),
    }
}

pub(crate) fn build_report(sim: &Simulation, status: RunStatus) -> RunReport {
    RunReport {
        schema: REPORT_SCHEMA,
        config: sim.config.clone(),
        status,
        steps: sim.step,
        messages_honest: sim.counters.messages_honest,
        bytes_honest: sim.counters.bytes_honest,
        messages_all: sim.counters.messages_all,
        instances: instances(sim).map(|i| instance_report(sim, i)).collect(),
        assertions: assertions(sim),
        lemma_snapshots: sim.snapshots.values().cloned().collect(),
        censorship: censorship(sim),
    }
}
