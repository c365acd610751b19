//! Deterministic discrete-event simulator.
//!
//! Logical time is the number of delivered messages. One global loop picks
//! the next queued message with the configured [`Scheduler`] policy and
//! hands it to the destination node. Channels are reliable and
//! authenticated: the loop stamps `from` itself and never drops, duplicates
//! or alters an entry.

pub mod abba_harness;
pub mod byzantine;
pub mod check;
pub mod config;
pub mod scheduler;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::committee::committee_oracle;
use crate::crypto::{key_setup, Dealer};
use crate::metrics::{RunReport, RunStatus};
use crate::ppb::PpbId;
use crate::protocol::{Party, PartyConfig};
use crate::types::{Digest, InstanceId, Params, PartyId};
use crate::wire::{Body, ProtocolMessage};

use self::byzantine::Byzantine;
use self::config::{ConfigError, Policy, SimConfig};
use self::scheduler::{Entry, Scheduler};
use self::trace::{Trace, TraceRecord, TraceWriter};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dest {
    All,
    One(PartyId),
}

/// Handler context: the current step, the causal depth of the message
/// being handled, and the outbox.
pub struct Ctx {
    me: PartyId,
    step: u64,
    depth: u64,
    outbox: Vec<(Dest, ProtocolMessage)>,
}

impl Ctx {
    pub fn new(me: PartyId, step: u64, depth: u64) -> Ctx {
        Ctx {
            me,
            step,
            depth,
            outbox: Vec::new(),
        }
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn depth(&self) -> u64 {
        self.depth
    }

    /// To every party, this one included.
    pub fn multicast(&mut self, msg: ProtocolMessage) {
        self.outbox.push((Dest::All, msg));
    }

    pub fn send(&mut self, to: PartyId, msg: ProtocolMessage) {
        self.outbox.push((Dest::One(to), msg));
    }

    pub fn route(&mut self, dest: Dest, msg: ProtocolMessage) {
        self.outbox.push((dest, msg));
    }

    pub fn child(&self) -> Ctx {
        Ctx::new(self.me, self.step, self.depth)
    }

    pub fn take_outbox(&mut self) -> Vec<(Dest, ProtocolMessage)> {
        std::mem::take(&mut self.outbox)
    }
}

pub trait Node: Send {
    fn start(&mut self, ctx: &mut Ctx);
    fn handle(&mut self, from: PartyId, msg: ProtocolMessage, ctx: &mut Ctx);
    /// The protocol state behind this node, for introspection.
    fn party(&self) -> Option<&Party> {
        None
    }
}

/// Proof and holding counts at the moment the first honest party finished
/// waiting for 2f + 1 suggestions. Counts cover every party, Byzantine ones
/// included, by what their protocol state actually holds.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LemmaSnapshot {
    pub instance: InstanceId,
    pub step: u64,
    /// Most parties holding a proof for one slot.
    pub max_proof_holders: usize,
    /// Most parties holding ciphertext and proof for one slot.
    pub max_holders: usize,
    /// As `max_holders`, also counting parties with a verified PROPOSAL or
    /// SUGGESTION for the slot already queued to them. The `lemma2` check
    /// uses this count.
    pub max_holders_in_flight: usize,
    /// As `max_holders_in_flight`, honest parties only.
    pub max_honest_holders_in_flight: usize,
}

pub struct Simulation {
    config: SimConfig,
    params: Params,
    dealer: Dealer,
    nodes: Vec<Box<dyn Node>>,
    honest: Vec<bool>,
    sched: Scheduler,
    step: u64,
    seq: u64,
    pub(crate) counters: Counters,
    pub(crate) ppb_log: BTreeMap<(InstanceId, PartyId), BTreeSet<Digest>>,
    pub(crate) snapshots: BTreeMap<InstanceId, LemmaSnapshot>,
    trace: Option<TraceWriter>,
}

#[derive(Default, Clone, Debug)]
pub(crate) struct Counters {
    pub messages_honest: u64,
    pub bytes_honest: u64,
    pub messages_all: u64,
    pub per_instance: BTreeMap<InstanceId, (u64, u64)>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Simulation, SimError> {
        Simulation::with_trace(config, false)
    }

    pub fn with_trace(config: SimConfig, trace: bool) -> Result<Simulation, SimError> {
        let params = config.validate()?;
        let km = key_setup(128, params.n, params.quorum(), config.seed).expect("validated parameters");
        let dealer = Dealer::new(km);
        let verifier = dealer.verifier();
        let pools = config.request_pools();
        let mut nodes: Vec<Box<dyn Node>> = Vec::with_capacity(params.n);
        let mut honest = Vec::with_capacity(params.n);
        for (p, pool) in params.parties().zip(pools) {
            let party = Party::new(
                dealer.party_key(p),
                verifier.clone(),
                pool,
                PartyConfig {
                    instances: config.instances,
                    batch_size: config.scenario.batch_size,
                    seed: batch_seed(config.seed, p),
                },
            );
            match config.behavior(p) {
                None => {
                    nodes.push(Box::new(party));
                    honest.push(true);
                }
                Some(b) => {
                    nodes.push(Box::new(Byzantine::new(
                        party,
                        b.clone(),
                        dealer.party_key(p),
                        verifier.clone(),
                        config.seed,
                    )));
                    honest.push(false);
                }
            }
        }
        let target = match config.policy {
            Policy::AdversarialDelay { target, .. } | Policy::TargetedStarve { target, .. } => Some(
                target
                    .map(PartyId)
                    .unwrap_or_else(|| committee_oracle(&dealer, InstanceId(1)).members[0]),
            ),
            _ => None,
        };
        let sched = Scheduler::new(config.policy.clone(), target, config.seed, params.n);
        Ok(Simulation {
            trace: trace.then(|| TraceWriter::new(&config)),
            config,
            params,
            dealer,
            nodes,
            honest,
            sched,
            step: 0,
            seq: 0,
            counters: Counters::default(),
            ppb_log: BTreeMap::new(),
            snapshots: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn params(&self) -> Params {
        self.params
    }

    pub fn dealer(&self) -> &Dealer {
        &self.dealer
    }

    pub fn is_honest(&self, p: PartyId) -> bool {
        self.honest[p.index()]
    }

    pub fn honest_parties(&self) -> impl Iterator<Item = &Party> {
        self.nodes
            .iter()
            .zip(&self.honest)
            .filter(|(_, h)| **h)
            .filter_map(|(n, _)| n.party())
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn enqueue(&mut self, src: PartyId, depth: u64, outbox: Vec<(Dest, ProtocolMessage)>) {
        for (dest, msg) in outbox {
            if let Body::PpbPayload(c) = &msg.body {
                self.ppb_log.entry((msg.instance, src)).or_default().insert(c.digest());
            }
            let len = msg.encoded_len();
            let dsts: Vec<PartyId> = match dest {
                Dest::All => self.params.parties().collect(),
                Dest::One(p) if p.index() < self.params.n => vec![p],
                Dest::One(_) => vec![],
            };
            for dst in dsts {
                self.sched.push(Entry {
                    seq: self.seq,
                    src,
                    dst,
                    msg: msg.clone(),
                    len,
                    depth: depth + 1,
                    enqueue_step: self.step,
                    deliver_not_before: self.step,
                });
                self.seq += 1;
            }
        }
    }

    fn all_honest_finished(&self) -> bool {
        self.honest_parties().all(Party::finished)
    }

    /// Runs to quiescence or `max_steps`.
    pub fn run(&mut self) -> RunStatus {
        for i in 0..self.nodes.len() {
            let me = PartyId(i as u16);
            let mut ctx = Ctx::new(me, 0, 0);
            self.nodes[i].start(&mut ctx);
            let out = ctx.take_outbox();
            self.enqueue(me, 0, out);
        }
        while self.step < self.config.max_steps {
            let Some(e) = self.sched.next(self.step) else { break };
            self.deliver(e);
            self.step += 1;
        }
        if self.all_honest_finished() {
            RunStatus::Completed
        } else {
            RunStatus::Stalled
        }
    }

    fn deliver(&mut self, e: Entry) {
        self.counters.messages_all += 1;
        if self.honest[e.src.index()] && e.src != e.dst {
            self.counters.messages_honest += 1;
            self.counters.bytes_honest += e.len as u64;
            let slot = self.counters.per_instance.entry(e.msg.instance).or_default();
            slot.0 += 1;
            slot.1 += e.len as u64;
        }
        if let Some(t) = &mut self.trace {
            t.record(self.step, e.src, e.dst, &e.msg);
        }
        let dst = e.dst;
        let mut ctx = Ctx::new(dst, self.step, e.depth);
        self.nodes[dst.index()].handle(e.src, e.msg, &mut ctx);
        let out = ctx.take_outbox();
        self.enqueue(dst, e.depth, out);
        if self.honest[dst.index()] {
            self.snapshot_if_due(dst);
        }
    }

    fn snapshot_if_due(&mut self, who: PartyId) {
        let Some(party) = self.nodes[who.index()].party() else { return };
        let mut due = Vec::new();
        for i in 1..=self.config.instances {
            let inst = InstanceId(i);
            if self.snapshots.contains_key(&inst) {
                continue;
            }
            match party.trace(inst) {
                Some(t) if t.suggestion_wait_step.is_some() => due.push(inst),
                Some(_) => {}
                None => break,
            }
        }
        for inst in due {
            let snap = self.lemma_snapshot(inst);
            self.snapshots.insert(inst, snap);
        }
    }

    fn lemma_snapshot(&self, instance: InstanceId) -> LemmaSnapshot {
        let mut proofs: BTreeMap<PartyId, usize> = BTreeMap::new();
        let mut holders: BTreeMap<PartyId, BTreeSet<PartyId>> = BTreeMap::new();
        for p in self.nodes.iter().filter_map(|n| n.party()) {
            for slot in p.proofs_held(instance).keys() {
                *proofs.entry(*slot).or_default() += 1;
            }
            for slot in p.holdings(instance).keys() {
                holders.entry(*slot).or_default().insert(p.id());
            }
        }
        let max_holders = holders.values().map(BTreeSet::len).max().unwrap_or(0);
        let verifier = self.dealer.verifier();
        for e in self.sched.iter() {
            if e.msg.instance != instance {
                continue;
            }
            if let Body::Proposal { slot, ciphertext, proof } | Body::Suggestion { slot, ciphertext, proof, .. } = &e.msg.body {
                let id = PpbId { instance, sender: *slot };
                if proof.certifies(&verifier, id, Some(ciphertext)) {
                    holders.entry(*slot).or_default().insert(e.dst);
                }
            }
        }
        let widest = |honest_only: bool| {
            holders
                .values()
                .map(|s| s.iter().filter(|p| !honest_only || self.honest[p.index()]).count())
                .max()
                .unwrap_or(0)
        };
        LemmaSnapshot {
            instance,
            step: self.step,
            max_proof_holders: proofs.values().copied().max().unwrap_or(0),
            max_holders,
            max_holders_in_flight: widest(false),
            max_honest_holders_in_flight: widest(true),
        }
    }

    pub fn take_trace(&mut self) -> Option<Trace> {
        self.trace.take().map(|t| t.finish())
    }

    pub fn trace_records(&self) -> Option<&[TraceRecord]> {
        self.trace.as_ref().map(|t| t.records())
    }

    pub fn report(&self, status: RunStatus) -> RunReport {
        check::build_report(self, status)
    }
}

fn batch_seed(seed: u64, p: PartyId) -> u64 {
    let s = config::stream_seed(seed, format!("batch/{}", p.0).as_bytes());
    u64::from_be_bytes(s[..8].try_into().expect("8 bytes"))
}

/// Runs one configuration to completion and returns its report.
pub fn sim_run(config: SimConfig) -> Result<RunReport, SimError> {
    let mut sim = Simulation::new(config)?;
    let status = sim.run();
    Ok(sim.report(status))
}

/// As [`sim_run`], also returning the delivery trace.
pub fn sim_run_traced(config: SimConfig) -> Result<(RunReport, Trace), SimError> {
    let mut sim = Simulation::with_trace(config, true)?;
    let status = sim.run();
    let report = sim.report(status);
    Ok((report, sim.take_trace().expect("tracing enabled")))
}
