//! Delivery traces: a rolling SHA-256 over every delivered message,
//! exported as JSON lines and re-checked by replay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::SimConfig;
use super::{SimError, Simulation};
use crate::types::{Digest, PartyId};
use crate::wire::{tag, ProtocolMessage};

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub src: PartyId,
    pub dst: PartyId,
    pub tag: String,
    /// Rolling hash after this delivery, hex.
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Line {
    Header { schema: u32, config: SimConfig },
    Step(TraceRecord),
    Footer { steps: u64, final_hash: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub config: SimConfig,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported trace schema {0}")]
    Schema(u32),
    #[error("trace has no header")]
    MissingHeader,
    #[error("trace has no footer (truncated?)")]
    MissingFooter,
    #[error("footer says {expected} steps, found {found}")]
    StepCount { expected: u64, found: u64 },
}

pub(crate) struct TraceWriter {
    config: SimConfig,
    state: Digest,
    records: Vec<TraceRecord>,
}

impl TraceWriter {
    pub fn new(config: &SimConfig) -> TraceWriter {
        TraceWriter {
            config: config.clone(),
            state: Digest::of_parts(&[b"trace", serde_json::to_string(config).unwrap().as_bytes()]),
            records: Vec::new(),
        }
    }

    pub fn record(&mut self, step: u64, src: PartyId, dst: PartyId, msg: &ProtocolMessage) {
        self.state = Digest::of_parts(&[
            &self.state.0,
            &step.to_be_bytes(),
            &src.0.to_be_bytes(),
            &dst.0.to_be_bytes(),
            &msg.encode(),
        ]);
        self.records.push(TraceRecord {
            step,
            src,
            dst,
            tag: tag::name(msg.tag()).to_string(),
            hash: self.state.to_hex(),
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn finish(self) -> Trace {
        Trace {
            config: self.config,
            records: self.records,
        }
    }
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |l: &Line| {
            out.push_str(&serde_json::to_string(l).unwrap());
            out.push('\n');
        };
        push(&Line::Header {
            schema: TRACE_SCHEMA,
            config: self.config.clone(),
        });
        for r in &self.records {
            push(&Line::Step(r.clone()));
        }
        push(&Line::Footer {
            steps: self.records.len() as u64,
            final_hash: self.records.last().map(|r| r.hash.clone()).unwrap_or_default(),
        });
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let mut config = None;
        let mut records = Vec::new();
        let mut footer = None;
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            if footer.is_some() {
                return Err(TraceError::Parse {
                    line: i + 1,
                    msg: "content after footer".into(),
                });
            }
            let line: Line = serde_json::from_str(raw).map_err(|e| TraceError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            match line {
                Line::Header { schema, config: c } => {
                    if schema != TRACE_SCHEMA {
                        return Err(TraceError::Schema(schema));
                    }
                    if config.is_some() {
                        return Err(TraceError::Parse {
                            line: i + 1,
                            msg: "second header".into(),
                        });
                    }
                    config = Some(c);
                }
                Line::Step(r) => {
                    if config.is_none() {
                        return Err(TraceError::MissingHeader);
                    }
                    records.push(r);
                }
                Line::Footer { steps, .. } => footer = Some(steps),
            }
        }
        let config = config.ok_or(TraceError::MissingHeader)?;
        let steps = footer.ok_or(TraceError::MissingFooter)?;
        if steps != records.len() as u64 {
            return Err(TraceError::StepCount {
                expected: steps,
                found: records.len() as u64,
            });
        }
        Ok(Trace { config, records })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub steps: u64,
    /// First step whose record differs from the re-execution.
    pub divergence: Option<u64>,
}

/// Re-runs the trace's configuration and compares every record.
pub fn replay(trace: &Trace) -> Result<ReplayOutcome, SimError> {
    let mut sim = Simulation::with_trace(trace.config.clone(), true)?;
    sim.run();
    let fresh = sim.trace_records().unwrap_or(&[]);
    let divergence = trace
        .records
        .iter()
        .zip(fresh)
        .position(|(a, b)| a != b)
        .or_else(|| (trace.records.len() != fresh.len()).then(|| trace.records.len().min(fresh.len())))
        .map(|i| i as u64);
    Ok(ReplayOutcome {
        steps: fresh.len() as u64,
        divergence,
    })
}
