//! Run reports, sweep rows and log-log scaling fits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::config::SimConfig;
use crate::simnet::LemmaSnapshot;
use crate::types::{InstanceId, PartyId};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    /// Some honest party had not finished when the queue drained or the
    /// step budget ran out.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance: InstanceId,
    pub committee: Vec<PartyId>,
    pub messages_honest: u64,
    pub bytes_honest: u64,
    /// Causal depth from instance start to finalization, maximised over
    /// honest parties.
    pub phases: u64,
    pub decided_slots: usize,
    pub output_size_requests: usize,
    pub duplicate_ratio: f64,
    /// Rounds each slot's agreement ran, maximised over honest parties.
    pub abba_rounds: BTreeMap<PartyId, u32>,
}

/// Delivery of requests present in at least n − f honest pools.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CensorshipStats {
    pub tracked: usize,
    pub delivered: usize,
    /// Mean instance number at which a tracked request was delivered.
    pub mean_delivery_instance: Option<f64>,
    pub max_delivery_instance: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub config: SimConfig,
    pub status: RunStatus,
    pub steps: u64,
    pub messages_honest: u64,
    pub bytes_honest: u64,
    pub messages_all: u64,
    pub instances: Vec<InstanceReport>,
    pub assertions: BTreeMap<String, bool>,
    pub lemma_snapshots: Vec<LemmaSnapshot>,
    pub censorship: CensorshipStats,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.status == RunStatus::Completed && self.assertions.values().all(|v| *v)
    }

    pub fn failed_assertions(&self) -> Vec<&str> {
        self.assertions.iter().filter(|(_, v)| !**v).map(|(k, _)| k.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn mean_instances<T: Into<f64>>(&self, f: impl Fn(&InstanceReport) -> T) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        self.instances.iter().map(|i| f(i).into()).sum::<f64>() / self.instances.len() as f64
    }

    pub fn mean_phases(&self) -> f64 {
        self.mean_instances(|i| i.phases as f64)
    }

    pub fn mean_decided_slots(&self) -> f64 {
        self.mean_instances(|i| i.decided_slots as f64)
    }

    pub fn mean_duplicate_ratio(&self) -> f64 {
        self.mean_instances(|i| i.duplicate_ratio)
    }

    /// Mean over all (instance, slot) pairs.
    pub fn mean_abba_rounds(&self) -> f64 {
        let rounds: Vec<u32> = self.instances.iter().flat_map(|i| i.abba_rounds.values().copied()).collect();
        if rounds.is_empty() {
            0.0
        } else {
            rounds.iter().map(|r| *r as f64).sum::<f64>() / rounds.len() as f64
        }
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            n: self.config.n,
            f: self.config.f,
            seed: self.config.seed,
            messages: self.messages_honest,
            bytes: self.bytes_honest,
            phases: self.mean_phases(),
            decided_slots: self.mean_decided_slots(),
            duplicate_ratio: self.mean_duplicate_ratio(),
            mean_abba_rounds: self.mean_abba_rounds(),
            status: match (self.status, self.passed()) {
                (RunStatus::Stalled, _) => "stalled",
                (_, true) => "pass",
                _ => "fail",
            }
            .to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub n: usize,
    pub f: usize,
    pub seed: u64,
    pub messages: u64,
    pub bytes: u64,
    pub phases: f64,
    pub decided_slots: f64,
    pub duplicate_ratio: f64,
    pub mean_abba_rounds: f64,
    pub status: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} distinct x values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("non-positive value in fit input")]
    NonPositive,
}

/// Least-squares line through (ln x, ln mean y).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// (x, mean y) per distinct x, ascending.
    pub points: Vec<(f64, f64)>,
}

impl ScalingFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

/// Fits `y ~ x^slope` over samples grouped by `x`. Needs at least
/// `min_points` distinct `x` values.
pub fn scaling_fit(samples: &[(f64, f64)], min_points: usize) -> Result<ScalingFit, FitError> {
    let mut groups: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for &(x, y) in samples {
        if x <= 0.0 || y <= 0.0 {
            return Err(FitError::NonPositive);
        }
        let g = groups.entry(x.to_bits()).or_insert((x, 0.0, 0));
        g.1 += y;
        g.2 += 1;
    }
    let mut points: Vec<(f64, f64)> = groups.values().map(|(x, s, c)| (*x, s / *c as f64)).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    if points.len() < min_points.max(2) {
        return Err(FitError::InsufficientData {
            needed: min_points.max(2),
            got: points.len(),
        });
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
        points,
    })
}

/// Fits messages against n over a set of reports; at least three distinct
/// n values are required.
pub fn message_fit(reports: &[RunReport]) -> Result<ScalingFit, FitError> {
    let samples: Vec<(f64, f64)> = reports
        .iter()
        .map(|r| (r.config.n as f64, r.messages_honest as f64))
        .collect();
    scaling_fit(&samples, 3)
}

pub fn byte_fit(reports: &[RunReport]) -> Result<ScalingFit, FitError> {
    let samples: Vec<(f64, f64)> = reports
        .iter()
        .map(|r| (r.config.n as f64, r.bytes_honest as f64))
        .collect();
    scaling_fit(&samples, 3)
}

/// 1 − unique / total over the requests of the decided batches.
pub fn duplicate_ratio<'a>(batches: impl IntoIterator<Item = &'a [Vec<u8>]>) -> f64 {
    let mut total = 0usize;
    let mut unique = std::collections::BTreeSet::new();
    for b in batches {
        total += b.len();
        unique.extend(b.iter());
    }
    if total == 0 {
        0.0
    } else {
        1.0 - unique.len() as f64 / total as f64
    }
}
