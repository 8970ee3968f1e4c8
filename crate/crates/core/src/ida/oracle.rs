use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::codec::ControlParameter;
use crate::error::{Error, Result};
use crate::link::{required_bandwidth_mhz, rule_based_code_rate, CodeRate, UserRequest};
use crate::rda::ExperienceTable;

use super::memory::SystemState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlanSource {
    Oracle,
    Rule,
    Prompt,
    Llm,
}

impl PlanSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanSource::Oracle => "oracle",
            PlanSource::Rule => "rule",
            PlanSource::Prompt => "prompt",
            PlanSource::Llm => "llm",
        }
    }
}

impl fmt::Display for PlanSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlanSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "oracle" => Ok(PlanSource::Oracle),
            "rule" => Ok(PlanSource::Rule),
            "prompt" => Ok(PlanSource::Prompt),
            "llm" => Ok(PlanSource::Llm),
            other => Err(Error::invalid(format!(
                "unknown policy {other:?} (expected oracle, rule, prompt or llm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanProposal {
    pub theta: ControlParameter,
    pub code_rate: CodeRate,
    pub predicted_bits: f64,
    pub predicted_mhz: f64,
    pub source: PlanSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlanDecision {
    Propose(PlanProposal),
    /// No configuration meets the accuracy requirement.
    Infeasible,
}

/// Which code rates a planner may pick for a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatePolicy {
    /// Any allowed rate.
    FullSet,
    /// Only the SNR-scaled heuristic rate.
    SnrScaled,
}

impl RatePolicy {
    pub fn candidates(self, snr_db: f64) -> Vec<CodeRate> {
        match self {
            RatePolicy::FullSet => CodeRate::all().collect(),
            RatePolicy::SnrScaled => vec![rule_based_code_rate(snr_db)],
        }
    }
}

/// Exhaustive minimum-bandwidth choice over the experience table and the
/// full code-rate set.
pub fn oracle_plan(req: &UserRequest, table: &ExperienceTable, _state: &SystemState) -> Result<PlanDecision> {
    oracle_plan_with(req, table, RatePolicy::FullSet, PlanSource::Oracle)
}

/// Among table entries meeting the request's accuracy, picks the
/// `(entry, code rate)` pair with the smallest bandwidth. Ties prefer lower
/// `q`, then lower `r`, then the higher code rate.
pub fn oracle_plan_with(
    req: &UserRequest,
    table: &ExperienceTable,
    rates: RatePolicy,
    source: PlanSource,
) -> Result<PlanDecision> {
    if table.is_empty() {
        return Err(Error::Planner("experience table is empty".into()));
    }
    let candidates = rates.candidates(req.snr_db);
    let mut best: Option<PlanProposal> = None;
    for rec in table.records().iter().filter(|r| r.accuracy >= req.min_accuracy()) {
        for &rate in &candidates {
            let mhz = required_bandwidth_mhz(rec.mean_bits, &req.link(rate))?;
            let p = PlanProposal {
                theta: rec.theta,
                code_rate: rate,
                predicted_bits: rec.mean_bits,
                predicted_mhz: mhz,
                source,
            };
            if best.as_ref().is_none_or(|b| preference(&p, b) == Ordering::Less) {
                best = Some(p);
            }
        }
    }
    Ok(best.map_or(PlanDecision::Infeasible, PlanDecision::Propose))
}

fn preference(a: &PlanProposal, b: &PlanProposal) -> Ordering {
    a.predicted_mhz
        .total_cmp(&b.predicted_mhz)
        .then(a.theta.qbits().cmp(&b.theta.qbits()))
        .then(a.theta.rank().cmp(&b.theta.rank()))
        .then(b.code_rate.cmp(&a.code_rate))
}
