use std::fmt;

use crate::codec::ControlParameter;
use crate::error::{Error, Result};
use crate::link::{required_bandwidth_mhz, CodeRate, UserRequest};
use crate::rda::{measure_range, AccuracyModel, ExperienceRecord, ExperienceTable, FeatureSource};
use crate::scalar::Scalar;

use super::memory::{SystemState, UserRecord};
use super::oracle::{oracle_plan_with, PlanDecision, PlanProposal, PlanSource, RatePolicy};

/// Maps a request plus the current memory to a configuration.
pub trait Planner: Send {
    fn source(&self) -> PlanSource;

    /// Code rates considered when this planner's users are retuned.
    fn rate_policy(&self) -> RatePolicy {
        RatePolicy::FullSet
    }

    fn plan(&mut self, req: &UserRequest, state: &SystemState, table: &ExperienceTable) -> Result<PlanDecision>;
}

/// Exhaustive search over the table and the full code-rate set.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePlanner;

impl Planner for OraclePlanner {
    fn source(&self) -> PlanSource {
        PlanSource::Oracle
    }

    fn plan(&mut self, req: &UserRequest, _state: &SystemState, table: &ExperienceTable) -> Result<PlanDecision> {
        oracle_plan_with(req, table, RatePolicy::FullSet, PlanSource::Oracle)
    }
}

/// Exhaustive search over the table with the SNR-scaled code rate.
#[derive(Debug, Clone, Copy, Default)]
pub struct RulePlanner;

impl Planner for RulePlanner {
    fn source(&self) -> PlanSource {
        PlanSource::Rule
    }

    fn rate_policy(&self) -> RatePolicy {
        RatePolicy::SnrScaled
    }

    fn plan(&mut self, req: &UserRequest, _state: &SystemState, table: &ExperienceTable) -> Result<PlanDecision> {
        oracle_plan_with(req, table, RatePolicy::SnrScaled, PlanSource::Rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    InfeasibleQos,
    InsufficientBandwidth,
    PlannerFailure,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::InfeasibleQos => "infeasible-qos",
            RejectReason::InsufficientBandwidth => "insufficient-bandwidth",
            RejectReason::PlannerFailure => "planner-failure",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RejectReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "infeasible-qos" => Ok(RejectReason::InfeasibleQos),
            "insufficient-bandwidth" => Ok(RejectReason::InsufficientBandwidth),
            "planner-failure" => Ok(RejectReason::PlannerFailure),
            other => Err(Error::invalid(format!("unknown rejection reason {other:?}"))),
        }
    }
}

/// Why a request stopped before commit.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub reason: RejectReason,
    pub detail: String,
}

impl Rejection {
    fn new(reason: RejectReason, detail: impl Into<String>) -> Self {
        Self {
            reason,
            detail: detail.into(),
        }
    }
}

/// Asks the planner for a proposal. Infeasibility and planner errors become
/// rejections; the proposal is not checked against idle bandwidth here.
pub fn pre_allocate(
    req: &UserRequest,
    table: &ExperienceTable,
    state: &SystemState,
    planner: &mut dyn Planner,
) -> std::result::Result<PlanProposal, Rejection> {
    match planner.plan(req, state, table) {
        Ok(PlanDecision::Propose(p)) => {
            if !(p.predicted_bits.is_finite() && p.predicted_bits >= 0.0 && p.predicted_mhz.is_finite() && p.predicted_mhz >= 0.0) {
                return Err(Rejection::new(
                    RejectReason::PlannerFailure,
                    format!("non-finite or negative prediction {p:?}"),
                ));
            }
            Ok(p)
        }
        Ok(PlanDecision::Infeasible) => Err(Rejection::new(
            RejectReason::InfeasibleQos,
            format!("no configuration reaches accuracy {}", req.min_accuracy()),
        )),
        Err(e) => Err(Rejection::new(RejectReason::PlannerFailure, e.to_string())),
    }
}

/// Result of probing a proposal against the real encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Verification {
    /// `proposal` carries the measured bits and the recomputed bandwidth.
    Verified { proposal: PlanProposal, probe: ExperienceRecord },
    InfeasibleQos { probe: ExperienceRecord, table_accuracy: f64 },
}

/// Encodes `n_probe` fresh samples at the proposed configuration, folds the
/// measurement into `table`, and resizes the proposal to the measured rate.
#[allow(clippy::too_many_arguments)]
pub fn verify_plan<T: Scalar>(
    proposal: &PlanProposal,
    req: &UserRequest,
    src: &FeatureSource<T>,
    model: &AccuracyModel,
    n_probe: usize,
    probe_start: u64,
    table: &mut ExperienceTable,
) -> Result<Verification> {
    if n_probe == 0 {
        return Err(Error::invalid("n_probe must be at least 1"));
    }
    let probe = measure_range(src, proposal.theta, probe_start, n_probe, model)?;
    table.absorb(probe, model)?;
    let table_accuracy = table.get(proposal.theta).map_or(probe.accuracy, |r| r.accuracy);
    if probe.accuracy < req.min_accuracy() || table_accuracy < req.min_accuracy() {
        return Ok(Verification::InfeasibleQos { probe, table_accuracy });
    }
    let predicted_mhz = required_bandwidth_mhz(probe.mean_bits, &req.link(proposal.code_rate))?;
    Ok(Verification::Verified {
        proposal: PlanProposal {
            predicted_bits: probe.mean_bits,
            predicted_mhz,
            ..*proposal
        },
        probe,
    })
}

/// One retuned user.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjustment {
    pub user_id: u64,
    pub old_theta: ControlParameter,
    pub new_theta: ControlParameter,
    pub old_code_rate: CodeRate,
    pub new_code_rate: CodeRate,
    pub old_mhz: f64,
    pub new_mhz: f64,
}

impl Adjustment {
    pub fn freed_mhz(&self) -> f64 {
        self.old_mhz - self.new_mhz
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reclaim {
    pub freed_mhz: f64,
    pub adjustments: Vec<Adjustment>,
}

/// Retunes connected users to their cheapest QoS-feasible configuration,
/// largest slack first (ties by user id), until `deficit_mhz` is freed or
/// every user with slack has been visited.
pub fn reclaim(state: &mut SystemState, deficit_mhz: f64, table: &ExperienceTable, rates: RatePolicy) -> Result<Reclaim> {
    if !(deficit_mhz > 0.0) {
        return Err(Error::invalid(format!("deficit {deficit_mhz} MHz must be positive")));
    }
    let mut candidates = Vec::new();
    for (i, u) in state.users().iter().enumerate() {
        let req = UserRequest {
            user_id: u.user_id,
            snr_db: u.link.snr_db,
            delay_budget_s: u.link.delay_budget_s,
            tier: u.tier,
        };
        let PlanDecision::Propose(p) = oracle_plan_with(&req, table, rates, PlanSource::Oracle)? else {
            continue;
        };
        let slack = u.allocated_mhz - p.predicted_mhz;
        if slack > 0.0 && (p.theta, p.code_rate) != (u.theta, u.link.code_rate) {
            candidates.push((slack, u.user_id, i, p));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut out = Reclaim::default();
    let users = state.users_mut();
    for (_, _, i, p) in candidates {
        if out.freed_mhz >= deficit_mhz {
            break;
        }
        let u = &mut users[i];
        let link = u.link;
        let new_link = crate::link::LinkParams {
            code_rate: p.code_rate,
            ..link
        };
        let adj = Adjustment {
            user_id: u.user_id,
            old_theta: u.theta,
            new_theta: p.theta,
            old_code_rate: link.code_rate,
            new_code_rate: p.code_rate,
            old_mhz: u.allocated_mhz,
            new_mhz: p.predicted_mhz,
        };
        u.theta = p.theta;
        u.link = new_link;
        u.allocated_mhz = p.predicted_mhz;
        u.measured_bits = p.predicted_bits;
        out.freed_mhz += adj.freed_mhz();
        out.adjustments.push(adj);
    }
    Ok(out)
}

/// Whether admitted proposals are probed and the ledger rebalanced, or
/// committed on predicted values alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmissionMode {
    TwoStage,
    SingleShot,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmissionStatus {
    Admitted(UserRecord),
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionOutcome {
    pub status: AdmissionStatus,
    pub realloc_rounds: u32,
    pub freed_mhz: f64,
    pub adjustments: Vec<Adjustment>,
    pub detail: Option<String>,
}

impl AdmissionOutcome {
    fn rejected(r: Rejection, realloc_rounds: u32) -> Self {
        Self {
            status: AdmissionStatus::Rejected(r.reason),
            realloc_rounds,
            freed_mhz: 0.0,
            adjustments: Vec::new(),
            detail: Some(r.detail),
        }
    }

    pub fn is_admitted(&self) -> bool {
        matches!(self.status, AdmissionStatus::Admitted(_))
    }

    pub fn reject_reason(&self) -> Option<RejectReason> {
        match self.status {
            AdmissionStatus::Rejected(r) => Some(r),
            AdmissionStatus::Admitted(_) => None,
        }
    }
}

/// Base-station agent. Admission events are serialized through `&mut self`.
pub struct IntentAgent<T> {
    state: SystemState,
    experience: ExperienceTable,
    planner: Box<dyn Planner>,
    source: FeatureSource<T>,
    model: AccuracyModel,
    mode: AdmissionMode,
    n_probe: usize,
    probe_base: u64,
    probe_samples: u64,
}

impl<T: Scalar> IntentAgent<T> {
    pub fn new(
        state: SystemState,
        experience: ExperienceTable,
        planner: Box<dyn Planner>,
        source: FeatureSource<T>,
        model: AccuracyModel,
        mode: AdmissionMode,
    ) -> Self {
        Self {
            state,
            experience,
            planner,
            source,
            model,
            mode,
            n_probe: 8,
            probe_base: 0,
            probe_samples: 0,
        }
    }

    pub fn with_n_probe(mut self, n_probe: usize) -> Self {
        self.n_probe = n_probe;
        self
    }

    /// Source indices below `probe_base` are left to profiling; user `k`
    /// probes `probe_base + k * n_probe ..`.
    pub fn with_probe_base(mut self, probe_base: u64) -> Self {
        self.probe_base = probe_base;
        self
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn experience(&self) -> &ExperienceTable {
        &self.experience
    }

    pub fn mode(&self) -> AdmissionMode {
        self.mode
    }

    pub fn planner(&self) -> &dyn Planner {
        self.planner.as_ref()
    }

    /// Samples encoded by verification probes so far.
    pub fn probe_samples(&self) -> u64 {
        self.probe_samples
    }

    pub fn into_parts(self) -> (SystemState, ExperienceTable) {
        (self.state, self.experience)
    }

    pub fn admit(&mut self, req: &UserRequest) -> AdmissionOutcome {
        let proposal = match pre_allocate(req, &self.experience, &self.state, self.planner.as_mut()) {
            Ok(p) => p,
            Err(r) => return AdmissionOutcome::rejected(r, 0),
        };
        match self.mode {
            AdmissionMode::SingleShot => self.commit_predicted(req, proposal),
            AdmissionMode::TwoStage => self.verify_and_commit(req, proposal),
        }
    }

    fn commit_predicted(&mut self, req: &UserRequest, p: PlanProposal) -> AdmissionOutcome {
        match self.experience.get(p.theta) {
            Some(rec) if rec.accuracy >= req.min_accuracy() => {}
            Some(rec) => {
                return AdmissionOutcome::rejected(
                    Rejection::new(
                        RejectReason::InfeasibleQos,
                        format!("{} has accuracy {} below {}", p.theta, rec.accuracy, req.min_accuracy()),
                    ),
                    0,
                )
            }
            None => {
                return AdmissionOutcome::rejected(
                    Rejection::new(RejectReason::PlannerFailure, format!("{} is not in the experience table", p.theta)),
                    0,
                )
            }
        }
        if p.predicted_mhz > self.state.idle_bandwidth_mhz() {
            return AdmissionOutcome::rejected(
                Rejection::new(
                    RejectReason::InsufficientBandwidth,
                    format!("{} MHz requested, {} MHz idle", p.predicted_mhz, self.state.idle_bandwidth_mhz()),
                ),
                0,
            );
        }
        self.commit_into(req, &p, self.state.clone(), 0, Reclaim::default())
    }

    fn verify_and_commit(&mut self, req: &UserRequest, p: PlanProposal) -> AdmissionOutcome {
        let probe_start = self.probe_base + req.user_id * self.n_probe as u64;
        let verified = verify_plan(&p, req, &self.source, &self.model, self.n_probe, probe_start, &mut self.experience);
        let p = match verified {
            Ok(Verification::Verified { proposal, .. }) => {
                self.probe_samples += self.n_probe as u64;
                proposal
            }
            Ok(Verification::InfeasibleQos { probe, table_accuracy }) => {
                self.probe_samples += self.n_probe as u64;
                return AdmissionOutcome::rejected(
                    Rejection::new(
                        RejectReason::InfeasibleQos,
                        format!(
                            "{} measured accuracy {} (table {}) below {}",
                            p.theta,
                            probe.accuracy,
                            table_accuracy,
                            req.min_accuracy()
                        ),
                    ),
                    0,
                );
            }
            Err(e) => return AdmissionOutcome::rejected(Rejection::new(RejectReason::PlannerFailure, e.to_string()), 0),
        };

        let mut scratch = self.state.clone();
        let mut rounds = 0u32;
        let mut total = Reclaim::default();
        let max_rounds = scratch.users().len() as u32 + 1;
        loop {
            let idle = scratch.idle_bandwidth_mhz();
            if p.predicted_mhz <= idle {
                return self.commit_into(req, &p, scratch, rounds, total);
            }
            if rounds >= max_rounds {
                break;
            }
            let round = match reclaim(&mut scratch, p.predicted_mhz - idle, &self.experience, self.planner.rate_policy()) {
                Ok(r) => r,
                Err(e) => return AdmissionOutcome::rejected(Rejection::new(RejectReason::PlannerFailure, e.to_string()), rounds),
            };
            rounds += 1;
            if round.adjustments.is_empty() || round.freed_mhz <= 0.0 {
                break;
            }
            total.freed_mhz += round.freed_mhz;
            total.adjustments.extend(round.adjustments);
        }
        AdmissionOutcome::rejected(
            Rejection::new(
                RejectReason::InsufficientBandwidth,
                format!(
                    "{} MHz requested, {} MHz idle after {rounds} reallocation rounds",
                    p.predicted_mhz,
                    scratch.idle_bandwidth_mhz()
                ),
            ),
            rounds,
        )
    }

    fn commit_into(
        &mut self,
        req: &UserRequest,
        p: &PlanProposal,
        mut scratch: SystemState,
        rounds: u32,
        reclaimed: Reclaim,
    ) -> AdmissionOutcome {
        let record = UserRecord {
            user_id: req.user_id,
            theta: p.theta,
            link: req.link(p.code_rate),
            tier: req.tier,
            allocated_mhz: p.predicted_mhz,
            measured_bits: p.predicted_bits,
        };
        if let Err(e) = scratch.commit(record.clone()) {
            return AdmissionOutcome::rejected(Rejection::new(RejectReason::InsufficientBandwidth, e.to_string()), rounds);
        }
        self.state = scratch;
        AdmissionOutcome {
            status: AdmissionStatus::Admitted(record),
            realloc_rounds: rounds,
            freed_mhz: reclaimed.freed_mhz,
            adjustments: reclaimed.adjustments,
            detail: None,
        }
    }
}
