//! Scenario runner: a seeded arrival queue driven through one admission
//! policy, with per-event logs and users-vs-bandwidth curves.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ida::{
    AdmissionMode, AdmissionStatus, Adjustment, HttpChatBackend, IntentAgent, LlmConfig, LlmPlanner, OraclePlanner,
    Planner, RejectReason, RulePlanner, SystemState, TableReadingStub,
};
use crate::link::{sample_user, CodeRate, UserRequest};
use crate::rda::{profile_grid, AccuracyModel, ExperienceTable, FeatureSource};

pub use crate::ida::PlanSource as Policy;

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// Standard normal entries times `scale`, seeded from the scenario seed.
    Gaussian { rows: usize, cols: usize, scale: f64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AccuracySpec {
    Synthetic { acc_max: f64, acc_min: f64, slope: f64 },
    Calibration(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmBackendKind {
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmSpec {
    pub backend: LlmBackendKind,
    pub stub_bits_factor: f64,
    pub stub_overshoot: usize,
    pub top_k: usize,
}

impl Default for LlmSpec {
    fn default() -> Self {
        Self {
            backend: LlmBackendKind::Stub,
            stub_bits_factor: 1.0,
            stub_overshoot: 0,
            top_k: LlmPlanner::DEFAULT_TOP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub total_bandwidth_mhz: f64,
    pub snr_range_db: (f64, f64),
    pub delay_range_ms: (f64, f64),
    /// Relative weights of the Low, Medium and High tiers.
    pub tier_weights: [f64; 3],
    pub queue_length: usize,
    pub seed: u64,
    pub source: SourceSpec,
    pub accuracy: AccuracySpec,
    pub rank_grid: Vec<usize>,
    pub qbits_grid: Vec<u8>,
    pub n_probe: usize,
    pub profile_samples: usize,
    pub llm: LlmSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            total_bandwidth_mhz: 100.0,
            snr_range_db: (5.0, 30.0),
            delay_range_ms: (0.05, 0.5),
            tier_weights: [1.0, 1.0, 1.0],
            queue_length: 200,
            seed: 1,
            source: SourceSpec::Gaussian {
                rows: 32,
                cols: 32,
                scale: 1.0,
            },
            accuracy: AccuracySpec::Synthetic {
                acc_max: 0.95,
                acc_min: 0.10,
                slope: 20.0,
            },
            rank_grid: vec![1, 2, 4, 8, 16, 32],
            qbits_grid: vec![1, 2, 4, 8],
            n_probe: 8,
            profile_samples: 16,
            llm: LlmSpec::default(),
        }
    }
}

fn cfg_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(line, format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| parse_num(line, key, s))
        .collect()
}

fn parse_pair(line: usize, key: &str, v: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(line, key, v)?.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err(cfg_err(line, format!("{key} needs two comma-separated values"))),
    }
}

impl ScenarioConfig {
    /// Parses `key = value` lines; `#` starts a comment. Relative file paths
    /// resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let (mut rows, mut cols, mut scale) = (32usize, 32usize, 1.0f64);
        let mut source_file: Option<PathBuf> = None;
        let (mut acc_max, mut acc_min, mut slope) = (0.95, 0.10, 20.0);
        let mut model_kind = "synthetic".to_string();
        let mut calibration: Option<PathBuf> = None;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(n, format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "total_bandwidth_mhz" => cfg.total_bandwidth_mhz = parse_num(n, key, value)?,
                "snr_range_db" => cfg.snr_range_db = parse_pair(n, key, value)?,
                "delay_range_ms" => cfg.delay_range_ms = parse_pair(n, key, value)?,
                "tier_weights" => {
                    cfg.tier_weights = parse_list::<f64>(n, key, value)?
                        .try_into()
                        .map_err(|_| cfg_err(n, "tier_weights needs three values"))?
                }
                "queue_length" => cfg.queue_length = parse_num(n, key, value)?,
                "seed" => cfg.seed = parse_num(n, key, value)?,
                "source_rows" => rows = parse_num(n, key, value)?,
                "source_cols" => cols = parse_num(n, key, value)?,
                "source_scale" => scale = parse_num(n, key, value)?,
                "source_file" => source_file = Some(base_dir.join(value)),
                "accuracy_model" => model_kind = value.to_string(),
                "acc_max" => acc_max = parse_num(n, key, value)?,
                "acc_min" => acc_min = parse_num(n, key, value)?,
                "acc_slope" => slope = parse_num(n, key, value)?,
                "calibration_file" => calibration = Some(base_dir.join(value)),
                "rank_grid" => cfg.rank_grid = parse_list(n, key, value)?,
                "qbits_grid" => cfg.qbits_grid = parse_list(n, key, value)?,
                "n_probe" => cfg.n_probe = parse_num(n, key, value)?,
                "profile_samples" => cfg.profile_samples = parse_num(n, key, value)?,
                "llm_backend" => {
                    cfg.llm.backend = match value {
                        "stub" => LlmBackendKind::Stub,
                        "http" => LlmBackendKind::Http,
                        other => return Err(cfg_err(n, format!("llm_backend must be stub or http, got {other:?}"))),
                    }
                }
                "stub_bits_factor" => cfg.llm.stub_bits_factor = parse_num(n, key, value)?,
                "stub_overshoot" => cfg.llm.stub_overshoot = parse_num(n, key, value)?,
                "llm_top_k" => cfg.llm.top_k = parse_num(n, key, value)?,
                other => return Err(cfg_err(n, format!("unknown key {other:?}"))),
            }
        }
        cfg.source = match source_file {
            Some(p) => SourceSpec::File(p),
            None => SourceSpec::Gaussian { rows, cols, scale },
        };
        cfg.accuracy = match (model_kind.as_str(), calibration) {
            ("synthetic", _) => AccuracySpec::Synthetic { acc_max, acc_min, slope },
            ("calibration", Some(p)) => AccuracySpec::Calibration(p),
            ("calibration", None) => return Err(Error::Config("accuracy_model = calibration needs calibration_file".into())),
            (other, _) => return Err(Error::Config(format!("accuracy_model must be synthetic or calibration, got {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.total_bandwidth_mhz > 0.0 && self.total_bandwidth_mhz.is_finite()) {
            return bad(format!("total_bandwidth_mhz {} must be positive", self.total_bandwidth_mhz));
        }
        let (s0, s1) = self.snr_range_db;
        if !(s0.is_finite() && s1.is_finite() && s0 <= s1) {
            return bad(format!("snr_range_db ({s0}, {s1}) must be an ordered finite range"));
        }
        let (d0, d1) = self.delay_range_ms;
        if !(d0 > 0.0 && d1.is_finite() && d0 <= d1) {
            return bad(format!("delay_range_ms ({d0}, {d1}) must be an ordered positive range"));
        }
        if self.tier_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.tier_weights.iter().sum::<f64>() <= 0.0 {
            return bad("tier_weights must be nonnegative with a positive sum".into());
        }
        if self.rank_grid.is_empty() || self.qbits_grid.is_empty() {
            return bad("rank_grid and qbits_grid must be nonempty".into());
        }
        if self.n_probe == 0 || self.profile_samples == 0 {
            return bad("n_probe and profile_samples must be at least 1".into());
        }
        if let SourceSpec::Gaussian { rows, cols, scale } = self.source {
            if rows == 0 || cols == 0 || !(scale > 0.0 && scale.is_finite()) {
                return bad("source dimensions and scale must be positive".into());
            }
        }
        if !(self.llm.stub_bits_factor > 0.0 && self.llm.stub_bits_factor.is_finite()) {
            return bad("stub_bits_factor must be positive".into());
        }
        Ok(())
    }

    pub fn build_source(&self) -> Result<FeatureSource<f64>> {
        let src = match &self.source {
            SourceSpec::Gaussian { rows, cols, scale } => FeatureSource::gaussian(self.seed, *rows, *cols, *scale)?,
            SourceSpec::File(p) => FeatureSource::from_file(p)?,
        };
        if let Some(&r) = self.rank_grid.iter().find(|&&r| r > src.max_rank()) {
            return Err(Error::Config(format!(
                "rank_grid entry {r} exceeds the source's maximum rank {}",
                src.max_rank()
            )));
        }
        Ok(src)
    }

    pub fn build_model(&self) -> Result<AccuracyModel> {
        match &self.accuracy {
            AccuracySpec::Synthetic { acc_max, acc_min, slope } => AccuracyModel::synthetic(*acc_max, *acc_min, *slope),
            AccuracySpec::Calibration(p) => AccuracyModel::read_calibration(p),
        }
    }

    /// The arrival queue; identical for every policy under one seed.
    pub fn queue(&self) -> Result<Vec<UserRequest>> {
        (0..self.queue_length as u64)
            .map(|i| sample_user(self.seed, i, self))
            .collect()
    }
}

/// Source, model and profiled table shared by all policies of one seed.
#[derive(Debug, Clone)]
pub struct Profile {
    pub source: FeatureSource<f64>,
    pub model: AccuracyModel,
    pub table: ExperienceTable,
}

impl Profile {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let source = cfg.build_source()?;
        let model = cfg.build_model()?;
        let table = profile_grid(&source, &cfg.rank_grid, &cfg.qbits_grid, cfg.profile_samples, &model)?;
        Ok(Self { source, model, table })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Admitted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub event_index: u64,
    pub user_id: u64,
    pub policy: Policy,
    pub outcome: Outcome,
    pub reason: Option<RejectReason>,
    pub r: Option<usize>,
    pub q: Option<u8>,
    pub code_rate: Option<CodeRate>,
    pub allocated_mhz: f64,
    pub realloc_rounds: u32,
    /// Allocated share of the total bandwidth after the event.
    pub cum_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub admitted: usize,
    pub cum_fraction: f64,
    pub avg_mhz_per_user: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub policy: Policy,
    pub seed: u64,
    pub events: Vec<SimEvent>,
    pub admitted_count: usize,
    /// One point per admission, in admission order.
    pub curve: Vec<CurvePoint>,
}

impl SimReport {
    /// Mean allocation per connected user at the end of the run.
    pub fn avg_mhz_per_user(&self) -> f64 {
        self.curve.last().map_or(0.0, |c| c.avg_mhz_per_user)
    }
}

/// A finished run plus the memory it left behind.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: SimReport,
    pub state: SystemState,
    pub experience: ExperienceTable,
    /// Retunings performed during reallocation, keyed by event index.
    pub adjustments: Vec<(u64, Adjustment)>,
}

fn planner_for(cfg: &ScenarioConfig, policy: Policy) -> Result<(Box<dyn Planner>, AdmissionMode)> {
    let llm_backend = || -> Result<Box<dyn crate::ida::ChatBackend>> {
        Ok(match cfg.llm.backend {
            LlmBackendKind::Stub => Box::new(TableReadingStub {
                bits_factor: cfg.llm.stub_bits_factor,
                overshoot: cfg.llm.stub_overshoot,
            }),
            LlmBackendKind::Http => Box::new(HttpChatBackend::new(LlmConfig::from_env()?)),
        })
    };
    Ok(match policy {
        Policy::Oracle => (Box::new(OraclePlanner), AdmissionMode::TwoStage),
        Policy::Rule => (Box::new(RulePlanner), AdmissionMode::TwoStage),
        Policy::Llm => (
            Box::new(LlmPlanner::new(llm_backend()?, Policy::Llm).with_top_k(cfg.llm.top_k)),
            AdmissionMode::TwoStage,
        ),
        Policy::Prompt => (
            Box::new(LlmPlanner::new(llm_backend()?, Policy::Prompt).with_top_k(cfg.llm.top_k)),
            AdmissionMode::SingleShot,
        ),
    })
}

/// Profiles the source, then admits the queue under `policy`.
pub fn run_scenario(cfg: &ScenarioConfig, policy: Policy) -> Result<SimReport> {
    Ok(run_scenario_full(cfg, policy)?.report)
}

pub fn run_scenario_full(cfg: &ScenarioConfig, policy: Policy) -> Result<ScenarioRun> {
    let profile = Profile::build(cfg)?;
    run_with_profile(cfg, policy, &profile)
}

/// Runs `policy` against an existing profile.
pub fn run_with_profile(cfg: &ScenarioConfig, policy: Policy, profile: &Profile) -> Result<ScenarioRun> {
    let (planner, mode) = planner_for(cfg, policy)?;
    run_scenario_with(cfg, policy, planner, mode, profile)
}

/// Runs a caller-supplied planner; `policy` only labels the events.
pub fn run_scenario_with(
    cfg: &ScenarioConfig,
    policy: Policy,
    planner: Box<dyn Planner>,
    mode: AdmissionMode,
    profile: &Profile,
) -> Result<ScenarioRun> {
    cfg.validate()?;
    let queue = cfg.queue()?;
    let state = SystemState::new(cfg.total_bandwidth_mhz)?;
    let mut agent = IntentAgent::new(
        state,
        profile.table.clone(),
        planner,
        profile.source.clone(),
        profile.model.clone(),
        mode,
    )
    .with_n_probe(cfg.n_probe)
    .with_probe_base(cfg.profile_samples as u64);

    let total = cfg.total_bandwidth_mhz;
    let mut events = Vec::with_capacity(queue.len());
    let mut curve = Vec::new();
    let mut adjustments = Vec::new();
    for (k, req) in queue.iter().enumerate() {
        let out = agent.admit(req);
        let state = agent.state();
        let allocated = state.allocated_mhz();
        if allocated > total + 1e-9 {
            return Err(Error::invalid(format!(
                "ledger overflow at event {k}: {allocated} MHz allocated of {total}"
            )));
        }
        let cum_fraction = allocated / total;
        adjustments.extend(out.adjustments.iter().cloned().map(|a| (k as u64, a)));
        let ev = match &out.status {
            AdmissionStatus::Admitted(u) => {
                curve.push(CurvePoint {
                    admitted: state.users().len(),
                    cum_fraction,
                    avg_mhz_per_user: allocated / state.users().len() as f64,
                });
                SimEvent {
                    event_index: k as u64,
                    user_id: req.user_id,
                    policy,
                    outcome: Outcome::Admitted,
                    reason: None,
                    r: Some(u.theta.rank()),
                    q: Some(u.theta.qbits()),
                    code_rate: Some(u.link.code_rate),
                    allocated_mhz: u.allocated_mhz,
                    realloc_rounds: out.realloc_rounds,
                    cum_fraction,
                }
            }
            AdmissionStatus::Rejected(reason) => SimEvent {
                event_index: k as u64,
                user_id: req.user_id,
                policy,
                outcome: Outcome::Rejected,
                reason: Some(*reason),
                r: None,
                q: None,
                code_rate: None,
                allocated_mhz: 0.0,
                realloc_rounds: out.realloc_rounds,
                cum_fraction,
            },
        };
        events.push(ev);
    }
    let (state, experience) = agent.into_parts();
    Ok(ScenarioRun {
        report: SimReport {
            policy,
            seed: cfg.seed,
            admitted_count: state.users().len(),
            events,
            curve,
        },
        state,
        experience,
        adjustments,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// Ordered by seed, then by policy, as requested.
    pub runs: Vec<SimReport>,
}

impl ComparisonReport {
    pub fn get(&self, policy: Policy, seed: u64) -> Option<&SimReport> {
        self.runs.iter().find(|r| r.policy == policy && r.seed == seed)
    }
}

/// Runs every `(policy, seed)` pair. Policies under one seed share the
/// profile and the arrival queue; runs execute in parallel.
pub fn compare_policies(cfg: &ScenarioConfig, policies: &[Policy], seeds: &[u64]) -> Result<ComparisonReport> {
    if policies.is_empty() || seeds.is_empty() {
        return Err(Error::Config("compare needs at least one policy and one seed".into()));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = ScenarioConfig { seed, ..cfg.clone() };
            let profile = Profile::build(&cfg)?;
            policies
                .par_iter()
                .map(|&p| run_with_profile(&cfg, p, &profile).map(|r| r.report))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport {
        runs: runs.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    event_index: u64,
    user_id: u64,
    policy: String,
    outcome: Outcome,
    reason: Option<String>,
    r: Option<usize>,
    q: Option<u8>,
    code_rate: Option<CodeRate>,
    allocated_mhz: f64,
    realloc_rounds: u32,
    cum_fraction: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryRow {
    policy: String,
    seed: u64,
    admitted: usize,
    avg_mhz_per_user: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    policy: String,
    seed: u64,
    admitted: usize,
    cum_fraction: f64,
    avg_mhz_per_user: f64,
}

pub const EVENTS_HEADER: [&str; 11] = [
    "event_index",
    "user_id",
    "policy",
    "outcome",
    "reason",
    "r",
    "q",
    "code_rate",
    "allocated_mhz",
    "realloc_rounds",
    "cum_fraction",
];
pub const SUMMARY_HEADER: [&str; 4] = ["policy", "seed", "admitted", "avg_mhz_per_user"];
pub const CURVE_HEADER: [&str; 5] = ["policy", "seed", "admitted", "cum_fraction", "avg_mhz_per_user"];

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    Ok(w)
}

fn write_events(path: &Path, events: &[SimEvent]) -> Result<()> {
    let mut w = csv_writer(path, &EVENTS_HEADER)?;
    for e in events {
        w.serialize(EventRow {
            event_index: e.event_index,
            user_id: e.user_id,
            policy: e.policy.to_string(),
            outcome: e.outcome,
            reason: e.reason.map(|r| r.to_string()),
            r: e.r,
            q: e.q,
            code_rate: e.code_rate,
            allocated_mhz: e.allocated_mhz,
            realloc_rounds: e.realloc_rounds,
            cum_fraction: e.cum_fraction,
        })
        .map_err(|err| Error::csv(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_summary_and_curve(dir: &Path, runs: &[SimReport]) -> Result<()> {
    let path = dir.join("summary.csv");
    let mut w = csv_writer(&path, &SUMMARY_HEADER)?;
    for r in runs {
        w.serialize(SummaryRow {
            policy: r.policy.to_string(),
            seed: r.seed,
            admitted: r.admitted_count,
            avg_mhz_per_user: r.avg_mhz_per_user(),
        })
        .map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("curve.csv");
    let mut w = csv_writer(&path, &CURVE_HEADER)?;
    for r in runs {
        for c in &r.curve {
            w.serialize(CurveRow {
                policy: r.policy.to_string(),
                seed: r.seed,
                admitted: c.admitted,
                cum_fraction: c.cum_fraction,
                avg_mhz_per_user: c.avg_mhz_per_user,
            })
            .map_err(|e| Error::csv(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Writes `events.csv`, `summary.csv` and `curve.csv` into `dir` and
/// returns the paths written.
pub fn export_csv(report: &SimReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_events(&dir.join("events.csv"), &report.events)?;
    write_summary_and_curve(dir, std::slice::from_ref(report))?;
    Ok(["events.csv", "summary.csv", "curve.csv"].iter().map(|f| dir.join(f)).collect())
}

/// Writes `summary.csv`, `curve.csv` and one `events_<policy>_<seed>.csv`
/// per run into `dir`.
pub fn export_comparison(report: &ComparisonReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for r in &report.runs {
        let path = dir.join(format!("events_{}_{}.csv", r.policy, r.seed));
        write_events(&path, &r.events)?;
        written.push(path);
    }
    write_summary_and_curve(dir, &report.runs)?;
    written.push(dir.join("summary.csv"));
    written.push(dir.join("curve.csv"));
    Ok(written)
}

fn read_rows<R: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<csv::Result<Vec<R>>>()
        .map_err(|e| Error::csv(path, e))
}

/// Reads back a directory written by [`export_csv`].
pub fn import_csv(dir: impl AsRef<Path>) -> Result<SimReport> {
    let dir = dir.as_ref();
    let summary: Vec<SummaryRow> = read_rows(&dir.join("summary.csv"))?;
    let [s] = summary.as_slice() else {
        return Err(Error::Format(format!("{}: expected exactly one summary row", dir.display())));
    };
    let policy: Policy = s.policy.parse()?;
    let events = read_rows::<EventRow>(&dir.join("events.csv"))?
        .into_iter()
        .map(|e| {
            Ok(SimEvent {
                event_index: e.event_index,
                user_id: e.user_id,
                policy: e.policy.parse()?,
                outcome: e.outcome,
                reason: e.reason.map(|r| r.parse()).transpose()?,
                r: e.r,
                q: e.q,
                code_rate: e.code_rate,
                allocated_mhz: e.allocated_mhz,
                realloc_rounds: e.realloc_rounds,
                cum_fraction: e.cum_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = read_rows::<CurveRow>(&dir.join("curve.csv"))?
        .into_iter()
        .map(|c| CurvePoint {
            admitted: c.admitted,
            cum_fraction: c.cum_fraction,
            avg_mhz_per_user: c.avg_mhz_per_user,
        })
        .collect();
    Ok(SimReport {
        policy,
        seed: s.seed,
        events,
        admitted_count: s.admitted,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            queue_length: 30,
            source: SourceSpec::Gaussian {
                rows: 16,
                cols: 16,
                scale: 1.0,
            },
            rank_grid: vec![1, 4, 16],
            qbits_grid: vec![2, 8],
            profile_samples: 4,
            n_probe: 2,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn parse_config_file() {
        let text = "# scenario\n total_bandwidth_mhz = 50 \nsnr_range_db = 10, 20\nqueue_length=5 # short\n\
                    source_rows = 8\nsource_cols = 12\nrank_grid = 1,2,8\nqbits_grid = 4\nllm_backend = stub\n\
                    stub_overshoot = 2\ntier_weights = 1, 0, 0\n";
        let cfg = ScenarioConfig::parse(text, Path::new("/tmp")).unwrap();
        assert_eq!(cfg.total_bandwidth_mhz, 50.0);
        assert_eq!(cfg.snr_range_db, (10.0, 20.0));
        assert_eq!(cfg.queue_length, 5);
        assert_eq!(cfg.rank_grid, vec![1, 2, 8]);
        assert_eq!(cfg.llm.stub_overshoot, 2);
        assert_eq!(cfg.tier_weights, [1.0, 0.0, 0.0]);
        assert_eq!(
            cfg.source,
            SourceSpec::Gaussian {
                rows: 8,
                cols: 12,
                scale: 1.0
            }
        );
        let cfg = ScenarioConfig::parse("source_file = z.txt\naccuracy_model = calibration\ncalibration_file = c.csv", Path::new("/d")).unwrap();
        assert_eq!(cfg.source, SourceSpec::File(PathBuf::from("/d/z.txt")));
        assert_eq!(cfg.accuracy, AccuracySpec::Calibration(PathBuf::from("/d/c.csv")));
    }

    #[test]
    fn parse_rejects_bad_input() {
        for text in [
            "bogus = 1",
            "queue_length",
            "seed = x",
            "snr_range_db = 1",
            "snr_range_db = 30, 5",
            "tier_weights = 0,0,0",
            "accuracy_model = calibration",
            "llm_backend = magic",
            "rank_grid = ",
            "n_probe = 0",
        ] {
            assert!(matches!(ScenarioConfig::parse(text, Path::new(".")), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn empty_queue_gives_empty_report() {
        let cfg = ScenarioConfig {
            queue_length: 0,
            ..small()
        };
        let r = run_scenario(&cfg, Policy::Oracle).unwrap();
        assert_eq!(r.admitted_count, 0);
        assert!(r.events.is_empty());
        assert!(r.curve.is_empty());
    }

    #[test]
    fn oversized_user_rejected_with_zero_fraction() {
        let cfg = ScenarioConfig {
            queue_length: 1,
            total_bandwidth_mhz: 1e-6,
            tier_weights: [1.0, 0.0, 0.0],
            ..small()
        };
        let r = run_scenario(&cfg, Policy::Oracle).unwrap();
        assert_eq!(r.events.len(), 1);
        assert_eq!(r.events[0].reason, Some(RejectReason::InsufficientBandwidth));
        assert_eq!(r.events[0].cum_fraction, 0.0);
    }

    #[test]
    fn rank_grid_beyond_source_is_config_error() {
        let cfg = ScenarioConfig {
            rank_grid: vec![1, 64],
            ..small()
        };
        assert!(matches!(run_scenario(&cfg, Policy::Oracle), Err(Error::Config(_))));
    }

    #[test]
    fn policies_share_the_queue() {
        let cfg = small();
        let rep = compare_policies(&cfg, &[Policy::Oracle, Policy::Rule, Policy::Prompt], &[3]).unwrap();
        assert_eq!(rep.runs.len(), 3);
        for r in &rep.runs {
            let ids: Vec<u64> = r.events.iter().map(|e| e.user_id).collect();
            assert_eq!(ids, (0..30).collect::<Vec<_>>());
            assert!(r.admitted_count <= cfg.queue_length);
        }
        let only = compare_policies(&cfg, &[Policy::Oracle], &[cfg.seed]).unwrap();
        assert_eq!(only.runs, vec![run_scenario(&cfg, Policy::Oracle).unwrap()]);
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_scenario(&small(), Policy::Llm).unwrap();
        export_csv(&report, dir.path().join("a")).unwrap();
        export_csv(&report, dir.path().join("b")).unwrap();
        for f in ["events.csv", "summary.csv", "curve.csv"] {
            assert_eq!(
                fs::read(dir.path().join("a").join(f)).unwrap(),
                fs::read(dir.path().join("b").join(f)).unwrap()
            );
        }
        assert_eq!(import_csv(dir.path().join("a")).unwrap(), report);
        let head = fs::read_to_string(dir.path().join("a/events.csv")).unwrap();
        assert!(head.starts_with(&EVENTS_HEADER.join(",")));
    }

    #[test]
    fn empty_report_exports_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let report = SimReport {
            policy: Policy::Oracle,
            seed: 0,
            events: vec![],
            admitted_count: 0,
            curve: vec![],
        };
        export_csv(&report, dir.path()).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("events.csv")).unwrap(),
            format!("{}\n", EVENTS_HEADER.join(","))
        );
        assert_eq!(
            fs::read_to_string(dir.path().join("curve.csv")).unwrap(),
            format!("{}\n", CURVE_HEADER.join(","))
        );
    }

    #[test]
    fn export_to_unwritable_path_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let report = run_scenario(&ScenarioConfig { queue_length: 1, ..small() }, Policy::Oracle).unwrap();
        let err = export_csv(&report, blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
