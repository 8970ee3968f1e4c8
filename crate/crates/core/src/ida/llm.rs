//! Chat-completion planners. The planner renders the request and the
//! cheapest experience rows into a prompt and expects a JSON object
//! `{"rank": int, "qbits": int, "code_rate": float}` back. An optional
//! `"bits"` field overrides the table's rate estimate, and
//! `{"feasible": false}` declares the request unservable.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::codec::ControlParameter;
use crate::error::{Error, Result};
use crate::link::{required_bandwidth_mhz, CodeRate, UserRequest};
use crate::rda::ExperienceTable;

use super::admission::Planner;
use super::memory::SystemState;
use super::oracle::{PlanDecision, PlanProposal, PlanSource};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// One chat-completion round trip. Errors are transport failures.
pub trait ChatBackend: Send {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String>;
}

pub const ENV_ENDPOINT: &str = "LLM_ENDPOINT";
pub const ENV_MODEL: &str = "LLM_MODEL";
pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_TIMEOUT: &str = "LLM_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl LlmConfig {
    pub const DEFAULT_TIMEOUT_SECS: u64 = 30;

    /// Reads `LLM_ENDPOINT`, `LLM_MODEL`, `LLM_API_KEY` and
    /// `LLM_TIMEOUT_SECS`. The first two are required.
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let endpoint = get(ENV_ENDPOINT).ok_or_else(|| Error::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = get(ENV_MODEL).ok_or_else(|| Error::Config(format!("{ENV_MODEL} is not set")))?;
        let timeout = match get(ENV_TIMEOUT) {
            Some(s) => s
                .trim()
                .parse::<u64>()
                .ok()
                .filter(|&t| t > 0)
                .ok_or_else(|| Error::Config(format!("{ENV_TIMEOUT}={s:?} is not a positive integer")))?,
            None => Self::DEFAULT_TIMEOUT_SECS,
        };
        Ok(Self {
            endpoint,
            model,
            api_key: get(ENV_API_KEY).filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(timeout),
        })
    }
}

/// Chat-completion client over HTTP. Requests are sent with temperature 0.
pub struct HttpChatBackend {
    config: LlmConfig,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

impl HttpChatBackend {
    pub fn new(config: LlmConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let body = CompletionRequest {
            model: &self.config.model,
            messages,
            temperature: 0.0,
        };
        let transport = |e: ureq::Error| Error::Planner(format!("chat endpoint {}: {e}", self.config.endpoint));
        let mut resp = req.send_json(&body).map_err(transport)?;
        let parsed: CompletionResponse = resp.body_mut().read_json().map_err(transport)?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Planner("chat response has no choices".into()))
    }
}

/// Replays canned replies in order; the last one repeats. `None` entries
/// simulate transport failures.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: VecDeque<Option<String>>,
    calls: usize,
    last_prompt: Option<String>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: replies.into_iter().map(|s| Some(s.into())).collect(),
            ..Self::default()
        }
    }

    pub fn with_transport_failure() -> Self {
        Self {
            replies: VecDeque::from([None]),
            ..Self::default()
        }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn last_prompt(&self) -> Option<&str> {
        self.last_prompt.as_deref()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String> {
        self.calls += 1;
        self.last_prompt = messages.last().map(|m| m.content.clone());
        let reply = if self.replies.len() > 1 {
            self.replies.pop_front().flatten()
        } else {
            self.replies.front().cloned().flatten()
        };
        reply.ok_or_else(|| Error::Planner("scripted transport failure".into()))
    }
}

/// Deterministic stand-in for a model: reads the experience block and the
/// accuracy requirement from the prompt and answers with a feasible row.
///
/// `overshoot` skips that many cheaper feasible rows (saturating at the most
/// expensive one) and `bits_factor` scales the reported rate, so the stub can
/// reproduce suboptimal choices and misstated rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableReadingStub {
    pub bits_factor: f64,
    pub overshoot: usize,
}

impl Default for TableReadingStub {
    fn default() -> Self {
        Self {
            bits_factor: 1.0,
            overshoot: 0,
        }
    }
}

impl ChatBackend for TableReadingStub {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String> {
        let prompt = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let mut min_acc = None;
        let mut rows: Vec<(usize, u8, f64, f64)> = Vec::new();
        let mut in_table = false;
        for line in prompt.lines() {
            let line = line.trim();
            if let Some(v) = line.strip_prefix("min_accuracy:") {
                min_acc = v.trim().parse::<f64>().ok();
            } else if line == EXPERIENCE_HEADER {
                in_table = true;
            } else if in_table {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 5 {
                    in_table = false;
                    continue;
                }
                let parsed = (|| Some((f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?, f[4].parse().ok()?)))();
                if let Some(row) = parsed {
                    rows.push(row);
                }
            }
        }
        let min_acc = min_acc.unwrap_or(0.0);
        let mut feasible: Vec<_> = rows.into_iter().filter(|r| r.3 >= min_acc).collect();
        feasible.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.1, a.0).cmp(&(b.1, b.0))));
        let Some(&(r, q, bits, _)) = feasible.get(self.overshoot.min(feasible.len().saturating_sub(1))) else {
            return Ok(r#"{"feasible": false}"#.into());
        };
        Ok(format!(
            r#"{{"rank": {r}, "qbits": {q}, "code_rate": 0.9, "bits": {}}}"#,
            bits * self.bits_factor
        ))
    }
}

const EXPERIENCE_HEADER: &str = "r,q,mean_bits,mean_nmse,accuracy";

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RateField {
    Number(f64),
    Text(String),
}

#[derive(Debug, Deserialize)]
struct PlanReply {
    rank: Option<usize>,
    qbits: Option<u8>,
    code_rate: Option<RateField>,
    bits: Option<f64>,
    feasible: Option<bool>,
}

/// Planner backed by a chat model.
pub struct LlmPlanner {
    backend: Box<dyn ChatBackend>,
    source: PlanSource,
    top_k: usize,
    max_attempts: usize,
    requests: usize,
    last_retries: usize,
    total_retries: usize,
}

impl LlmPlanner {
    pub const MAX_ATTEMPTS: usize = 3;
    pub const DEFAULT_TOP_K: usize = 32;

    /// `source` is [`PlanSource::Llm`] for the verified pathway and
    /// [`PlanSource::Prompt`] for the single-prompt baseline.
    pub fn new(backend: Box<dyn ChatBackend>, source: PlanSource) -> Self {
        Self {
            backend,
            source,
            top_k: Self::DEFAULT_TOP_K,
            max_attempts: Self::MAX_ATTEMPTS,
            requests: 0,
            last_retries: 0,
            total_retries: 0,
        }
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k.max(1);
        self
    }

    /// Chat requests sent so far.
    pub fn requests(&self) -> usize {
        self.requests
    }

    /// Retries spent on the most recent request.
    pub fn last_retries(&self) -> usize {
        self.last_retries
    }

    pub fn total_retries(&self) -> usize {
        self.total_retries
    }

    pub fn render_prompt(&self, req: &UserRequest, state: &SystemState, table: &ExperienceTable) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "## system state");
        let _ = writeln!(s, "total_bandwidth_mhz: {}", state.total_bandwidth_mhz());
        let _ = writeln!(s, "idle_bandwidth_mhz: {}", state.idle_bandwidth_mhz());
        let _ = writeln!(s, "connected_users: {}", state.users().len());
        let _ = writeln!(s);
        let _ = writeln!(s, "## request");
        let _ = writeln!(s, "user_id: {}", req.user_id);
        let _ = writeln!(s, "snr_db: {}", req.snr_db);
        let _ = writeln!(s, "delay_ms: {}", req.delay_budget_s * 1e3);
        let _ = writeln!(s, "tier: {}", req.tier);
        let _ = writeln!(s, "min_accuracy: {}", req.min_accuracy());
        let _ = writeln!(s);
        let rates: Vec<String> = CodeRate::all().map(|c| c.value().to_string()).collect();
        let _ = writeln!(s, "## allowed code rates");
        let _ = writeln!(s, "{}", rates.join(", "));
        let _ = writeln!(s);
        let mut rows: Vec<_> = table.records().iter().collect();
        rows.sort_by(|a, b| a.mean_bits.total_cmp(&b.mean_bits).then(a.theta.cmp(&b.theta)));
        let _ = writeln!(s, "## experience (cheapest first)");
        let _ = writeln!(s, "{EXPERIENCE_HEADER}");
        for r in rows.into_iter().take(self.top_k) {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.theta.rank(),
                r.theta.qbits(),
                r.mean_bits,
                r.mean_nmse,
                r.accuracy
            );
        }
        let _ = writeln!(s);
        let _ = write!(
            s,
            "Choose the row and code rate that minimise bandwidth while meeting min_accuracy. \
             Reply with one JSON object {{\"rank\": int, \"qbits\": int, \"code_rate\": float}}, \
             or {{\"feasible\": false}} if no row qualifies."
        );
        s
    }

    fn interpret(&self, reply: &str, req: &UserRequest, table: &ExperienceTable) -> std::result::Result<PlanDecision, String> {
        let parsed = first_json_object(reply).ok_or_else(|| format!("no plan object in reply {:?}", truncate(reply)))?;
        if parsed.feasible == Some(false) {
            return Ok(PlanDecision::Infeasible);
        }
        let (Some(rank), Some(qbits), Some(rate)) = (parsed.rank, parsed.qbits, parsed.code_rate) else {
            return Err("reply lacks rank, qbits or code_rate".into());
        };
        let theta = ControlParameter::new(rank, qbits).map_err(|e| e.to_string())?;
        let code_rate = match rate {
            RateField::Number(v) if v.is_finite() && v > 0.0 => CodeRate::snap(v),
            RateField::Text(t) => t.parse::<CodeRate>().map_err(|e| e.to_string())?,
            RateField::Number(v) => return Err(format!("code rate {v} is not usable")),
        };
        let predicted_bits = match parsed.bits {
            Some(b) if b.is_finite() && b >= 0.0 => b,
            Some(b) => return Err(format!("bits {b} is not usable")),
            None => table
                .get(theta)
                .map(|r| r.mean_bits)
                .ok_or_else(|| format!("{theta} is not in the experience table"))?,
        };
        let predicted_mhz = required_bandwidth_mhz(predicted_bits, &req.link(code_rate)).map_err(|e| e.to_string())?;
        Ok(PlanDecision::Propose(PlanProposal {
            theta,
            code_rate,
            predicted_bits,
            predicted_mhz,
            source: self.source,
        }))
    }
}

impl Planner for LlmPlanner {
    fn source(&self) -> PlanSource {
        self.source
    }

    fn plan(&mut self, req: &UserRequest, state: &SystemState, table: &ExperienceTable) -> Result<PlanDecision> {
        let messages = [
            ChatMessage::system("You allocate radio bandwidth to users of a base station. Answer with JSON only."),
            ChatMessage::user(self.render_prompt(req, state, table)),
        ];
        self.last_retries = 0;
        let mut last_err = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                self.last_retries += 1;
                self.total_retries += 1;
            }
            self.requests += 1;
            let reply = self.backend.complete(&messages)?;
            match self.interpret(&reply, req, table) {
                Ok(d) => return Ok(d),
                Err(e) => last_err = e,
            }
        }
        Err(Error::Planner(format!(
            "{} malformed replies; last: {last_err}",
            self.max_attempts
        )))
    }
}

fn first_json_object(text: &str) -> Option<PlanReply> {
    text.match_indices('{').find_map(|(i, _)| {
        serde_json::Deserializer::from_str(&text[i..])
            .into_iter::<PlanReply>()
            .next()?
            .ok()
    })
}

fn truncate(s: &str) -> String {
    s.chars().take(80).collect()
}
