//! Intent-driven admission: memory of connected users, planner backends and
//! the two-stage pathway (pre-allocation with empirical verification, then
//! slack reclamation when idle bandwidth runs short).

mod admission;
pub mod llm;
mod memory;
mod oracle;

pub use admission::{
    pre_allocate, reclaim, verify_plan, AdmissionMode, AdmissionOutcome, AdmissionStatus, Adjustment,
    IntentAgent, OraclePlanner, Planner, Reclaim, RejectReason, Rejection, RulePlanner, Verification,
};
pub use llm::{
    ChatBackend, ChatMessage, HttpChatBackend, LlmConfig, LlmPlanner, ScriptedBackend, TableReadingStub,
};
pub use memory::{SystemState, UserRecord};
pub use oracle::{oracle_plan, oracle_plan_with, PlanDecision, PlanProposal, PlanSource, RatePolicy};
