//! Chat-completion contract and its implementations.
//!
//! Every model call in the engine goes through [`ChatBackend::complete`]
//! with a [`RequestKey`] naming what the call is for. Three backends ship:
//!
//! - [`OpenAiBackend`]: OpenAI-compatible `/chat/completions` over HTTP with
//!   retry and backoff.
//! - [`ScriptedBackend`]: replays a JSONL script keyed by request key.
//! - [`SyntheticSolver`]: an offline stand-in model whose success rate grows
//!   with the knowledge it is shown.

mod live;
mod meter;
pub mod parse;
pub mod prompts;
mod scripted;
mod synthetic;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Sampling, Usage};

pub use live::{request_body, OpenAiBackend, API_BASE_ENV, API_KEY_ENV};
pub use meter::{CallLog, RecordedCall};
pub use scripted::{Script, ScriptEntry, ScriptError, ScriptedBackend};
pub use synthetic::SyntheticSolver;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(system: Option<&str>, user: impl Into<String>, sampling: &Sampling) -> Self {
        let mut messages = Vec::with_capacity(2);
        if let Some(s) = system {
            messages.push(Message::system(s));
        }
        messages.push(Message::user(user));
        Self {
            messages,
            temperature: sampling.temperature,
            max_tokens: sampling.max_tokens,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("negative temperature".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        if self.messages.iter().skip(1).any(|m| m.role == Role::System) {
            return Err(BackendError::InvalidRequest(
                "system message must come first".into(),
            ));
        }
        Ok(())
    }

    /// Concatenated text of every message, for backends that inspect prompts.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
    pub backend_id: String,
}

/// What a model call is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Strategy,
    Solve,
    Select,
    Tests,
    Judge,
    Reflect,
    Sample,
    Aggregate,
}

impl Purpose {
    pub const ALL: [Purpose; 8] = [
        Purpose::Strategy,
        Purpose::Solve,
        Purpose::Select,
        Purpose::Tests,
        Purpose::Judge,
        Purpose::Reflect,
        Purpose::Sample,
        Purpose::Aggregate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Strategy => "strategy",
            Purpose::Solve => "solve",
            Purpose::Select => "select",
            Purpose::Tests => "tests",
            Purpose::Judge => "judge",
            Purpose::Reflect => "reflect",
            Purpose::Sample => "sample",
            Purpose::Aggregate => "aggregate",
        }
    }

    /// Calls that produce a candidate solution. These are what matched
    /// compute budgets count.
    pub fn is_generation(self) -> bool {
        matches!(self, Purpose::Solve | Purpose::Sample | Purpose::Aggregate)
    }
}

impl std::str::FromStr for Purpose {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Purpose::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown purpose `{s}`"))
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identity of a call inside a run: which problem, what for, which round and
/// which slot. Scripts are keyed by its hash, so they survive prompt edits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestKey {
    pub problem_id: String,
    pub purpose: Purpose,
    pub round: u32,
    pub index: u32,
}

impl RequestKey {
    pub fn new(problem_id: impl Into<String>, purpose: Purpose, round: u32, index: u32) -> Self {
        Self {
            problem_id: problem_id.into(),
            purpose,
            round,
            index,
        }
    }

    /// 32 hex chars of SHA-256 over the key fields.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.problem_id.as_bytes());
        h.update([0x1f]);
        h.update(self.purpose.as_str().as_bytes());
        h.update([0x1f]);
        h.update(self.round.to_le_bytes());
        h.update(self.index.to_le_bytes());
        hex::encode(&h.finalize()[..16])
    }

    /// 64-bit seed derived from the key and a run seed.
    pub fn seed(&self, run_seed: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(run_seed.to_le_bytes());
        h.update(self.hash().as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

impl fmt::Display for RequestKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.problem_id, self.purpose, self.round, self.index
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("script has no entry for {key}")]
    ScriptExhausted { key: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("unsupported by this backend: {0}")]
    Unsupported(String),
}

impl BackendError {
    /// Whether the failure means the endpoint could not be reached at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(
        &self,
        key: &RequestKey,
        request: &ChatRequest,
    ) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(
        &self,
        key: &RequestKey,
        request: &ChatRequest,
    ) -> Result<ChatResponse, BackendError> {
        (**self).complete(key, request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(
        &self,
        key: &RequestKey,
        request: &ChatRequest,
    ) -> Result<ChatResponse, BackendError> {
        (**self).complete(key, request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(
        &self,
        key: &RequestKey,
        request: &ChatRequest,
    ) -> Result<ChatResponse, BackendError> {
        (**self).complete(key, request)
    }
}

/// Validates the request, then dispatches to the backend.
pub fn complete(
    backend: &dyn ChatBackend,
    key: &RequestKey,
    request: &ChatRequest,
) -> Result<ChatResponse, BackendError> {
    request.validate()?;
    backend.complete(key, request)
}

/// Backend plus the sampling settings and run seed every call shares.
#[derive(Clone, Copy)]
pub struct Caller<'a> {
    pub backend: &'a dyn ChatBackend,
    pub sampling: &'a Sampling,
    pub seed: u64,
}

impl<'a> Caller<'a> {
    pub fn new(backend: &'a dyn ChatBackend, sampling: &'a Sampling, seed: u64) -> Self {
        Self {
            backend,
            sampling,
            seed,
        }
    }

    /// Sends one request. The request seed is derived from the key, so each
    /// call slot samples independently yet reproducibly.
    pub fn call(
        &self,
        key: &RequestKey,
        system: Option<&str>,
        user: impl Into<String>,
    ) -> Result<ChatResponse, BackendError> {
        let req = ChatRequest::new(system, user, self.sampling).with_seed(key.seed(self.seed));
        complete(self.backend, key, &req)
    }
}
