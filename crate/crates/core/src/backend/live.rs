use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, RequestKey};
use crate::domain::{token_proxy, LiveSettings, Usage};

pub const API_KEY_ENV: &str = "TRT_API_KEY";
pub const API_BASE_ENV: &str = "TRT_API_BASE";

const MAX_BACKOFF_MS: u64 = 30_000;

/// JSON body sent to `/chat/completions`.
pub fn request_body(model: &str, request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": model,
        "messages": request.messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    });
    if let Some(seed) = request.seed {
        body["seed"] = json!(seed);
    }
    body
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("gate lock");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("gate lock");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug)]
pub struct OpenAiBackend {
    settings: LiveSettings,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
    id: String,
}

enum Attempt {
    Done(ChatResponse),
    Retry(BackendError, Option<u64>),
    Fail(BackendError),
}

impl OpenAiBackend {
    pub fn new(settings: LiveSettings, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(settings.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                detail: e.to_string(),
            })?;
        Ok(Self {
            id: format!("openai:{}", settings.model),
            gate: Gate::new(settings.max_in_flight),
            settings,
            api_key,
            client,
        })
    }

    /// Applies `TRT_API_BASE` and `TRT_API_KEY` from the environment.
    pub fn from_env(mut settings: LiveSettings) -> Result<Self, BackendError> {
        if let Ok(base) = std::env::var(API_BASE_ENV) {
            if !base.trim().is_empty() {
                settings.base_url = base;
            }
        }
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(settings, key)
    }

    pub fn settings(&self) -> &LiveSettings {
        &self.settings
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.settings.base_url.trim_end_matches('/')
        )
    }

    fn backoff_ms(&self, attempt: u32) -> u64 {
        self.settings
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(MAX_BACKOFF_MS)
    }

    fn attempt(&self, body: &Value, request: &ChatRequest) -> Attempt {
        let mut builder = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = match builder.send() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry(
                    BackendError::Transport {
                        attempts: 0,
                        detail: e.to_string(),
                    },
                    None,
                )
            }
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(|s| s * 1000);
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry(
                    BackendError::Transport {
                        attempts: 0,
                        detail: e.to_string(),
                    },
                    None,
                )
            }
        };
        if status == 429 || status >= 500 {
            return Attempt::Retry(BackendError::Http { status, body: text }, retry_after);
        }
        if !(200..300).contains(&status) {
            return Attempt::Fail(BackendError::Http { status, body: text });
        }
        match parse_completion(&text, request) {
            Ok((content, usage)) => Attempt::Done(ChatResponse {
                content,
                usage,
                backend_id: self.id.clone(),
            }),
            Err(e) => Attempt::Fail(e),
        }
    }
}

fn parse_completion(text: &str, request: &ChatRequest) -> Result<(String, Usage), BackendError> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?
        .to_string();
    let field = |name: &str| v.pointer(&format!("/usage/{name}")).and_then(Value::as_u64);
    let usage = Usage {
        prompt_tokens: field("prompt_tokens")
            .unwrap_or_else(|| token_proxy(&request.full_text()) as u64),
        completion_tokens: field("completion_tokens")
            .unwrap_or_else(|| token_proxy(&content) as u64),
    };
    Ok((content, usage))
}

impl ChatBackend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(
        &self,
        key: &RequestKey,
        request: &ChatRequest,
    ) -> Result<ChatResponse, BackendError> {
        let body = request_body(&self.settings.model, request);
        let _permit = self.gate.acquire();
        let attempts = self.settings.max_retries + 1;
        let mut last: Option<(BackendError, Option<u64>)> = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = match &last {
                    Some((_, Some(after))) => (*after).min(MAX_BACKOFF_MS),
                    _ => self.backoff_ms(attempt - 1),
                };
                debug!(%key, attempt, wait_ms = wait, "retrying");
                thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&body, request) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e, after) => {
                    warn!(%key, attempt = attempt + 1, error = %e, "transient backend failure");
                    last = Some((e, after));
                }
            }
        }
        Err(match last.map(|(e, _)| e) {
            Some(BackendError::Transport { detail, .. }) => {
                BackendError::Transport { attempts, detail }
            }
            Some(other) => other,
            None => BackendError::Transport {
                attempts,
                detail: "no attempt made".into(),
            },
        })
    }
}
