use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Purpose, RequestKey};
use crate::domain::{token_proxy, Usage};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("script line {line}: bad key `{key}`: {reason}")]
    BadKey {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("script line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One scripted reply. `key` is either the 32-hex request hash or the
/// readable `problem/purpose/round/index` form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub key: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

fn parse_readable_key(key: &str) -> Result<RequestKey, String> {
    let mut parts = key.rsplitn(4, '/');
    let index = parts.next().ok_or("missing index")?;
    let round = parts.next().ok_or("missing round")?;
    let purpose = parts.next().ok_or("missing purpose")?;
    let problem = parts.next().ok_or("missing problem id")?;
    Ok(RequestKey::new(
        problem,
        purpose.parse::<Purpose>()?,
        round.parse().map_err(|_| format!("bad round `{round}`"))?,
        index.parse().map_err(|_| format!("bad index `{index}`"))?,
    ))
}

fn normalize_key(key: &str) -> Result<String, String> {
    if key.contains('/') {
        return Ok(parse_readable_key(key)?.hash());
    }
    if key.len() == 32 && key.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Ok(key.to_ascii_lowercase());
    }
    Err("expected a 32-hex hash or problem/purpose/round/index".into())
}

/// Replies keyed by request hash.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    entries: BTreeMap<String, ScriptEntry>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds (or replaces) the reply for `key`.
    pub fn push(&mut self, key: &RequestKey, content: impl Into<String>) -> &mut Self {
        let hash = key.hash();
        self.entries.insert(
            hash.clone(),
            ScriptEntry {
                key: hash,
                content: content.into(),
                usage: None,
            },
        );
        self
    }

    pub fn with(mut self, key: &RequestKey, content: impl Into<String>) -> Self {
        self.push(key, content);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &RequestKey) -> Option<&ScriptEntry> {
        self.entries.get(&key.hash())
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ScriptError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: ScriptEntry =
                serde_json::from_str(line).map_err(|source| ScriptError::Parse {
                    line: line_no,
                    source,
                })?;
            let hash = normalize_key(&entry.key).map_err(|reason| ScriptError::BadKey {
                line: line_no,
                key: entry.key.clone(),
                reason,
            })?;
            if entries.contains_key(&hash) {
                return Err(ScriptError::DuplicateKey {
                    line: line_no,
                    key: entry.key,
                });
            }
            entry.key = hash.clone();
            entries.insert(hash, entry);
        }
        Ok(Self { entries })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScriptError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

/// Replays a [`Script`]. Responses depend only on the request key.
#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            calls: AtomicU64::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Ok(Self::new(Script::load(path)?))
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    /// Calls served so far, including misses.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(
        &self,
        key: &RequestKey,
        request: &ChatRequest,
    ) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let entry = self
            .script
            .get(key)
            .ok_or_else(|| BackendError::ScriptExhausted {
                key: key.to_string(),
            })?;
        let usage = entry.usage.unwrap_or_else(|| Usage {
            prompt_tokens: token_proxy(&request.full_text()) as u64,
            completion_tokens: token_proxy(&entry.content) as u64,
        });
        Ok(ChatResponse {
            content: entry.content.clone(),
            usage,
            backend_id: self.id().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Sampling;

    fn req() -> ChatRequest {
        ChatRequest::new(None, "hello", &Sampling::default())
    }

    #[test]
    fn replays_by_key() {
        let k = RequestKey::new("p1", Purpose::Solve, 1, 0);
        let b = ScriptedBackend::new(Script::new().with(&k, "\\boxed{5}"));
        let r1 = b.complete(&k, &req()).unwrap();
        let r2 = b.complete(&k, &req()).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.content, "\\boxed{5}");
        assert_eq!(b.calls(), 2);
    }

    #[test]
    fn missing_key_is_exhausted() {
        let b = ScriptedBackend::new(Script::new());
        let k = RequestKey::new("p1", Purpose::Solve, 1, 0);
        assert!(matches!(
            b.complete(&k, &req()),
            Err(BackendError::ScriptExhausted { .. })
        ));
    }

    #[test]
    fn readable_and_hashed_keys_are_equivalent() {
        let k = RequestKey::new("set/p1", Purpose::Reflect, 2, 1);
        let text = format!(
            "{{\"key\":\"set/p1/reflect/2/1\",\"content\":\"a\"}}\n{{\"key\":\"{}\",\"content\":\"b\",\"usage\":{{\"prompt_tokens\":3,\"completion_tokens\":4}}}}\n",
            RequestKey::new("x", Purpose::Solve, 1, 0).hash()
        );
        let s = Script::from_jsonl(&text).unwrap();
        assert_eq!(s.get(&k).unwrap().content, "a");
        let round_trip = Script::from_jsonl(&s.to_jsonl()).unwrap();
        assert_eq!(round_trip, s);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let h = RequestKey::new("p", Purpose::Solve, 1, 0).hash();
        let text = format!(
            "{{\"key\":\"p/solve/1/0\",\"content\":\"a\"}}\n{{\"key\":\"{h}\",\"content\":\"b\"}}\n"
        );
        assert!(matches!(
            Script::from_jsonl(&text),
            Err(ScriptError::DuplicateKey { line: 2, .. })
        ));
        assert!(matches!(
            Script::from_jsonl("{\"key\":\"nope\",\"content\":\"\"}"),
            Err(ScriptError::BadKey { .. })
        ));
    }
}
