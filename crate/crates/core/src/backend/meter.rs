use std::collections::BTreeMap;
use std::sync::Mutex;

use super::{
    request_body, BackendError, ChatBackend, ChatRequest, ChatResponse, Purpose, RequestKey,
};

/// A call seen by [`CallLog`], with the exact JSON body a live backend
/// would have sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedCall {
    pub key: RequestKey,
    pub body: String,
}

/// Wraps a backend and counts calls per purpose. Optionally records request
/// bodies for auditing.
#[derive(Debug)]
pub struct CallLog<B> {
    inner: B,
    counts: Mutex<BTreeMap<Purpose, u64>>,
    recorded: Option<Mutex<Vec<RecordedCall>>>,
}

impl<B: ChatBackend> CallLog<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            counts: Mutex::new(BTreeMap::new()),
            recorded: None,
        }
    }

    pub fn recording(inner: B) -> Self {
        Self {
            recorded: Some(Mutex::new(Vec::new())),
            ..Self::new(inner)
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn count(&self, purpose: Purpose) -> u64 {
        self.counts
            .lock()
            .expect("counts lock")
            .get(&purpose)
            .copied()
            .unwrap_or(0)
    }

    pub fn counts(&self) -> BTreeMap<Purpose, u64> {
        self.counts.lock().expect("counts lock").clone()
    }

    /// Calls that produced (or tried to produce) a candidate solution.
    pub fn generation_calls(&self) -> u64 {
        self.counts()
            .into_iter()
            .filter(|(p, _)| p.is_generation())
            .map(|(_, n)| n)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts().values().sum()
    }

    pub fn recorded(&self) -> Vec<RecordedCall> {
        self.recorded
            .as_ref()
            .map(|r| r.lock().expect("record lock").clone())
            .unwrap_or_default()
    }
}

impl<B: ChatBackend> ChatBackend for CallLog<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(
        &self,
        key: &RequestKey,
        request: &ChatRequest,
    ) -> Result<ChatResponse, BackendError> {
        *self
            .counts
            .lock()
            .expect("counts lock")
            .entry(key.purpose)
            .or_default() += 1;
        if let Some(rec) = &self.recorded {
            let body = request_body(self.inner.id(), request).to_string();
            rec.lock().expect("record lock").push(RecordedCall {
                key: key.clone(),
                body,
            });
        }
        self.inner.complete(key, request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Script, ScriptedBackend};
    use crate::domain::Sampling;

    #[test]
    fn counts_by_purpose_including_failures() {
        let k = RequestKey::new("p", Purpose::Solve, 1, 0);
        let log = CallLog::recording(ScriptedBackend::new(Script::new().with(&k, "x")));
        let req = ChatRequest::new(None, "body text", &Sampling::default());
        log.complete(&k, &req).unwrap();
        assert!(log
            .complete(&RequestKey::new("p", Purpose::Reflect, 1, 0), &req)
            .is_err());
        assert_eq!(log.count(Purpose::Solve), 1);
        assert_eq!(log.count(Purpose::Reflect), 1);
        assert_eq!(log.generation_calls(), 1);
        assert_eq!(log.total(), 2);
        let rec = log.recorded();
        assert_eq!(rec.len(), 2);
        assert!(rec[0].body.contains("body text"));
    }
}
