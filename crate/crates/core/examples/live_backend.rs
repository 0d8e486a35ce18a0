//! One request to an OpenAI-compatible endpoint. Reads `TRT_API_BASE`,
//! `TRT_API_KEY` and optionally `TRT_MODEL`; does nothing without a base URL.
//!
//! TRT_API_BASE=http://localhost:8000/v1 cargo run -p trt --example live_backend

use trt::backend::{ChatBackend, ChatRequest, OpenAiBackend, Purpose, RequestKey, API_BASE_ENV};
use trt::domain::{LiveSettings, Sampling};

fn main() {
    if std::env::var(API_BASE_ENV).is_err() {
        eprintln!("set {API_BASE_ENV} (and TRT_API_KEY if needed) to try a live endpoint");
        return;
    }
    let model = std::env::var("TRT_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into());
    let backend = OpenAiBackend::from_env(LiveSettings::new("", model)).expect("client builds");
    let request = ChatRequest::new(
        Some("Answer with a single integer in \\boxed{}."),
        "What is 17 * 23?",
        &Sampling::default(),
    );
    let key = RequestKey::new("live-demo", Purpose::Solve, 1, 1);
    match backend.complete(&key, &request) {
        Ok(r) => println!(
            "{}\n({} prompt / {} completion tokens)",
            r.content, r.usage.prompt_tokens, r.usage.completion_tokens
        ),
        Err(e) => eprintln!("request failed: {e}"),
    }
}
