//! The OpenAI-compatible client against a local one-shot HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::Value;
use trt::backend::{BackendError, ChatBackend, ChatRequest, OpenAiBackend, Purpose, RequestKey};
use trt::domain::{LiveSettings, Sampling};

struct Captured {
    headers: Vec<String>,
    body: String,
}

/// Serves `replies` in order, one connection each, recording every request.
fn serve(replies: Vec<String>) -> (String, Arc<Mutex<Vec<Captured>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = std::thread::spawn(move || {
        for reply in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Captured {
                headers,
                body: String::from_utf8(body).unwrap(),
            });
            let mut stream = stream;
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen, handle)
}

fn reply(status: &str, extra: &str, body: &str) -> String {
    format!(
        "HTTP/1.1 {status}\r\ncontent-type: application/json\r\n{extra}content-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    )
}

fn ok(content: &str) -> String {
    let body = serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3}
    });
    reply("200 OK", "", &body.to_string())
}

fn settings(url: &str) -> LiveSettings {
    let mut s = LiveSettings::new(url, "test-model");
    s.initial_backoff_ms = 1;
    s.max_retries = 2;
    s.timeout_ms = 5_000;
    s
}

fn request() -> (RequestKey, ChatRequest) {
    let key = RequestKey::new("p1", Purpose::Solve, 1, 1);
    let req =
        ChatRequest::new(Some("be brief"), "What is 2+2?", &Sampling::default()).with_seed(42);
    (key, req)
}

#[test]
fn sends_openai_body_with_auth_and_parses_reply() {
    let (url, seen, h) = serve(vec![ok("[Answer]: \\boxed{4}")]);
    let backend = OpenAiBackend::new(settings(&url), Some("sk-test".into())).unwrap();
    let (key, req) = request();
    let resp = backend.complete(&key, &req).unwrap();
    h.join().unwrap();
    assert_eq!(resp.content, "[Answer]: \\boxed{4}");
    assert_eq!(
        (resp.usage.prompt_tokens, resp.usage.completion_tokens),
        (11, 3)
    );

    let seen = seen.lock().unwrap();
    let c = &seen[0];
    assert!(c.headers[0].starts_with("POST /v1/chat/completions"));
    assert!(c
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer sk-test")));
    let body: Value = serde_json::from_str(&c.body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["seed"], 42);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "What is 2+2?");
}

#[test]
fn retries_rate_limits_and_server_errors() {
    let (url, seen, h) = serve(vec![
        reply("429 Too Many Requests", "retry-after: 0\r\n", "{}"),
        reply("503 Service Unavailable", "", "busy"),
        ok("done"),
    ]);
    let backend = OpenAiBackend::new(settings(&url), None).unwrap();
    let (key, req) = request();
    let resp = backend.complete(&key, &req).unwrap();
    h.join().unwrap();
    assert_eq!(resp.content, "done");
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert!(seen.lock().unwrap()[0]
        .headers
        .iter()
        .all(|h| !h.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn gives_up_after_the_retry_budget() {
    let busy = || reply("500 Internal Server Error", "", "oops");
    let (url, seen, h) = serve(vec![busy(), busy(), busy()]);
    let backend = OpenAiBackend::new(settings(&url), None).unwrap();
    let (key, req) = request();
    let err = backend.complete(&key, &req).unwrap_err();
    h.join().unwrap();
    assert!(
        matches!(err, BackendError::Http { status: 500, .. }),
        "{err:?}"
    );
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_and_malformed_replies_fail_without_retry() {
    let (url, seen, h) = serve(vec![
        reply("400 Bad Request", "", "{\"error\":\"bad\"}"),
        reply("200 OK", "", "{\"choices\": []}"),
    ]);
    let backend = OpenAiBackend::new(settings(&url), None).unwrap();
    let (key, req) = request();
    let err = backend.complete(&key, &req).unwrap_err();
    assert!(
        matches!(err, BackendError::Http { status: 400, .. }),
        "{err:?}"
    );
    let err = backend.complete(&key, &req).unwrap_err();
    assert!(matches!(err, BackendError::Malformed(_)), "{err:?}");
    h.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn missing_usage_falls_back_to_token_proxy() {
    let body = serde_json::json!({"choices": [{"message": {"content": "one two three"}}]});
    let (url, _, h) = serve(vec![reply("200 OK", "", &body.to_string())]);
    let backend = OpenAiBackend::new(settings(&url), None).unwrap();
    let (key, req) = request();
    let resp = backend.complete(&key, &req).unwrap();
    h.join().unwrap();
    assert!(resp.usage.prompt_tokens > 0);
    assert!(resp.usage.completion_tokens > 0);
}
