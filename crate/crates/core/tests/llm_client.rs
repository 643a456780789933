use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use llmser::llmio::{ChatRequest, LlmClient, LlmConfig, Transport};
use llmser::Error;

/// Records the largest number of simultaneous `send` calls.
struct Gauge {
    in_flight: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    calls: Arc<AtomicUsize>,
}

impl Transport for Gauge {
    fn send(&self, request: &ChatRequest) -> Result<String, String> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(15));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        Ok(format!("[{}]", request.prompt().len() % 7))
    }
}

fn config(limit: usize) -> LlmConfig {
    LlmConfig {
        model_name: "test-model".into(),
        max_retries: 0,
        backoff_base: 0.0,
        concurrency_limit: limit,
        ..LlmConfig::default()
    }
}

#[test]
fn concurrent_requests_never_exceed_the_limit() {
    for limit in [1, 3] {
        let peak = Arc::new(AtomicUsize::new(0));
        let calls = Arc::new(AtomicUsize::new(0));
        let client = LlmClient::new(
            config(limit),
            Box::new(Gauge {
                in_flight: Arc::new(AtomicUsize::new(0)),
                peak: peak.clone(),
                calls: calls.clone(),
            }),
        )
        .unwrap();
        thread::scope(|s| {
            for t in 0..12 {
                let client = &client;
                s.spawn(move || client.complete(&format!("prompt {t}")).unwrap());
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 12);
        let p = peak.load(Ordering::SeqCst);
        assert!(p <= limit, "peak {p} above limit {limit}");
        assert!(p >= limit.min(2), "limit {limit} never reached (peak {p})");
    }
}

#[test]
fn warm_cache_issues_no_remote_calls() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = LlmConfig {
        cache_path: Some(dir.path().join("cache.jsonl")),
        ..config(2)
    };
    let gauge = || Gauge {
        in_flight: Arc::new(AtomicUsize::new(0)),
        peak: Arc::new(AtomicUsize::new(0)),
        calls: Arc::new(AtomicUsize::new(0)),
    };
    let prompts: Vec<String> = (0..5).map(|i| format!("question {i}")).collect();
    let cold = LlmClient::new(cfg.clone(), Box::new(gauge())).unwrap();
    let first: Vec<String> = prompts.iter().map(|p| cold.complete(p).unwrap()).collect();
    assert_eq!(cold.remote_attempts(), 5);
    drop(cold);
    let warm = LlmClient::new(cfg, Box::new(gauge())).unwrap();
    let second: Vec<String> = prompts.iter().map(|p| warm.complete(p).unwrap()).collect();
    assert_eq!(first, second);
    assert_eq!(warm.remote_attempts(), 0);
    assert_eq!(warm.cache_hits(), 5);
}

struct Captured {
    request_line: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection and returns what it
/// received.
fn serve(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<Captured>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0u8; length];
            reader.read_exact(&mut buf).unwrap();
            seen.push(Captured {
                request_line: request_line.trim_end().to_string(),
                authorization,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
        seen
    });
    (url, handle)
}

#[test]
fn http_transport_speaks_chat_completions_and_retries() {
    let ok = r#"{"choices":[{"message":{"role":"assistant","content":"[2, 5]"}}]}"#;
    let (url, server) = serve(vec![(500, "{}".into()), (200, ok.into())]);
    std::env::set_var("LLMSER_WIRE_TEST_KEY", "secret-token");
    let cfg = LlmConfig {
        endpoint_url: url,
        api_key_env: "LLMSER_WIRE_TEST_KEY".into(),
        max_retries: 2,
        temperature: 0.0,
        ..config(1)
    };
    let client = LlmClient::http(cfg).unwrap();
    assert_eq!(client.complete("pick two").unwrap(), "[2, 5]");
    assert_eq!(client.remote_attempts(), 2);
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 2);
    for c in &seen {
        assert_eq!(c.request_line, "POST /v1/chat/completions HTTP/1.1");
        assert_eq!(c.authorization.as_deref(), Some("Bearer secret-token"));
        assert_eq!(c.body["model"], "test-model");
        assert_eq!(c.body["temperature"], 0.0);
        assert_eq!(c.body["messages"][0]["role"], "user");
        assert_eq!(c.body["messages"][0]["content"], "pick two");
    }
}

#[test]
fn persistent_http_failure_is_a_transport_error() {
    let (url, server) = serve(vec![(503, "{}".into()), (503, "{}".into())]);
    let cfg = LlmConfig {
        endpoint_url: url,
        max_retries: 1,
        ..config(1)
    };
    let client = LlmClient::http(cfg).unwrap();
    match client.complete("anything") {
        Err(Error::Transport { attempts, message }) => {
            assert_eq!(attempts, 2);
            assert!(message.contains("503"), "{message}");
        }
        other => panic!("expected transport error, got {other:?}"),
    }
    server.join().unwrap();
}
