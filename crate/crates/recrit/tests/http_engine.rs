//! HTTP engine tests against a local canned chat-completion server.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;

use recrit::rollout::http::{HttpEngine, HttpEngineConfig};
use recrit::rollout::{GenerationEngine, GenerationRequest};
use recrit::types::{FinishReason, Stage};

/// Serves `n` requests, each answered with `body` under `status`.
fn canned_server(n: usize, status: u16, body: String) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for _ in 0..n {
            let (mut stream, _) = match listener.accept() {
                Ok(s) => s,
                Err(_) => return,
            };
            // Read headers, then exactly Content-Length body bytes.
            let mut buf = Vec::new();
            let mut chunk = [0u8; 1024];
            let header_end = loop {
                let read = stream.read(&mut chunk).unwrap();
                if read == 0 {
                    break None;
                }
                buf.extend_from_slice(&chunk[..read]);
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    break Some(pos + 4);
                }
            };
            let Some(header_end) = header_end else { continue };
            let headers = String::from_utf8_lossy(&buf[..header_end]).to_lowercase();
            let content_length: usize = headers
                .lines()
                .find_map(|l| l.strip_prefix("content-length:"))
                .and_then(|v| v.trim().parse().ok())
                .unwrap_or(0);
            while buf.len() < header_end + content_length {
                let read = stream.read(&mut chunk).unwrap();
                if read == 0 {
                    break;
                }
                buf.extend_from_slice(&chunk[..read]);
            }
            let reason = match status {
                200 => "OK",
                _ => "Error",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\n\
                 Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    format!("http://{addr}")
}

fn request(slot: usize) -> GenerationRequest {
    GenerationRequest {
        slot,
        stage: Stage::Initial,
        prompt: "pick the right option".into(),
        max_tokens: 64,
        temperature: 1.0,
        attitude: None,
    }
}

fn engine(base_url: String) -> HttpEngine {
    let config = HttpEngineConfig {
        model: "test-model".into(),
        concurrency: 2,
        timeout_secs: 5,
    };
    HttpEngine::new(config, base_url, Some("test-key".into())).unwrap()
}

fn drain(engine: &mut HttpEngine, n: usize) -> Vec<recrit::rollout::Completion> {
    let mut out = Vec::new();
    while out.len() < n {
        let batch = engine.poll();
        assert!(!batch.is_empty(), "poll returned empty with requests outstanding");
        out.extend(batch);
    }
    out
}

#[test]
fn completes_requests_and_maps_fields() {
    let body = serde_json::json!({
        "choices": [{
            "message": {"role": "assistant", "content": "<think>quick check</think>\nB"},
            "finish_reason": "stop"
        }],
        "usage": {"completion_tokens": 12}
    })
    .to_string();
    let url = canned_server(3, 200, body);
    let mut e = engine(url);
    for slot in 0..3 {
        e.submit(request(slot));
    }
    let mut completions = drain(&mut e, 3);
    completions.sort_by_key(|c| c.slot);
    for (slot, c) in completions.iter().enumerate() {
        assert_eq!(c.slot, slot);
        assert_eq!(c.solution.text, "<think>quick check</think>\nB");
        assert_eq!(c.solution.finish_reason, FinishReason::Complete);
        assert_eq!(c.solution.token_count, Some(12));
        assert!(c.latency >= 0.0);
    }
}

#[test]
fn length_finish_reason_is_mapped() {
    let body = serde_json::json!({
        "choices": [{
            "message": {"role": "assistant", "content": "truncated reasoning"},
            "finish_reason": "length"
        }]
    })
    .to_string();
    let url = canned_server(1, 200, body);
    let mut e = engine(url);
    e.submit(request(0));
    let c = drain(&mut e, 1).remove(0);
    assert_eq!(c.solution.finish_reason, FinishReason::LengthBudget);
    assert_eq!(c.solution.token_count, None);
}

#[test]
fn server_errors_surface_as_engine_errors() {
    let url = canned_server(2, 500, r#"{"error": "overloaded"}"#.to_string());
    let mut e = engine(url);
    e.submit(request(0));
    e.submit(request(1));
    for c in drain(&mut e, 2) {
        assert_eq!(c.solution.finish_reason, FinishReason::EngineError);
        assert!(c.solution.text.is_empty());
    }
}

#[test]
fn unreachable_host_fails_per_request_without_panicking() {
    // Port 1 on localhost refuses connections.
    let mut e = engine("http://127.0.0.1:1".into());
    e.submit(request(0));
    let c = drain(&mut e, 1).remove(0);
    assert_eq!(c.solution.finish_reason, FinishReason::EngineError);
}
