use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use leckg::llm::{CallTag, ChatRequest, GatewayError, HttpClient, HttpConfig, LlmClient};

/// Serves the given (status, body) replies in order, one per connection.
fn stub(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, Arc<std::sync::Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
    let (h, s) = (hits.clone(), seen.clone());
    std::thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            s.lock().unwrap().push(format!("{head}\n{}", String::from_utf8_lossy(&buf)));
            h.fetch_add(1, Ordering::SeqCst);
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = reader.get_mut().write_all(resp.as_bytes());
        }
    });
    (url, hits, seen)
}

fn config(url: &str) -> HttpConfig {
    HttpConfig {
        base_url: url.to_string(),
        max_attempts: 3,
        backoff_ms: 1,
        timeout_secs: 5,
        ..HttpConfig::default()
    }
}

fn req() -> ChatRequest {
    ChatRequest::new(CallTag::Extract, "sys", "user text")
}

const OK: &str = r#"{"choices":[{"message":{"content":"[]"}}],"usage":{"prompt_tokens":7,"completion_tokens":1}}"#;

#[test]
fn success_reads_content_and_usage() {
    let (url, hits, seen) = stub(vec![(200, OK.into())]);
    let c = HttpClient::new(config(&url)).unwrap().with_api_key("k1").complete(&req()).unwrap();
    assert_eq!(c.text, "[]");
    assert_eq!((c.prompt_tokens, c.completion_tokens), (7, 1));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    let raw = seen.lock().unwrap()[0].clone();
    assert!(raw.starts_with("POST /chat/completions"));
    assert!(raw.to_ascii_lowercase().contains("authorization: bearer k1"));
    assert!(raw.contains("user text"));
}

#[test]
fn unauthorized_fails_without_retry() {
    let (url, hits, _) = stub(vec![(401, "{}".into()), (200, OK.into())]);
    let err = HttpClient::new(config(&url)).unwrap().complete(&req()).unwrap_err();
    assert!(matches!(err, GatewayError::Auth(_)), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn server_errors_are_retried() {
    let (url, hits, _) = stub(vec![(503, "{}".into()), (500, "{}".into()), (200, OK.into())]);
    assert_eq!(HttpClient::new(config(&url)).unwrap().complete(&req()).unwrap().text, "[]");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn rate_limit_surfaces_after_attempts() {
    let (url, hits, _) = stub(vec![(429, "{}".into()); 3]);
    let err = HttpClient::new(config(&url)).unwrap().complete(&req()).unwrap_err();
    assert!(matches!(err, GatewayError::RateLimited { attempts: 3 }), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = HttpClient::new(config(&format!("http://127.0.0.1:{port}")))
        .unwrap()
        .complete(&req())
        .unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }), "{err:?}");
}

#[test]
fn missing_endpoint_is_config_error() {
    assert!(matches!(HttpClient::new(HttpConfig::default()), Err(GatewayError::Config(_))));
}
