//! Live transport against an in-process HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde_json::Value;
use sindy_agent::llm::{
    chat_image, ChatRequest, ImagePayload, LiveConfig, LiveTransport, LlmError, RetryPolicy,
    Transport,
};

struct Captured {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let _ = tx.send(Captured {
                path,
                auth,
                body: serde_json::from_slice(&body).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), rx)
}

fn transport(base: String, retries: u32) -> LiveTransport {
    let mut c = LiveConfig::new(base, "test-model");
    c.api_key = Some("secret".into());
    c.timeout = Duration::from_secs(5);
    c.retry = RetryPolicy {
        max_retries: retries,
        initial_delay: Duration::ZERO,
    };
    LiveTransport::new(c).unwrap()
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hi there"}}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#;

#[test]
fn chat_retries_server_errors_and_speaks_the_wire_format() {
    let (base, rx) = serve(vec![(500, "{}".into()), (503, "{}".into()), (200, OK.into())]);
    let t = transport(base, 3);
    let r = t.chat(&ChatRequest::generation("hello", "run/iter1/sample0")).unwrap();
    assert_eq!(r.text, "hi there");
    assert_eq!((r.usage.prompt_tokens, r.usage.completion_tokens), (7, 2));
    let reqs: Vec<Captured> = rx.iter().take(3).collect();
    for c in &reqs {
        assert_eq!(c.path, "/v1/chat/completions");
        assert_eq!(c.auth.as_deref(), Some("Bearer secret"));
        assert_eq!(c.body["model"], "test-model");
        assert_eq!(c.body["temperature"], 0.7);
        assert_eq!(c.body["max_tokens"], 4096);
        assert_eq!(c.body["messages"][0]["role"], "user");
        assert_eq!(c.body["messages"][0]["content"], "hello");
    }
    assert_eq!(t.usage().requests, 1);
}

#[test]
fn retries_are_bounded_and_errors_carry_the_correlation_id() {
    let (base, _rx) = serve(vec![(500, "a".into()), (500, "b".into())]);
    let t = transport(base, 1);
    let e = t.chat(&ChatRequest::summary("x", "cid-42")).unwrap_err();
    assert!(matches!(e, LlmError::Http { status: 500, .. }), "{e:?}");
    assert_eq!(e.correlation_id(), Some("cid-42"));
}

#[test]
fn client_errors_are_not_retried() {
    let (base, rx) = serve(vec![(400, "bad".into()), (200, OK.into())]);
    let t = transport(base, 3);
    let e = t.chat(&ChatRequest::generation("x", "c")).unwrap_err();
    assert!(matches!(e, LlmError::Http { status: 400, .. }));
    assert_eq!(rx.recv_timeout(Duration::from_secs(1)).unwrap().path, "/v1/chat/completions");
    assert!(rx.recv_timeout(Duration::from_millis(200)).is_err());
}

#[test]
fn image_requests_use_content_parts() {
    let (base, rx) = serve(vec![(200, OK.into())]);
    let t = transport(base, 0);
    let img = ImagePayload::png(vec![1, 2, 3]);
    chat_image(&t, ChatRequest::summary("describe", "img"), img).unwrap();
    let c = rx.recv().unwrap();
    assert_eq!(c.body["temperature"], 1.0);
    let parts = c.body["messages"][0]["content"].as_array().unwrap();
    assert_eq!(parts[0]["type"], "text");
    assert_eq!(parts[1]["image_url"]["url"], "data:image/png;base64,AQID");
}

#[test]
fn embeddings_are_reordered_by_index() {
    let reply = r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#;
    let (base, rx) = serve(vec![(200, reply.into())]);
    let t = transport(base, 0);
    let v = t.embed(&["a".into(), "b".into()], "e").unwrap();
    assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let c = rx.recv().unwrap();
    assert_eq!(c.path, "/v1/embeddings");
    assert_eq!(c.body["input"][1], "b");
}

#[test]
fn unreachable_server_times_out_finitely() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let mut c = LiveConfig::new(format!("http://{addr}"), "m");
    c.timeout = Duration::from_millis(300);
    c.retry = RetryPolicy { max_retries: 0, initial_delay: Duration::ZERO };
    let t = LiveTransport::new(c).unwrap();
    let start = std::time::Instant::now();
    let e = t.chat(&ChatRequest::generation("x", "slow")).unwrap_err();
    assert!(start.elapsed() < Duration::from_secs(5));
    assert!(matches!(e, LlmError::Timeout { .. } | LlmError::Network { .. }), "{e:?}");
    drop(listener);
}
