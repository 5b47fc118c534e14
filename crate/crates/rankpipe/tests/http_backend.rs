//! HTTP backend tests against a minimal in-process fixture server that
//! replays hand-written exchanges.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread::JoinHandle;
use std::time::Duration;

use rankpipe::backend::{Backend, BackendError, HttpBackend};
use rankpipe::rerank::build_prompt;
use rankpipe::types::IdentifierScheme;

/// One recorded request: path and parsed JSON body.
type Recorded = (String, serde_json::Value);

fn read_http_request(stream: &mut TcpStream) -> (String, Vec<u8>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    reader.read_line(&mut request_line).unwrap();
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().unwrap();
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).unwrap();
    (path, body)
}

/// Serves the scripted `(status, body)` responses, one per connection, then
/// returns everything it was asked.
fn spawn_fixture_server(responses: Vec<(u16, String)>) -> (String, JoinHandle<Vec<Recorded>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut recorded = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let (path, request_body) = read_http_request(&mut stream);
            let parsed = serde_json::from_slice(&request_body).unwrap_or(serde_json::Value::Null);
            recorded.push((path, parsed));
            let response = format!(
                "HTTP/1.1 {status} FIXTURE\r\ncontent-type: application/json\r\n\
                 content-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
        recorded
    });
    (format!("http://{addr}"), handle)
}

fn window(passages: &[&str]) -> rankpipe::backend::PromptWindow {
    let scheme = IdentifierScheme::uppercase(26).unwrap();
    build_prompt(
        "what is tested here",
        &passages.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        &scheme,
        1000,
    )
    .unwrap()
}

#[test]
fn logits_mode_replays_the_fixture_map() {
    let (url, server) = spawn_fixture_server(vec![(
        200,
        r#"{"logits": {"A": -1.2, "B": -0.3, "C": -2.4}}"#.to_string(),
    )]);
    let backend = HttpBackend::new(url, Duration::from_secs(5), 0);

    let logits = backend.first_token_logits(&window(&["p0", "p1", "p2"])).unwrap();
    assert_eq!(logits.scores[&'A'], -1.2);
    assert_eq!(logits.scores[&'B'], -0.3);
    assert_eq!(logits.scores[&'C'], -2.4);

    let recorded = server.join().unwrap();
    assert_eq!(recorded.len(), 1);
    let (path, body) = &recorded[0];
    assert_eq!(path, "/v1/rerank_window");
    assert_eq!(body["mode"], "logits");
    assert_eq!(body["max_tokens"], 1);
    assert_eq!(body["identifiers"], serde_json::json!(["A", "B", "C"]));
    assert!(body["prompt"].as_str().unwrap().contains("A. p0"));
}

#[test]
fn generate_mode_returns_text_and_decode_steps() {
    let (url, server) = spawn_fixture_server(vec![(
        200,
        r#"{"text": "B > A", "decode_steps": 3}"#.to_string(),
    )]);
    let backend = HttpBackend::new(url, Duration::from_secs(5), 0);

    let output = backend.generate_permutation(&window(&["p0", "p1"])).unwrap();
    assert_eq!(output.raw_text, "B > A");
    assert_eq!(output.decode_steps, 3);

    let recorded = server.join().unwrap();
    assert_eq!(recorded[0].1["mode"], "generate");
    assert_eq!(recorded[0].1["max_tokens"], 4);
}

#[test]
fn identifier_check_reports_multi_token_identifiers() {
    let (url, server) =
        spawn_fixture_server(vec![(200, r#"{"violations": ["T"]}"#.to_string())]);
    let backend = HttpBackend::new(url, Duration::from_secs(5), 0);

    let violations = backend.check_identifiers(&IdentifierScheme::default()).unwrap();
    assert_eq!(violations, vec!["T".to_string()]);

    let recorded = server.join().unwrap();
    assert_eq!(recorded[0].0, "/v1/check_identifiers");
    assert_eq!(recorded[0].1["identifiers"].as_array().unwrap().len(), 20);
}

#[test]
fn non_2xx_is_a_transport_error() {
    let (url, server) =
        spawn_fixture_server(vec![(500, r#"{"error": "backend exploded"}"#.to_string())]);
    let backend = HttpBackend::new(url, Duration::from_secs(5), 0);

    let err = backend.first_token_logits(&window(&["p0"])).unwrap_err();
    assert!(matches!(err, BackendError::Transport(msg) if msg.contains("500")));
    server.join().unwrap();
}

#[test]
fn malformed_body_is_rejected_not_reordered() {
    let (url, server) = spawn_fixture_server(vec![(200, "not json at all".to_string())]);
    let backend = HttpBackend::new(url, Duration::from_secs(5), 0);

    let err = backend.first_token_logits(&window(&["p0"])).unwrap_err();
    assert!(matches!(err, BackendError::MalformedResponse(_)));
    server.join().unwrap();
}

#[test]
fn missing_identifier_in_logits_is_rejected() {
    let (url, server) =
        spawn_fixture_server(vec![(200, r#"{"logits": {"A": 0.5}}"#.to_string())]);
    let backend = HttpBackend::new(url, Duration::from_secs(5), 0);

    let err = backend.first_token_logits(&window(&["p0", "p1"])).unwrap_err();
    assert!(matches!(err, BackendError::MalformedResponse(_)));
    server.join().unwrap();
}

#[test]
fn unreachable_backend_fails_after_retries() {
    // Bind then drop to get a port that refuses connections.
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let backend =
        HttpBackend::new(format!("http://127.0.0.1:{port}"), Duration::from_millis(500), 2);
    let err = backend.first_token_logits(&window(&["p0"])).unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)));
}
