//! Live backend against a local canned HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use radx_core::llm_client::{
    load_cassette, BackendMode, CassetteWriter, ChatBackend, LiveBackend, LlmClient, LlmError,
    RetryPolicy,
};
use radx_core::PromptText;

struct Canned {
    status: u16,
    body: String,
}

/// Serves the canned responses in order, one per connection, and records
/// the request bodies.
fn serve(responses: Vec<Canned>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let requests: Arc<Mutex<Vec<String>>> = Arc::default();
    let log = requests.clone();
    thread::spawn(move || {
        for canned in responses {
            let (stream, _) = listener.accept().unwrap();
            let body = read_request(&stream);
            log.lock().unwrap().push(body);
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                canned.status,
                canned.body.len(),
                canned.body
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), requests)
}

fn read_request(stream: &TcpStream) -> String {
    let mut reader = BufReader::new(stream);
    let mut content_length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn ok_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

fn prompt() -> PromptText {
    PromptText {
        report_id: "R1".into(),
        template_name: "base".into(),
        body: "Report ID: R1\n\nnodule".into(),
    }
}

fn client(url: &str, max_retries: u32) -> LlmClient {
    let backend = LiveBackend::new(url, Some("test-model".into()), Some(0.0), "secret").unwrap();
    LlmClient::with_backend(
        BackendMode::Live,
        Box::new(backend),
        RetryPolicy {
            max_retries,
            backoff_ms: 1,
        },
    )
}

#[test]
fn sends_single_user_message() {
    let (url, requests) = serve(vec![Canned {
        status: 200,
        body: ok_body("1. Tumor location: right upper lobe"),
    }]);
    let backend = LiveBackend::new(&url, Some("test-model".into()), Some(0.2), "secret").unwrap();
    let reply = backend.send("hello").unwrap();
    assert_eq!(reply, "1. Tumor location: right upper lobe");
    let sent: serde_json::Value = serde_json::from_str(&requests.lock().unwrap()[0]).unwrap();
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["temperature"], 0.2);
    assert_eq!(sent["messages"].as_array().unwrap().len(), 1);
    assert_eq!(sent["messages"][0]["role"], "user");
    assert_eq!(sent["messages"][0]["content"], "hello");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, requests) = serve(vec![
        Canned {
            status: 503,
            body: "{}".into(),
        },
        Canned {
            status: 429,
            body: "{}".into(),
        },
        Canned {
            status: 200,
            body: ok_body("done"),
        },
    ]);
    let exchange = client(&url, 3).complete(&prompt()).unwrap();
    assert_eq!(exchange.response_body, "done");
    assert_eq!(exchange.attempt_count, 3);
    assert!(exchange.digest_matches());
    assert_eq!(requests.lock().unwrap().len(), 3);
}

#[test]
fn transport_error_after_max_retries() {
    let (url, requests) = serve(vec![
        Canned {
            status: 500,
            body: "{}".into(),
        },
        Canned {
            status: 500,
            body: "{}".into(),
        },
        Canned {
            status: 500,
            body: "{}".into(),
        },
    ]);
    let err = client(&url, 2).complete(&prompt()).unwrap_err();
    assert!(
        matches!(err, LlmError::Transport { attempts: 3, .. }),
        "{err}"
    );
    assert_eq!(requests.lock().unwrap().len(), 3);
}

#[test]
fn auth_rejection_is_not_retried() {
    let (url, requests) = serve(vec![
        Canned {
            status: 401,
            body: "{\"error\":\"bad key\"}".into(),
        },
        Canned {
            status: 200,
            body: ok_body("unreachable"),
        },
    ]);
    let err = client(&url, 5).complete(&prompt()).unwrap_err();
    assert!(matches!(err, LlmError::Auth(_)));
    assert_eq!(requests.lock().unwrap().len(), 1);
}

#[test]
fn connection_refused_is_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let err = client(&url, 1).complete(&prompt()).unwrap_err();
    assert!(
        matches!(err, LlmError::Transport { attempts: 2, .. }),
        "{err}"
    );
}

#[test]
fn live_success_is_appended_to_cassette() {
    let (url, _) = serve(vec![Canned {
        status: 200,
        body: ok_body("recorded"),
    }]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("live.jsonl");
    let client = client(&url, 0).recording_to(CassetteWriter::append_to(&path).unwrap());
    let exchange = client.complete(&prompt()).unwrap();
    let cassette = load_cassette(&path).unwrap();
    assert_eq!(cassette.get(&exchange.prompt_digest), Some(&exchange));
}

#[test]
fn malformed_body_is_reported() {
    let (url, _) = serve(vec![Canned {
        status: 200,
        body: "{\"choices\":[]}".into(),
    }]);
    assert!(matches!(
        client(&url, 0).complete(&prompt()),
        Err(LlmError::BadResponse(_))
    ));
}
