//! Wire-level tests against a throwaway HTTP/1.1 server on localhost.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use nvpersona::analysis::ClassifierBinding;
use nvpersona::llm::{
    self, ChatBackend, ChatMessage, ChatRequest, GatewayError, HttpBackend, HttpOptions,
    RetryPolicy,
};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Recorded {
    method: String,
    path: String,
    headers: Vec<(String, String)>,
    body: String,
}

impl Recorded {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

type Responder = Box<dyn Fn(usize, &Recorded) -> (u16, String) + Send>;

struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<Recorded>>>,
}

impl Stub {
    /// Serves `respond(request_number, request)` to every connection.
    fn start(respond: Responder) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (n, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { continue };
                let Some(req) = read_request(&mut stream) else { continue };
                let (status, body) = respond(n, &req);
                log.lock().unwrap().push(req);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        Stub { url, seen }
    }

    fn requests(&self) -> Vec<Recorded> {
        self.seen.lock().unwrap().clone()
    }
}

fn read_request(stream: &mut std::net::TcpStream) -> Option<Recorded> {
    stream.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    let mut r = BufReader::new(stream);
    let mut line = String::new();
    r.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        r.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':')?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    let find = |name: &str| {
        headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.clone())
    };
    let mut body = Vec::new();
    if let Some(len) = find("content-length") {
        body.resize(len.parse().ok()?, 0);
        r.read_exact(&mut body).ok()?;
    } else if find("transfer-encoding").is_some_and(|v| v.contains("chunked")) {
        loop {
            let mut size = String::new();
            r.read_line(&mut size).ok()?;
            let n = usize::from_str_radix(size.trim(), 16).ok()?;
            let mut chunk = vec![0; n + 2];
            r.read_exact(&mut chunk).ok()?;
            if n == 0 {
                break;
            }
            body.extend_from_slice(&chunk[..n]);
        }
    }
    Some(Recorded {
        method,
        path,
        headers,
        body: String::from_utf8(body).ok()?,
    })
}

fn chat_reply(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn fast_opts(max_retries: u32) -> HttpOptions {
    HttpOptions {
        timeout: Duration::from_secs(10),
        retry: RetryPolicy {
            max_retries,
            base_delay: Duration::from_millis(5),
        },
        max_concurrency: 2,
    }
}

#[test]
fn chat_request_wire_shape() {
    let stub = Stub::start(Box::new(|_, _| (200, chat_reply("Hi there!"))));
    let backend = HttpBackend::new(&stub.url, "sk-test", fast_opts(0));
    let mut req = ChatRequest::new("You are Alex.");
    req.messages.push(ChatMessage::user("Hello"));
    req.temperature = Some(0.7);
    let got = llm::complete(&req, &backend).unwrap();
    assert_eq!(got, "Hi there!");

    let seen = stub.requests();
    assert_eq!(seen.len(), 1);
    let r = &seen[0];
    assert_eq!(r.method, "POST");
    assert_eq!(r.path, "/v1/chat/completions");
    assert_eq!(r.header("authorization"), Some("Bearer sk-test"));
    assert!(r.header("content-type").unwrap().starts_with("application/json"));
    let body: Value = serde_json::from_str(&r.body).unwrap();
    assert_eq!(
        body,
        json!({
            "model": llm::DEFAULT_MODEL,
            "messages": [
                {"role": "system", "content": "You are Alex."},
                {"role": "user", "content": "Hello"}
            ],
            "temperature": 0.7
        })
    );
}

#[test]
fn retries_rate_limit_then_succeeds() {
    let stub = Stub::start(Box::new(|n, _| {
        if n < 2 {
            (429, r#"{"error":"slow down"}"#.into())
        } else {
            (200, chat_reply("ok"))
        }
    }));
    let backend = HttpBackend::new(&stub.url, "k", fast_opts(3));
    assert_eq!(llm::complete(&ChatRequest::new("s"), &backend).unwrap(), "ok");
    assert_eq!(stub.requests().len(), 3);
}

#[test]
fn gives_up_after_max_retries() {
    let stub = Stub::start(Box::new(|_, _| (503, "{}".into())));
    let backend = HttpBackend::new(&stub.url, "k", fast_opts(2));
    let err = llm::complete(&ChatRequest::new("s"), &backend).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { status: Some(503), .. }), "{err:?}");
    assert_eq!(stub.requests().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = Stub::start(Box::new(|_, _| (401, r#"{"error":"bad key"}"#.into())));
    let backend = HttpBackend::new(&stub.url, "k", fast_opts(3));
    let err = llm::complete(&ChatRequest::new("s"), &backend).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { status: Some(401), .. }));
    assert_eq!(stub.requests().len(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let stub = Stub::start(Box::new(|_, _| (200, r#"{"choices":[]}"#.into())));
    let backend = HttpBackend::new(&stub.url, "k", fast_opts(0));
    let err = llm::complete(&ChatRequest::new("s"), &backend).unwrap_err();
    assert!(matches!(err, GatewayError::MalformedResponse(_)));
}

#[test]
fn missing_key_fails_without_network() {
    let stub = Stub::start(Box::new(|_, _| (200, chat_reply("x"))));
    let var = "NVPERSONA_STUB_TEST_UNSET_KEY";
    std::env::remove_var(var);
    let err = HttpBackend::from_env(&stub.url, var, fast_opts(0)).unwrap_err();
    assert_eq!(err, GatewayError::AuthMissing(var.into()));
    std::thread::sleep(Duration::from_millis(50));
    assert!(stub.requests().is_empty());
}

#[test]
fn invalid_request_never_leaves_the_process() {
    let stub = Stub::start(Box::new(|_, _| (200, chat_reply("x"))));
    let backend = HttpBackend::new(&stub.url, "k", fast_opts(0));
    let mut req = ChatRequest::new("s");
    req.messages.clear();
    assert!(matches!(backend.complete(&req, &Default::default()), Err(GatewayError::InvalidRequest(_))));
    std::thread::sleep(Duration::from_millis(50));
    assert!(stub.requests().is_empty());
}

#[test]
fn classifier_contract() {
    let stub = Stub::start(Box::new(|_, r| {
        let body: Value = serde_json::from_str(&r.body).unwrap();
        let text = body["text"].as_str().unwrap();
        let label = u8::from(text.contains('!'));
        (200, json!({ "extravert": label }).to_string())
    }));
    let binding: ClassifierBinding = stub.url.parse().unwrap();
    let clf = binding.build();
    assert_eq!(clf.classify("What a day!").unwrap(), 1);
    assert_eq!(clf.classify("Fine.").unwrap(), 0);
    let seen = stub.requests();
    assert_eq!(seen.len(), 2);
    assert_eq!(serde_json::from_str::<Value>(&seen[0].body).unwrap(), json!({"text": "What a day!"}));
    assert!(seen[0].header("authorization").is_none());
}

#[test]
fn classifier_rejects_out_of_range_labels() {
    let stub = Stub::start(Box::new(|_, _| (200, r#"{"extravert": 2}"#.into())));
    let clf = ClassifierBinding::ExternalHttp { endpoint: stub.url.clone() }.build();
    assert!(matches!(clf.classify("x"), Err(GatewayError::MalformedResponse(_))));
}

#[test]
fn simulate_over_http_end_to_end() {
    let stub = Stub::start(Box::new(|_, r| {
        let body: Value = serde_json::from_str(&r.body).unwrap();
        let system = body["messages"][0]["content"].as_str().unwrap_or_default();
        // the generic agent's prompt carries no action list
        let reply = if system.contains("Make Eye Contact") {
            r#"{"text": "Sounds great to me!", "face": ["Smile Broadly"], "body": [], "voice": ["Loud Volume"]}"#
        } else {
            "Tell me more. What do you do for fun?"
        };
        (200, chat_reply(reply))
    }));
    let tmp = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_nvpersona"))
        .args(["simulate", "--backend", "http", "--endpoint", &stub.url])
        .args(["--api-key-env", "NVPERSONA_STUB_KEY", "--trials", "1", "--scenario", "negotiation"])
        .args(["--personality", "extrovert", "--out"])
        .arg(tmp.path())
        .env("NVPERSONA_STUB_KEY", "sk-stub")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = std::path::PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    // live backends get a timestamped directory name
    assert!(!run_dir.file_name().unwrap().to_string_lossy().starts_with("scripted-"));
    let transcript =
        nvpersona::sim::read_transcript(&run_dir.join("trials/negotiation-extrovert-00.jsonl")).unwrap();
    assert_eq!(transcript.len(), 10);
    assert_eq!(stub.requests().len(), 10);
    assert!(stub.requests().iter().all(|r| r.header("authorization") == Some("Bearer sk-stub")));
    let first = &transcript[0];
    assert_eq!(first.text, "Sounds great to me!");
    assert!(first.actions.face.iter().any(|a| a == "Smile Broadly"));
}
