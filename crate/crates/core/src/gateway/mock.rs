//! Minimal in-process HTTP server replaying canned JSON responses.
//!
//! Used by the test suites and the CLI's offline mode; it speaks just enough
//! HTTP/1.1 for a single request per connection.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockResponse {
    pub status: u16,
    pub body: Value,
    #[serde(default)]
    pub delay_ms: u64,
}

impl MockResponse {
    pub fn ok(body: Value) -> Self {
        Self {
            status: 200,
            body,
            delay_ms: 0,
        }
    }

    pub fn status(status: u16, body: Value) -> Self {
        Self {
            status,
            body,
            delay_ms: 0,
        }
    }

    /// Loads one of the bundled fixtures by file stem.
    pub fn fixture(name: &str) -> Self {
        let raw = fixture_json(name).unwrap_or_else(|| panic!("no gateway fixture named {name:?}"));
        serde_json::from_str(raw).expect("bundled fixtures are valid")
    }
}

/// Raw JSON of a bundled gateway fixture.
pub fn fixture_json(name: &str) -> Option<&'static str> {
    Some(match name {
        "logprobs_yes_no" => include_str!("../../fixtures/gateway/logprobs_yes_no.json"),
        "logprobs_no_only" => include_str!("../../fixtures/gateway/logprobs_no_only.json"),
        "logprobs_yes_exhaustive" => {
            include_str!("../../fixtures/gateway/logprobs_yes_exhaustive.json")
        }
        "logprobs_p073" => include_str!("../../fixtures/gateway/logprobs_p073.json"),
        "logprobs_missing" => include_str!("../../fixtures/gateway/logprobs_missing.json"),
        "chat_reasoning_yes" => include_str!("../../fixtures/gateway/chat_reasoning_yes.json"),
        "chat_reasoning_no" => include_str!("../../fixtures/gateway/chat_reasoning_no.json"),
        "score_ok" => include_str!("../../fixtures/gateway/score_ok.json"),
        "score_nan" => include_str!("../../fixtures/gateway/score_nan.json"),
        "score_string_number" => include_str!("../../fixtures/gateway/score_string_number.json"),
        "server_error" => include_str!("../../fixtures/gateway/server_error.json"),
        "unauthorized" => include_str!("../../fixtures/gateway/unauthorized.json"),
        "malformed" => include_str!("../../fixtures/gateway/malformed.json"),
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockRequest {
    pub method: String,
    pub path: String,
    pub authorization: Option<String>,
    pub body: Value,
}

type Handler = dyn Fn(&MockRequest) -> MockResponse + Send + Sync;

pub struct MockServer {
    addr: String,
    requests: Arc<Mutex<Vec<MockRequest>>>,
    shutdown: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Serves `script` in order; the last response repeats once exhausted.
    pub fn scripted(script: Vec<MockResponse>) -> Self {
        assert!(!script.is_empty(), "script needs at least one response");
        let cursor = Mutex::new(0usize);
        Self::with_handler(move |_| {
            let mut i = cursor.lock().unwrap();
            let resp = script[(*i).min(script.len() - 1)].clone();
            *i += 1;
            resp
        })
    }

    pub fn with_handler(handler: impl Fn(&MockRequest) -> MockResponse + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let shutdown = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let worker = {
            let requests = requests.clone();
            let shutdown = shutdown.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let requests = requests.clone();
                    let handler = handler.clone();
                    thread::spawn(move || {
                        let _ = serve_one(stream, &*handler, &requests);
                    });
                }
            })
        };
        Self {
            addr,
            requests,
            shutdown,
            worker: Some(worker),
        }
    }

    pub fn url(&self) -> &str {
        &self.addr
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr.trim_start_matches("http://"));
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn serve_one(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<MockRequest>>) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();

    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let value = value.trim();
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.parse().unwrap_or(0);
            } else if name.eq_ignore_ascii_case("authorization") {
                authorization = Some(value.to_string());
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let request = MockRequest {
        method,
        path,
        authorization,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    };
    let response = handler(&request);
    log.lock().unwrap().push(request);

    if response.delay_ms > 0 {
        thread::sleep(Duration::from_millis(response.delay_ms));
    }
    let payload = match &response.body {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {} MOCK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        payload.len(),
        payload
    )?;
    stream.flush()
}
