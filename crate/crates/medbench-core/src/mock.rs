//! In-process stand-in for an Ollama-compatible backend, for tests and dry
//! runs. Speaks just enough HTTP/1.1 on an OS-assigned loopback port, counts
//! every accepted connection (so tests can prove that nothing dialed), and
//! can misbehave on demand: hang, stall, answer empty, or fail.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use crate::corpus::{gold_response_json, Corpus};
use crate::prompt::extract_note_slot;

/// What the mock does when asked to generate with a given model name.
#[derive(Debug, Clone)]
pub enum MockBehavior {
    /// Reply with the prompt itself.
    Echo,
    /// Find the note inside the prompt and reply with its perfect answer.
    Gold(Corpus),
    /// Reply cleanly with empty text.
    Empty,
    /// Never reply; hold the connection open until the server shuts down.
    Hang,
    /// Sleep, then echo the prompt.
    Delay { millis: u64 },
    /// Fail at the HTTP layer.
    HttpError { status: u16 },
    /// Reply with a fixed text.
    Canned(String),
}

struct MockState {
    models: Vec<(String, MockBehavior)>,
    /// Dimension of the i-th embedding reply (last entry repeats forever).
    embed_dims: Vec<usize>,
    embed_calls: AtomicUsize,
    stop: AtomicBool,
    connections: AtomicUsize,
}

/// A running mock backend bound to `127.0.0.1:<os-assigned port>`.
/// Shuts down (and joins its threads) on drop.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    accept_handle: Option<JoinHandle<()>>,
    workers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl MockServer {
    pub fn start(models: Vec<(String, MockBehavior)>) -> std::io::Result<MockServer> {
        Self::start_with_embed_dims(models, vec![16])
    }

    /// Start with a scripted sequence of embedding dimensions, so tests can
    /// exercise the client's per-model dimension pin.
    pub fn start_with_embed_dims(
        models: Vec<(String, MockBehavior)>,
        embed_dims: Vec<usize>,
    ) -> std::io::Result<MockServer> {
        assert!(!embed_dims.is_empty(), "need at least one embedding dimension");
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let state = Arc::new(MockState {
            models,
            embed_dims,
            embed_calls: AtomicUsize::new(0),
            stop: AtomicBool::new(false),
            connections: AtomicUsize::new(0),
        });
        let workers: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::new(Mutex::new(Vec::new()));

        let accept_state = Arc::clone(&state);
        let accept_workers = Arc::clone(&workers);
        let accept_handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_state.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { break };
                accept_state.connections.fetch_add(1, Ordering::SeqCst);
                let worker_state = Arc::clone(&accept_state);
                let handle = std::thread::spawn(move || handle_connection(stream, &worker_state));
                accept_workers.lock().unwrap().push(handle);
            }
        });

        Ok(MockServer { addr, state, accept_handle: Some(accept_handle), workers })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// How many connections have been accepted so far. Zero proves that no
    /// request ever reached this listener.
    pub fn connection_count(&self) -> usize {
        self.state.connections.load(Ordering::SeqCst)
    }

    /// How many embedding requests have been served. Lets tests prove that a
    /// cached vector was reused rather than re-requested.
    pub fn embed_call_count(&self) -> usize {
        self.state.embed_calls.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.state.stop.store(true, Ordering::SeqCst);
        // Nudge the accept loop awake; this connection is not counted
        // because the stop flag is already set.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_handle.take() {
            let _ = handle.join();
        }
        for handle in self.workers.lock().unwrap().drain(..) {
            let _ = handle.join();
        }
    }
}

/// Read one HTTP/1.1 request: (method, path, body).
fn read_request(stream: &mut TcpStream) -> Option<(String, String, Vec<u8>)> {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(30)));
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        if let Some(pos) = find_subslice(&buf, b"\r\n\r\n") {
            break pos + 4;
        }
        match stream.read(&mut chunk) {
            Ok(0) | Err(_) => return None,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
        }
    };
    let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let mut lines = head.lines();
    let request_line = lines.next()?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let content_length = lines
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = buf[header_end..].to_vec();
    while body.len() < content_length {
        match stream.read(&mut chunk) {
            Ok(0) | Err(_) => return None,
            Ok(n) => body.extend_from_slice(&chunk[..n]),
        }
    }
    body.truncate(content_length);
    Some((method, path, body))
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn write_response(stream: &mut TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        _ => "Error",
    };
    let message = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(message.as_bytes());
    let _ = stream.flush();
}

fn handle_connection(mut stream: TcpStream, state: &MockState) {
    let Some((method, path, body)) = read_request(&mut stream) else { return };
    match (method.as_str(), path.as_str()) {
        ("GET", "/api/tags") => {
            let models: Vec<Value> =
                state.models.iter().map(|(name, _)| json!({ "name": name })).collect();
            write_response(&mut stream, 200, &json!({ "models": models }).to_string());
        }
        ("POST", "/api/generate") => handle_generate(&mut stream, state, &body),
        ("POST", "/api/embeddings") => handle_embeddings(&mut stream, state, &body),
        _ => write_response(&mut stream, 404, &json!({ "error": "no such route" }).to_string()),
    }
}

fn handle_generate(stream: &mut TcpStream, state: &MockState, body: &[u8]) {
    let parsed: Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(_) => {
            write_response(stream, 400, &json!({ "error": "bad request body" }).to_string());
            return;
        }
    };
    let model = parsed["model"].as_str().unwrap_or("");
    let prompt = parsed["prompt"].as_str().unwrap_or("");
    let Some((_, behavior)) = state.models.iter().find(|(name, _)| name == model) else {
        write_response(stream, 404, &json!({ "error": format!("model {model:?} not found") }).to_string());
        return;
    };
    let reply = |text: &str| json!({ "model": model, "response": text, "done": true }).to_string();
    match behavior {
        MockBehavior::Echo => write_response(stream, 200, &reply(prompt)),
        MockBehavior::Gold(corpus) => {
            let answer = extract_note_slot(prompt)
                .and_then(|slot| corpus.notes.iter().find(|n| n.note_text == slot))
                .map(gold_response_json)
                .unwrap_or_else(|| "NO MATCHING NOTE IN PROMPT".to_string());
            write_response(stream, 200, &reply(&answer));
        }
        MockBehavior::Empty => write_response(stream, 200, &reply("")),
        MockBehavior::Hang => {
            while !state.stop.load(Ordering::SeqCst) {
                std::thread::sleep(Duration::from_millis(25));
            }
        }
        MockBehavior::Delay { millis } => {
            let mut remaining = *millis;
            while remaining > 0 && !state.stop.load(Ordering::SeqCst) {
                let step = remaining.min(25);
                std::thread::sleep(Duration::from_millis(step));
                remaining -= step;
            }
            write_response(stream, 200, &reply(prompt));
        }
        MockBehavior::HttpError { status } => {
            write_response(stream, *status, &json!({ "error": "injected failure" }).to_string());
        }
        MockBehavior::Canned(text) => write_response(stream, 200, &reply(text)),
    }
}

fn handle_embeddings(stream: &mut TcpStream, state: &MockState, body: &[u8]) {
    let parsed: Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(_) => {
            write_response(stream, 400, &json!({ "error": "bad request body" }).to_string());
            return;
        }
    };
    let model = parsed["model"].as_str().unwrap_or("");
    let prompt = parsed["prompt"].as_str().unwrap_or("");
    let call = state.embed_calls.fetch_add(1, Ordering::SeqCst);
    let dim = state.embed_dims[call.min(state.embed_dims.len() - 1)];
    let vector = deterministic_vector(model, prompt, dim);
    write_response(stream, 200, &json!({ "embedding": vector }).to_string());
}

/// Same (model, text) always embeds to the same vector, across processes.
fn deterministic_vector(model: &str, text: &str, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            let h = fnv1a(format!("{model}\u{1}{k}\u{1}{text}").as_bytes());
            (h % 2001) as f64 / 1000.0 - 1.0
        })
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
