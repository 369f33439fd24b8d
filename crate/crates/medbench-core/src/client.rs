//! Blocking HTTP client for an Ollama-compatible backend. Network use is
//! deny-by-default: every call re-checks that the endpoint host is loopback
//! before any connection is attempted, so clinical text cannot leave the
//! machine unless the operator explicitly opts out.

use std::collections::HashMap;
use std::net::{Ipv6Addr, SocketAddr};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

/// Where the backend lives and how long to wait for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub connect_timeout_s: f64,
    /// Deadline for a whole generation request, including reading the reply.
    pub generate_timeout_s: f64,
    /// Escape hatch for deliberately non-local backends. Off by default.
    pub allow_nonlocal: bool,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:11434".to_string(),
            connect_timeout_s: 10.0,
            generate_timeout_s: 300.0,
            allow_nonlocal: false,
        }
    }
}

/// The endpoint host is not loopback and `allow_nonlocal` is off.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("refusing endpoint {endpoint:?}: {reason}; set allow_nonlocal to override")]
pub struct EgressError {
    pub endpoint: String,
    pub reason: String,
}

/// Check the endpoint host *textually*: only the literal loopback forms
/// (`localhost`, `127.0.0.0/8`, `::1`) pass. No name resolution happens here —
/// a hostname that merely resolves to 127.0.0.1 still fails, because deciding
/// that would itself leak a DNS query.
pub fn assert_local_endpoint(config: &EndpointConfig) -> Result<(), EgressError> {
    if config.allow_nonlocal {
        return Ok(());
    }
    let err = |reason: &str| EgressError {
        endpoint: config.base_url.clone(),
        reason: reason.to_string(),
    };
    let parsed = url::Url::parse(&config.base_url).map_err(|_| err("URL does not parse"))?;
    let local = match parsed.host() {
        Some(url::Host::Domain(d)) => d.eq_ignore_ascii_case("localhost"),
        Some(url::Host::Ipv4(ip)) => ip.octets()[0] == 127,
        Some(url::Host::Ipv6(ip)) => ip == Ipv6Addr::LOCALHOST,
        None => false,
    };
    if local {
        Ok(())
    } else {
        Err(err("host is not a loopback literal"))
    }
}

/// How a generation attempt ended. `Ok` is the only state with text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStatus {
    Ok,
    /// The configured deadline elapsed first.
    Timeout,
    /// The backend answered cleanly but with no text.
    EmptyResponse,
    ServerError { detail: String },
}

impl GenerationStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, GenerationStatus::Ok)
    }
}

/// One generation outcome. Total: every attempt produces one of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Response text; empty exactly when status is not `Ok`.
    pub text: String,
    /// Wall time measured on a monotonic clock; never negative.
    pub duration_s: f64,
    pub status: GenerationStatus,
}

#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub model: String,
    pub prompt: String,
    /// Structured-output constraint forwarded as the `format` parameter.
    pub constraint: Option<Value>,
    pub temperature: f64,
    pub seed: Option<i64>,
}

impl GenerationRequest {
    /// Reproducibility-first defaults: greedy decoding, fixed seed.
    pub fn new(model: &str, prompt: &str) -> Self {
        GenerationRequest {
            model: model.to_string(),
            prompt: prompt.to_string(),
            constraint: None,
            temperature: 0.0,
            seed: Some(42),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Egress(#[from] EgressError),
    #[error("could not build HTTP client: {0}")]
    Build(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend error: {0}")]
    Backend(String),
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error(transparent)]
    Egress(#[from] EgressError),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("embedding dimension for {model:?} changed from {expected} to {got}")]
    DimensionMismatch { model: String, expected: usize, got: usize },
}

/// Client for `/api/generate`, `/api/embeddings`, and `/api/tags`.
/// Shareable across threads; embeddings are cached per (model, text).
pub struct InferenceClient {
    config: EndpointConfig,
    http: reqwest::blocking::Client,
    embed_cache: Mutex<HashMap<(String, String), Vec<f64>>>,
    /// Embedding dimension pinned per model on first successful call.
    embed_dims: Mutex<HashMap<String, usize>>,
}

impl InferenceClient {
    pub fn new(config: EndpointConfig) -> Result<Self, ClientError> {
        Self::build(config, None)
    }

    /// Route one hostname to a fixed address without touching system DNS.
    /// Exists so tests can point a non-loopback name at a local listener and
    /// prove the egress guard rejects it before any connection happens.
    pub fn with_dns_override(
        config: EndpointConfig,
        host: &str,
        addr: SocketAddr,
    ) -> Result<Self, ClientError> {
        Self::build(config, Some((host.to_string(), addr)))
    }

    fn build(config: EndpointConfig, resolve: Option<(String, SocketAddr)>) -> Result<Self, ClientError> {
        let mut builder = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs_f64(config.connect_timeout_s))
            .timeout(Duration::from_secs_f64(config.generate_timeout_s))
            .no_proxy();
        if let Some((host, addr)) = resolve {
            builder = builder.resolve(&host, addr);
        }
        let http = builder.build().map_err(|e| ClientError::Build(e.to_string()))?;
        Ok(InferenceClient {
            config,
            http,
            embed_cache: Mutex::new(HashMap::new()),
            embed_dims: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn api_url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// Run one generation. Total: transport failures, timeouts, bad replies,
    /// and egress refusals all come back as a status, never a panic or hang
    /// beyond the configured deadline.
    pub fn generate(&self, req: &GenerationRequest) -> GenerationResult {
        let start = Instant::now();
        let done = |text: String, status: GenerationStatus| GenerationResult {
            text,
            duration_s: start.elapsed().as_secs_f64(),
            status,
        };
        if let Err(e) = assert_local_endpoint(&self.config) {
            return done(String::new(), GenerationStatus::ServerError { detail: e.to_string() });
        }

        let mut options = Map::new();
        options.insert("temperature".to_string(), json!(req.temperature));
        if let Some(seed) = req.seed {
            options.insert("seed".to_string(), json!(seed));
        }
        let mut body = json!({
            "model": req.model,
            "prompt": req.prompt,
            "stream": false,
            "options": Value::Object(options),
        });
        if let Some(constraint) = &req.constraint {
            body["format"] = constraint.clone();
        }

        let sent = self.http.post(self.api_url("/api/generate")).json(&body).send();
        let response = match sent {
            Err(e) if e.is_timeout() => return done(String::new(), GenerationStatus::Timeout),
            Err(e) => {
                return done(
                    String::new(),
                    GenerationStatus::ServerError { detail: format!("transport: {e}") },
                )
            }
            Ok(r) => r,
        };
        let http_status = response.status();
        let reply = match response.text() {
            Err(e) if e.is_timeout() => return done(String::new(), GenerationStatus::Timeout),
            Err(e) => {
                return done(
                    String::new(),
                    GenerationStatus::ServerError { detail: format!("reading reply: {e}") },
                )
            }
            Ok(t) => t,
        };
        if !http_status.is_success() {
            let snippet: String = reply.chars().take(200).collect();
            return done(
                String::new(),
                GenerationStatus::ServerError { detail: format!("HTTP {http_status}: {snippet}") },
            );
        }
        let parsed: Value = match serde_json::from_str(&reply) {
            Err(e) => {
                return done(
                    String::new(),
                    GenerationStatus::ServerError { detail: format!("unparseable backend reply: {e}") },
                )
            }
            Ok(v) => v,
        };
        match parsed.get("response").and_then(Value::as_str) {
            None => done(
                String::new(),
                GenerationStatus::ServerError { detail: "backend reply has no response field".to_string() },
            ),
            Some(s) if s.trim().is_empty() => done(String::new(), GenerationStatus::EmptyResponse),
            Some(s) => done(s.to_string(), GenerationStatus::Ok),
        }
    }

    /// Embed one text, with per-(model, text) caching and a per-model
    /// dimension pin: the first reply fixes the dimension that all later
    /// replies must honor.
    pub fn embed(&self, model: &str, text: &str) -> Result<Vec<f64>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        assert_local_endpoint(&self.config)?;
        let key = (model.to_string(), text.to_string());
        if let Some(hit) = self.embed_cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }

        let body = json!({ "model": model, "prompt": text });
        let response = self
            .http
            .post(self.api_url("/api/embeddings"))
            .json(&body)
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(EmbedError::Backend(format!("HTTP {}", response.status())));
        }
        let parsed: Value =
            response.json().map_err(|e| EmbedError::Backend(format!("unparseable reply: {e}")))?;
        let raw = parsed
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Backend("reply has no embedding field".to_string()))?;
        let vector: Vec<f64> = raw
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| EmbedError::Backend("non-numeric embedding element".to_string())))
            .collect::<Result<_, _>>()?;
        if vector.is_empty() {
            return Err(EmbedError::Backend("empty embedding".to_string()));
        }

        let mut dims = self.embed_dims.lock().unwrap();
        match dims.get(model) {
            Some(&expected) if expected != vector.len() => {
                return Err(EmbedError::DimensionMismatch {
                    model: model.to_string(),
                    expected,
                    got: vector.len(),
                });
            }
            Some(_) => {}
            None => {
                dims.insert(model.to_string(), vector.len());
            }
        }
        drop(dims);
        self.embed_cache.lock().unwrap().insert(key, vector.clone());
        Ok(vector)
    }

    /// Names of the models the backend advertises.
    pub fn list_models(&self) -> Result<Vec<String>, ClientError> {
        assert_local_endpoint(&self.config)?;
        let response = self
            .http
            .get(self.api_url("/api/tags"))
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(ClientError::Backend(format!("HTTP {}", response.status())));
        }
        let parsed: Value =
            response.json().map_err(|e| ClientError::Backend(format!("unparseable reply: {e}")))?;
        let models = parsed
            .get("models")
            .and_then(Value::as_array)
            .ok_or_else(|| ClientError::Backend("reply has no models field".to_string()))?;
        Ok(models
            .iter()
            .filter_map(|m| m.get("name").and_then(Value::as_str))
            .map(str::to_string)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn endpoint(url: &str) -> EndpointConfig {
        EndpointConfig { base_url: url.to_string(), ..Default::default() }
    }

    #[test]
    fn loopback_literals_pass() {
        for url in [
            "http://localhost:11434",
            "http://LOCALHOST:11434",
            "http://127.0.0.1:11434",
            "http://127.8.9.10:80",
            "http://[::1]:11434",
            "https://localhost",
        ] {
            assert!(assert_local_endpoint(&endpoint(url)).is_ok(), "{url}");
        }
    }

    #[test]
    fn everything_else_is_refused_without_resolution() {
        for url in [
            "http://example.com:11434",
            "http://10.0.0.5:11434",
            "http://8.8.8.8",
            "http://[2001:db8::1]:11434",
            "http://localhost.evil.net:11434",
            "http://mock.test:9999",
            "not a url",
        ] {
            assert!(assert_local_endpoint(&endpoint(url)).is_err(), "{url}");
        }
    }

    #[test]
    fn opt_out_flag_overrides_the_guard() {
        let mut cfg = endpoint("http://example.com:11434");
        cfg.allow_nonlocal = true;
        assert!(assert_local_endpoint(&cfg).is_ok());
    }

    #[test]
    fn generate_refuses_nonlocal_before_any_dial() {
        // No server exists at this name; if the guard did not short-circuit,
        // this would surface as a DNS/transport error, not an egress refusal.
        let client = InferenceClient::new(endpoint("http://mock.test:1")).unwrap();
        let out = client.generate(&GenerationRequest::new("m", "p"));
        assert!(out.text.is_empty());
        match out.status {
            GenerationStatus::ServerError { detail } => {
                assert!(detail.contains("refusing endpoint"), "{detail}")
            }
            other => panic!("unexpected status {other:?}"),
        }
        assert!(matches!(client.embed("m", "text"), Err(EmbedError::Egress(_))));
        assert!(matches!(client.list_models(), Err(ClientError::Egress(_))));
    }
}
