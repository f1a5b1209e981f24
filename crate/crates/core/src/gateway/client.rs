use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{aggregate_yes_no, ChatBackend, CompletionResult, GatewayError, ScoreBackend, Usage};

/// Environment variable holding the bearer token (never read from files or flags).
pub const API_KEY_ENV: &str = "PMR_API_KEY";
/// Environment variable overriding `base_url`.
pub const BASE_URL_ENV: &str = "PMR_BASE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_chat_path")]
    pub chat_path: String,
    #[serde(default = "default_score_path")]
    pub score_path: String,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_base_delay_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_parallel() -> usize {
    4
}
fn default_chat_path() -> String {
    "/v1/chat/completions".into()
}
fn default_score_path() -> String {
    "/score".into()
}
fn default_top_logprobs() -> u32 {
    20
}
fn default_max_tokens() -> u32 {
    16
}
fn default_backoff_ms() -> u64 {
    500
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_parallel: default_parallel(),
            temperature: 0.0,
            chat_path: default_chat_path(),
            score_path: default_score_path(),
            top_logprobs: default_top_logprobs(),
            max_tokens: default_max_tokens(),
            retry_base_delay_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GatewayError::Config("timeout must be > 0".into()));
        }
        if self.max_parallel < 1 {
            return Err(GatewayError::Config("max_parallel must be >= 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(GatewayError::Config(format!(
                "base_url must be an http(s) URL, got {:?}",
                self.base_url
            )));
        }
        Ok(())
    }

    /// Applies the `PMR_BASE_URL` override when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(BASE_URL_ENV) {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// FIFO admission gate bounding in-flight requests.
///
/// Callers take a ticket and are admitted strictly in ticket order once
/// fewer than `limit` earlier tickets remain unreleased.
struct FairLimiter {
    limit: u64,
    state: Mutex<(u64, u64)>, // (next ticket, released count)
    cv: Condvar,
}

struct Permit<'a>(&'a FairLimiter);

impl FairLimiter {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit as u64,
            state: Mutex::new((0, 0)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().expect("limiter poisoned");
        let ticket = st.0;
        st.0 += 1;
        while ticket >= st.1 + self.limit {
            st = self.cv.wait(st).expect("limiter poisoned");
        }
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self.0.state.lock().expect("limiter poisoned");
        st.1 += 1;
        self.0.cv.notify_all();
    }
}

/// OpenAI-compatible HTTP client implementing both gateway backends.
pub struct HttpGateway {
    config: EndpointConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    limiter: FairLimiter,
}

enum Attempt {
    Transient(String),
    Fatal(GatewayError),
}

impl HttpGateway {
    /// Builds a client, reading the API key from `PMR_API_KEY` if present.
    pub fn new(config: EndpointConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(config: EndpointConfig, api_key: Option<String>) -> Result<Self, GatewayError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            limiter: FairLimiter::new(config.max_parallel),
            config,
            api_key,
            http,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn post_json(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let _permit = self.limiter.acquire();
        let url = self.config.url(path);
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self
                    .config
                    .retry_base_delay_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                debug!("retrying {url} in {delay} ms (attempt {})", attempt + 1);
                thread::sleep(Duration::from_millis(delay));
            }
            match self.try_post(&url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => {
                    warn!("transient failure from {url}: {msg}");
                    last_error = msg;
                }
            }
        }
        Err(GatewayError::EndpointUnavailable { attempts, last_error })
    }

    fn try_post(&self, url: &str, body: &Value) -> Result<Value, Attempt> {
        let mut req = self.http.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Transient(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Transient(format!("HTTP {}: {}", status.as_u16(), text)));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GatewayError::RequestRejected {
                status: status.as_u16(),
                body: text,
            }));
        }
        serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(GatewayError::ProtocolError(format!("invalid JSON: {e}"))))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

/// Parses an OpenAI-style chat completion body.
pub(crate) fn parse_chat_response(body: Value, want_logprobs: bool) -> Result<CompletionResult, GatewayError> {
    let resp: ChatResponse = serde_json::from_value(body)
        .map_err(|e| GatewayError::ProtocolError(format!("unexpected completion shape: {e}")))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::ProtocolError("response has no choices".into()))?;
    let token_probabilities = if want_logprobs {
        choice
            .logprobs
            .and_then(|l| l.content)
            .and_then(|positions| {
                // First position carrying a non-whitespace token.
                positions.into_iter().find(|p| !p.token.trim().is_empty())
            })
            .map(|first| {
                let mut candidates: Vec<(String, f64)> = first
                    .top_logprobs
                    .into_iter()
                    .map(|t| (t.token, t.logprob.exp()))
                    .collect();
                candidates.push((first.token, first.logprob.exp()));
                aggregate_yes_no(&candidates)
            })
    } else {
        None
    };
    Ok(CompletionResult {
        text: choice.message.content.unwrap_or_default(),
        token_probabilities,
        usage: resp.usage.unwrap_or_default(),
    })
}

pub(crate) fn parse_score_response(body: &Value) -> Result<f64, GatewayError> {
    let raw = body
        .get("score")
        .ok_or_else(|| GatewayError::ProtocolError("response has no `score` field".into()))?;
    let value = match raw {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    match value {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(GatewayError::BadScore(raw.to_string())),
    }
}

impl ChatBackend for HttpGateway {
    fn identity(&self) -> String {
        format!("chat:{}@{}", self.config.model_name, self.config.base_url)
    }

    fn complete(&self, system: &str, user: &str, want_logprobs: bool) -> Result<CompletionResult, GatewayError> {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "stream": false,
        });
        if want_logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(self.config.top_logprobs);
        }
        let resp = self.post_json(&self.config.chat_path, &body)?;
        parse_chat_response(resp, want_logprobs)
    }
}

impl ScoreBackend for HttpGateway {
    fn identity(&self) -> String {
        format!("score:{}@{}", self.config.model_name, self.config.base_url)
    }

    fn score(&self, prompt: &str, completion: &str) -> Result<f64, GatewayError> {
        let body = json!({
            "model": self.config.model_name,
            "prompt": prompt,
            "completion": completion,
        });
        let resp = self.post_json(&self.config.score_path, &body)?;
        parse_score_response(&resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn config_validation() {
        let mut c = EndpointConfig::new("http://localhost:1", "m");
        assert!(c.validate().is_ok());
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
        let mut c = EndpointConfig::new("http://localhost:1", "m");
        c.max_parallel = 0;
        assert!(c.validate().is_err());
        let c = EndpointConfig::new("localhost:1", "m");
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_defaults_from_toml_like_json() {
        let c: EndpointConfig = serde_json::from_value(json!({"base_url": "http://x", "model_name": "m"})).unwrap();
        assert_eq!(c.temperature, 0.0);
        assert_eq!(c.max_retries, 3);
        assert!(serde_json::from_value::<EndpointConfig>(
            json!({"base_url": "http://x", "model_name": "m", "api_key": "leak"})
        )
        .is_err());
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score_response(&json!({"score": 1.25})).unwrap(), 1.25);
        assert_eq!(parse_score_response(&json!({"score": "-0.5"})).unwrap(), -0.5);
        assert!(matches!(
            parse_score_response(&json!({"score": "NaN"})),
            Err(GatewayError::BadScore(_))
        ));
        assert!(matches!(
            parse_score_response(&json!({"score": "inf"})),
            Err(GatewayError::BadScore(_))
        ));
        assert!(matches!(
            parse_score_response(&json!({"value": 1})),
            Err(GatewayError::ProtocolError(_))
        ));
    }

    #[test]
    fn chat_parsing_without_logprobs() {
        let r = parse_chat_response(json!({"choices": [{"message": {"content": "YES"}}]}), false).unwrap();
        assert_eq!(r.text, "YES");
        assert!(r.token_probabilities.is_none());
        assert!(parse_chat_response(json!({"choices": []}), false).is_err());
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(FairLimiter::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (l, a, p) = (limiter.clone(), active.clone(), peak.clone());
                thread::spawn(move || {
                    let _g = l.acquire();
                    let now = a.fetch_add(1, Ordering::SeqCst) + 1;
                    p.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    a.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
