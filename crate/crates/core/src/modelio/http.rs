//! HTTP completion backend.
//!
//! The wire format is configurable: the request body is a JSON template
//! whose string leaves may contain `{{prompt}}` and `{{model}}`
//! placeholders, and the first token is extracted from the response via a
//! dot-separated field path (array indices allowed, e.g.
//! `choices.0.text`). Tokens are canonicalised by trimming a single
//! leading space. Rate-limit responses (HTTP 429) are retried with
//! exponential backoff, at most [`HttpEndpoint::DEFAULT_MAX_ATTEMPTS`]
//! attempts in total.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

/// Configuration of one completion endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEndpoint {
    pub url: String,
    /// Value substituted for `{{model}}` in the request template.
    pub model_name: String,
    /// JSON request body template; defaults to a completions-style body
    /// with `max_tokens = 1` and `temperature = 0`.
    #[serde(default = "default_request_template")]
    pub request_template: Value,
    /// Dot-separated path to the token text in the response JSON.
    #[serde(default = "default_token_path")]
    pub response_token_path: String,
    /// Environment variable holding the bearer credential, if any.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
}

impl HttpEndpoint {
    pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

    pub fn new(url: impl Into<String>, model_name: impl Into<String>) -> Self {
        HttpEndpoint {
            url: url.into(),
            model_name: model_name.into(),
            request_template: default_request_template(),
            response_token_path: default_token_path(),
            auth_env: None,
            max_attempts: default_max_attempts(),
            initial_backoff_ms: default_backoff_ms(),
        }
    }
}

fn default_request_template() -> Value {
    serde_json::json!({
        "model": "{{model}}",
        "prompt": "{{prompt}}",
        "max_tokens": 1,
        "temperature": 0,
    })
}

fn default_token_path() -> String {
    "choices.0.text".to_string()
}

fn default_max_attempts() -> u32 {
    HttpEndpoint::DEFAULT_MAX_ATTEMPTS
}

fn default_backoff_ms() -> u64 {
    250
}

pub(super) fn build_client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(60))
        .build()
        .expect("default reqwest client")
}

/// Issues a single-completion request and extracts the canonical first token.
///
/// Returns the token together with the number of rate-limit retries it took.
pub(super) fn http_first_token(
    client: &reqwest::blocking::Client,
    model_id: &str,
    endpoint: &HttpEndpoint,
    prompt: &str,
) -> Result<(String, u32)> {
    let unreachable = |detail: String| Error::BackendUnreachable { model_id: model_id.to_string(), detail };
    let malformed = |detail: String| Error::MalformedResponse { model_id: model_id.to_string(), detail };

    let body = instantiate_template(&endpoint.request_template, prompt, &endpoint.model_name);
    let auth = match &endpoint.auth_env {
        Some(var) => Some(std::env::var(var).map_err(|_| {
            Error::invalid(format!("credential environment variable `{var}` is not set"))
        })?),
        None => None,
    };

    let mut retries = 0u32;
    loop {
        let mut request = client.post(&endpoint.url).json(&body);
        if let Some(token) = &auth {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| unreachable(e.to_string()))?;
        let status = response.status();

        if status.as_u16() == 429 {
            retries += 1;
            if retries >= endpoint.max_attempts {
                return Err(unreachable(format!(
                    "rate limited after {} attempts",
                    endpoint.max_attempts
                )));
            }
            let backoff = endpoint.initial_backoff_ms.saturating_mul(1 << (retries - 1).min(16));
            log::debug!("model `{model_id}` rate limited; retry {retries} after {backoff} ms");
            std::thread::sleep(Duration::from_millis(backoff));
            continue;
        }
        if !status.is_success() {
            return Err(unreachable(format!("http status {status}")));
        }

        let payload: Value =
            response.json().map_err(|e| malformed(format!("invalid json: {e}")))?;
        let raw = extract_path(&payload, &endpoint.response_token_path)
            .and_then(Value::as_str)
            .ok_or_else(|| {
                malformed(format!(
                    "no string at response path `{}`",
                    endpoint.response_token_path
                ))
            })?;
        if retries > 0 {
            log::info!("model `{model_id}` answered after {retries} rate-limit retries");
        }
        return Ok((canonical_token(raw), retries));
    }
}

/// Trims a single leading space: tokenizers commonly render word-initial
/// tokens with one.
fn canonical_token(raw: &str) -> String {
    raw.strip_prefix(' ').unwrap_or(raw).to_string()
}

fn instantiate_template(template: &Value, prompt: &str, model_name: &str) -> Value {
    match template {
        Value::String(s) => {
            Value::String(s.replace("{{prompt}}", prompt).replace("{{model}}", model_name))
        }
        Value::Array(items) => {
            Value::Array(items.iter().map(|v| instantiate_template(v, prompt, model_name)).collect())
        }
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), instantiate_template(v, prompt, model_name)))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn extract_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    let mut cur = value;
    for seg in path.split('.') {
        cur = match cur {
            Value::Array(items) => items.get(seg.parse::<usize>().ok()?)?,
            Value::Object(map) => map.get(seg)?,
            _ => return None,
        };
    }
    Some(cur)
}
