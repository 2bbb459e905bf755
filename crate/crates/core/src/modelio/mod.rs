//! Uniform black-box model interface: prompt in, first output token out.
//!
//! Three backends sit behind [`ModelHandle`]: a deterministic synthetic
//! model family for benchmarks, a replay backend that only serves recorded
//! answers, and an HTTP completion endpoint. A persistent per-model query
//! cache makes offline queries reusable across test runs.

mod cache;
#[cfg(feature = "http")]
mod http;
mod synthetic;

pub use cache::QueryCache;
#[cfg(feature = "http")]
pub use http::HttpEndpoint;
pub use synthetic::{synth_token, SyntheticModelSpec, ZipfProfile};

use std::sync::Arc;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use crate::seed::stable_hash64;
use crate::{Error, Result};

/// Decoding parameters, fixed for a test session: single greedy token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { max_tokens: 1, temperature: 0.0 }
    }
}

/// Where a model's tokens come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Seeded hash-based model; see [`SyntheticModelSpec`].
    Synthetic(SyntheticModelSpec),
    /// Serves only tokens previously recorded in the query cache.
    Replay,
    /// Completion API endpoint queried over HTTP.
    #[cfg(feature = "http")]
    Http(HttpEndpoint),
}

impl Backend {
    fn kind(&self) -> &'static str {
        match self {
            Backend::Synthetic(_) => "synthetic",
            Backend::Replay => "replay",
            #[cfg(feature = "http")]
            Backend::Http(_) => "http",
        }
    }
}

/// A queryable model: unique id, backend, and session decode parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelHandle {
    pub id: String,
    pub backend: Backend,
    #[serde(default)]
    pub decode: DecodeParams,
}

impl ModelHandle {
    pub fn synthetic(id: impl Into<String>, spec: SyntheticModelSpec) -> Self {
        ModelHandle { id: id.into(), backend: Backend::Synthetic(spec), decode: DecodeParams::default() }
    }

    pub fn replay(id: impl Into<String>) -> Self {
        ModelHandle { id: id.into(), backend: Backend::Replay, decode: DecodeParams::default() }
    }

    #[cfg(feature = "http")]
    pub fn http(id: impl Into<String>, endpoint: HttpEndpoint) -> Self {
        ModelHandle { id: id.into(), backend: Backend::Http(endpoint), decode: DecodeParams::default() }
    }
}

/// One observed first token for a (model, prompt) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenObservation {
    pub model_id: String,
    pub prompt_hash: u64,
    pub token: String,
}

/// Stable 64-bit content hash of a prompt text.
pub fn prompt_hash64(prompt: &str) -> u64 {
    stable_hash64(&[b"prompt", prompt.as_bytes()])
}

/// Query dispatcher shared by all testers.
///
/// Safe for concurrent callers. Responses are served from the persistent
/// cache when one is attached (write-through otherwise); synthetic models
/// are evaluated as pure functions; HTTP responses are memoised in-session
/// so a (model, prompt) pair is fetched at most once.
pub struct QueryEngine {
    cache: Option<QueryCache>,
    profiles: DashMap<(u32, u64), Arc<ZipfProfile>>,
    #[cfg(feature = "http")]
    memo: DashMap<(String, u64), String>,
    counts: DashMap<String, u64>,
    retries: DashMap<String, u64>,
    #[cfg(feature = "http")]
    http_client: std::sync::OnceLock<reqwest::blocking::Client>,
}

impl Default for QueryEngine {
    fn default() -> Self {
        Self::new()
    }
}

impl QueryEngine {
    pub fn new() -> Self {
        QueryEngine {
            cache: None,
            profiles: DashMap::new(),
            #[cfg(feature = "http")]
            memo: DashMap::new(),
            counts: DashMap::new(),
            retries: DashMap::new(),
            #[cfg(feature = "http")]
            http_client: std::sync::OnceLock::new(),
        }
    }

    /// Engine with a persistent query cache rooted at `dir`.
    pub fn with_cache(dir: impl Into<std::path::PathBuf>) -> Result<Self> {
        let mut engine = Self::new();
        engine.cache = Some(QueryCache::open(dir.into())?);
        Ok(engine)
    }

    /// Returns the model's first output token under greedy decoding.
    ///
    /// Served from the persistent cache when present, otherwise computed or
    /// fetched and written through.
    pub fn query_first_token(&self, model: &ModelHandle, prompt: &str) -> Result<TokenObservation> {
        if prompt.is_empty() {
            return Err(Error::invalid("prompt must be non-empty"));
        }
        self.bump_count(&model.id);
        let prompt_hash = prompt_hash64(prompt);

        if let Some(cache) = &self.cache {
            if let Some(token) = cache.get(model, prompt_hash)? {
                return Ok(TokenObservation { model_id: model.id.clone(), prompt_hash, token });
            }
        }

        let token = match &model.backend {
            Backend::Synthetic(spec) => self.synth_token_cached(spec, prompt)?,
            Backend::Replay => {
                return Err(Error::CacheMiss { model_id: model.id.clone(), prompt_hash });
            }
            #[cfg(feature = "http")]
            Backend::Http(endpoint) => {
                let memo_key = (model.id.clone(), prompt_hash);
                match self.memo.get(&memo_key) {
                    Some(token) => token.clone(),
                    None => {
                        let client = self.http_client.get_or_init(http::build_client);
                        let (token, retries) = http::http_first_token(client, &model.id, endpoint, prompt)?;
                        if retries > 0 {
                            *self.retries.entry(model.id.clone()).or_insert(0) += retries as u64;
                        }
                        self.memo.insert(memo_key, token.clone());
                        token
                    }
                }
            }
        };

        if let Some(cache) = &self.cache {
            cache.put(model, prompt_hash, &token)?;
        }
        Ok(TokenObservation { model_id: model.id.clone(), prompt_hash, token })
    }

    /// Number of `query_first_token` calls seen for a model (cache hits included).
    pub fn query_count(&self, model_id: &str) -> u64 {
        self.counts.get(model_id).map(|c| *c).unwrap_or(0)
    }

    /// Number of rate-limit retries performed for a model.
    pub fn retry_count(&self, model_id: &str) -> u64 {
        self.retries.get(model_id).map(|c| *c).unwrap_or(0)
    }

    fn bump_count(&self, model_id: &str) {
        if let Some(mut c) = self.counts.get_mut(model_id) {
            *c += 1;
            return;
        }
        *self.counts.entry(model_id.to_string()).or_insert(0) += 1;
    }

    fn synth_token_cached(&self, spec: &SyntheticModelSpec, prompt: &str) -> Result<String> {
        let key = (spec.vocab_size, spec.zipf_exponent.to_bits());
        let profile = match self.profiles.get(&key) {
            Some(p) => Arc::clone(&p),
            None => {
                spec.validate()?;
                let p = Arc::new(ZipfProfile::new(spec.vocab_size, spec.zipf_exponent));
                self.profiles.entry(key).or_insert(p).clone()
            }
        };
        Ok(synthetic::synth_token_with(spec, &profile, prompt))
    }
}
