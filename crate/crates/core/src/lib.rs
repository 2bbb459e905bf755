//! Black-box model provenance testing.
//!
//! Given query access to a target model `g` and a pool of candidate parent
//! and control models, the testers in this crate decide whether `g` was
//! derived from one of the candidates by comparing first-output-token
//! agreement ratios under multiple hypothesis testing, with the family-wise
//! false-positive rate bounded by a caller-chosen significance level.
//!
//! The crate is organised as:
//!
//! * [`stats`] — the one-sided two-proportion z-test, the Holm-Bonferroni
//!   step-down correction, and the successive-elimination confidence radius;
//! * [`modelio`] — a uniform prompt → first-token interface over synthetic,
//!   replay-cache, and HTTP completion backends, with a persistent query
//!   cache so offline queries can be reused across tests;
//! * [`prompts`] — prompt corpus handling, uniform i.i.d. sampling, and the
//!   agreement-driven rejection sampler that concentrates statistical power
//!   per prompt;
//! * [`tester`] — the pairwise tester, the candidate-set tester, and the
//!   best-arm-identification elimination tester;
//! * [`bench`] — a deterministic synthetic model zoo plus the
//!   precision/recall evaluation and control-set ablation harness.

pub mod bench;
pub mod modelio;
pub mod prompts;
pub mod seed;
pub mod stats;
pub mod tester;

use thiserror::Error;

/// Crate-wide error type.
///
/// Backend failures are split into distinct variants so callers can tell a
/// retryable transport problem apart from a permanent cache miss.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("prompt corpus is empty")]
    EmptyCorpus,

    #[error("prompt source exhausted before the tester terminated")]
    PromptSourceExhausted,

    #[error("replay cache has no recorded token for model `{model_id}` (prompt hash {prompt_hash:016x})")]
    CacheMiss { model_id: String, prompt_hash: u64 },

    #[error("query cache file {path} is corrupt: {detail}")]
    CacheCorrupt { path: String, detail: String },

    #[error("backend unreachable for model `{model_id}`: {detail}")]
    BackendUnreachable { model_id: String, detail: String },

    #[error("malformed backend response for model `{model_id}`: {detail}")]
    MalformedResponse { model_id: String, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
