//! Completion (proposer side) and judgment (verifier side) backends.

mod http;
#[cfg(feature = "mock-server")]
pub mod mock;
pub mod rules;
mod store;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{EndpointConfig, HttpBackend, RouteStyle};
pub use rules::{Registry, RuleBackend, RulePredicate};
pub use store::{StoreMode, Stored, TranscriptStore};

use crate::util::digest_parts;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("authentication failed (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider error (HTTP {status}): {body}")]
    Provider { status: u16, body: String },
    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("no recorded response for request {hash}")]
    ReplayMiss { hash: String },
    #[error("prompt does not follow the proposer template: {0}")]
    UnparseablePrompt(String),
    #[error("transcript store: {0}")]
    Store(String),
    #[error("{0}")]
    Unsupported(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            Self::RateLimited { .. } | Self::Transport(_) | Self::Provider { status: 500..=599, .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub n: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
    pub forbidden_tokens: Vec<String>,
}

impl CompletionRequest {
    /// Hash of the canonical request body.
    pub fn hash(&self) -> String {
        let body = serde_json::to_string(self).expect("request serializes");
        digest_parts(&["completion", &body])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRequest {
    pub question: String,
    pub context: String,
}

impl JudgmentRequest {
    pub fn hash(&self) -> String {
        let body = serde_json::to_string(self).expect("request serializes");
        digest_parts(&["judgment", &body])
    }
}

pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError>;
}

pub trait JudgmentBackend: Send + Sync {
    fn id(&self) -> String;
    fn judge(&self, req: &JudgmentRequest) -> Result<String, BackendError>;
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        (**self).complete(req)
    }
}

impl<T: JudgmentBackend + ?Sized> JudgmentBackend for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn judge(&self, req: &JudgmentRequest) -> Result<String, BackendError> {
        (**self).judge(req)
    }
}

/// How a run obtains one of its two backends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Rule,
    Http,
    /// HTTP, with every exchange appended to a transcript.
    Record(String),
    /// Served only from a transcript; no network.
    Replay(String),
    /// Transcript first, HTTP on a miss.
    Cache(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let path = |p: &str| {
            if p.is_empty() {
                Err(format!("backend `{s}` needs a path"))
            } else {
                Ok(p.to_string())
            }
        };
        match s.split_once(':') {
            None if s == "rule" => Ok(Self::Rule),
            None if s == "http" => Ok(Self::Http),
            Some(("record", p)) => path(p).map(Self::Record),
            Some(("replay", p)) => path(p).map(Self::Replay),
            Some(("cache", p)) => path(p).map(Self::Cache),
            _ => Err(format!(
                "unknown backend `{s}` (expected rule, http, record:<path>, replay:<path> or cache:<path>)"
            )),
        }
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Rule => f.write_str("rule"),
            Self::Http => f.write_str("http"),
            Self::Record(p) => write!(f, "record:{p}"),
            Self::Replay(p) => write!(f, "replay:{p}"),
            Self::Cache(p) => write!(f, "cache:{p}"),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl BackendSpec {
    fn transcript(&self) -> Option<(&str, StoreMode)> {
        match self {
            Self::Record(p) => Some((p, StoreMode::Record)),
            Self::Replay(p) => Some((p, StoreMode::Replay)),
            Self::Cache(p) => Some((p, StoreMode::Cache)),
            _ => None,
        }
    }
}

/// The two backends a run uses.
#[derive(Clone)]
pub struct Backends {
    pub proposer: Arc<dyn CompletionBackend>,
    pub verifier: Arc<dyn JudgmentBackend>,
}

impl Backends {
    pub fn rule() -> Self {
        let rule = Arc::new(RuleBackend::default());
        Self {
            proposer: rule.clone(),
            verifier: rule,
        }
    }

    /// Builds both backends; when proposer and verifier name the same
    /// transcript file they share one store.
    pub fn from_specs(
        proposer: &BackendSpec,
        proposer_endpoint: &EndpointConfig,
        verifier: &BackendSpec,
        verifier_endpoint: &EndpointConfig,
    ) -> Result<Self, BackendError> {
        let rule = Arc::new(RuleBackend::default());
        let mut stores: Vec<(String, Arc<TranscriptStore>)> = Vec::new();
        let mut open = |path: &str| -> Result<Arc<TranscriptStore>, BackendError> {
            if let Some((_, s)) = stores.iter().find(|(p, _)| p == path) {
                return Ok(s.clone());
            }
            let s = Arc::new(TranscriptStore::open(path.as_ref())?);
            stores.push((path.to_string(), s.clone()));
            Ok(s)
        };

        let proposer_backend: Arc<dyn CompletionBackend> = match proposer {
            BackendSpec::Rule => rule.clone(),
            BackendSpec::Http => Arc::new(HttpBackend::new(proposer_endpoint.clone())),
            spec => {
                let (path, mode) = spec.transcript().expect("transcript spec");
                let inner: Option<Arc<dyn CompletionBackend>> = match mode {
                    StoreMode::Replay => None,
                    _ => Some(Arc::new(HttpBackend::new(proposer_endpoint.clone()))),
                };
                Arc::new(Stored::new(mode, inner, open(path)?))
            }
        };
        let verifier_backend: Arc<dyn JudgmentBackend> = match verifier {
            BackendSpec::Rule => rule.clone(),
            BackendSpec::Http => Arc::new(HttpBackend::new(verifier_endpoint.clone())),
            spec => {
                let (path, mode) = spec.transcript().expect("transcript spec");
                let inner: Option<Arc<dyn JudgmentBackend>> = match mode {
                    StoreMode::Replay => None,
                    _ => Some(Arc::new(HttpBackend::new(verifier_endpoint.clone()))),
                };
                Arc::new(Stored::new(mode, inner, open(path)?))
            }
        };
        Ok(Self {
            proposer: proposer_backend,
            verifier: verifier_backend,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_spec_parsing() {
        assert_eq!("rule".parse::<BackendSpec>().unwrap(), BackendSpec::Rule);
        assert_eq!("http".parse::<BackendSpec>().unwrap(), BackendSpec::Http);
        assert_eq!(
            "replay:/tmp/x.jsonl".parse::<BackendSpec>().unwrap(),
            BackendSpec::Replay("/tmp/x.jsonl".into())
        );
        assert!("replay:".parse::<BackendSpec>().is_err());
        assert!("gpt".parse::<BackendSpec>().is_err());
        let s = BackendSpec::Record("a b".into());
        assert_eq!(s.to_string().parse::<BackendSpec>().unwrap(), s);
    }

    #[test]
    fn request_hash_is_sensitive() {
        let a = JudgmentRequest {
            question: "q".into(),
            context: "c".into(),
        };
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.context.push(' ');
        assert_ne!(a.hash(), b.hash());
    }
}
