//! Describe how one text distribution differs from another.
//!
//! A discriminator picks representative samples from each side, a completion
//! backend proposes natural-language hypotheses from them, and a judgment
//! backend scores every hypothesis on shared cross pairs. Hypotheses are
//! ranked by estimated classification accuracy.

pub mod backends;
pub mod bench;
pub mod config;
pub mod corpus;
pub mod discriminator;
pub mod pipeline;
pub mod proposer;
mod util;
pub mod verifier;

pub use backends::{BackendError, BackendSpec, Backends, EndpointConfig, Registry, RuleBackend};
pub use config::RunConfig;
pub use corpus::{Corpus, DistributionPair, Sample};
pub use pipeline::{Engine, PipelineError, Report};
pub use proposer::{CandidateSet, Hypothesis};
pub use verifier::{CAEstimate, PairSet, Verifier};
