//! Data machinery for few-shot multilingual open-domain QA.
//!
//! The crate covers the full synthetic-data lifecycle:
//!
//! - [`kb`] — knowledge-base ingestion, triple sampling, false-triple
//!   perturbation, and label translation through language links
//! - [`prompt`] — deterministic rendering of every prompt template used for
//!   triple curation, bulk question generation, and few-shot / cross-lingual /
//!   zero-shot QA generation
//! - [`svc`] — clients for the external model services (generation, NLI,
//!   embedding, translation, judge) with retries, in-flight caps, and
//!   deterministic offline mocks
//! - [`align`] — parsing raw generations into structured examples, span
//!   validation, and positive-passage identification
//! - [`gate`] — the local-to-global NLI filter and the model-as-judge audit
//! - [`sampler`] — answer-length resampling under a truncated geometric
//!   distribution
//! - [`index`] — an exact inner-product top-k vector index with atomic
//!   snapshot refresh
//! - [`loss`] — pure-numeric, gradient-checkable training losses
//! - [`metrics`] — retrieval and QA evaluation metrics with multilingual
//!   tokenization

pub mod align;
pub mod gate;
pub mod index;
pub mod jsonl;
pub mod kb;
pub mod lang;
pub mod loss;
pub mod metrics;
pub mod prompt;
pub mod sampler;
pub mod svc;
