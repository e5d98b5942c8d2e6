//! guardkit: a policy-aware toolkit for evaluating and training image
//! safety guardrails against pluggable vision-language backends.
//!
//! The crate covers the full loop around a guard model without requiring a
//! GPU or a live endpoint:
//!
//! - **Policies** ([`policy`]): five built-in safety policy levels of
//!   increasing strictness (L1 permissive through L5 zero-tolerance), plus a
//!   schema for custom policies and deterministic prompt rendering.
//! - **Datasets** ([`manifest`]): line-delimited manifests of safe-unsafe
//!   edited image pairs carrying one label per policy, with integrity and
//!   cross-policy consistency checks. A 62-pair benchmark skeleton ships in
//!   [`builtin`].
//! - **Backends** ([`client`]): an OpenAI-compatible HTTP client and a family
//!   of deterministic mocks, behind one retrying, concurrency-capped runner.
//! - **Verdicts** ([`verdict`]): a total parser extracting safe/unsafe
//!   decisions from free-form model output (embedded JSON, final-answer tags,
//!   bare tokens), with explicit handling of ambiguity and abstention.
//! - **Rewards** ([`reward`], [`service`]): verifiable rewards for
//!   group-relative policy optimization, and an HTTP service exposing them to
//!   external training loops.
//! - **Metrics** ([`metrics`]): F1 with Unsafe as the positive class (accuracy
//!   for all-safe policies), macro and sample-weighted aggregation, and
//!   per-category breakdowns.
//! - **Pipelines** ([`pipeline`]): resumable data-construction jobs for
//!   two-step recaptioning and minimal safe-direction image edits.
//! - **Harness** ([`harness`]): cross-policy evaluation producing persisted,
//!   replayable runs and deterministic reports.
//!
//! See the crate `examples/` directory for a runnable walkthrough of each
//! capability.

pub mod builtin;
pub mod client;
pub mod error;
pub mod harness;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod service;
pub mod verdict;

pub use error::{Error, Result};
pub use manifest::{DatasetManifest, SafetyLabel, SampleRecord};
pub use policy::{Policy, PolicyRegistry};
pub use verdict::{parse_verdict, AbstainPolicy, ParseRules, Verdict};
