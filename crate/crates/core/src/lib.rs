//! Hallucination detection and mitigation toolkit for offline LLM generation logs.
//!
//! The crate is organized the way a detection run flows:
//!
//! - [`records`]: the JSONL data model for prompts and sampled responses.
//! - [`uncertainty`]: token-level entropy, empirical label entropy, ensemble
//!   disagreement and verbalized-confidence parsing.
//! - [`semantic`]: embedding, agglomerative clustering and semantic entropy.
//! - [`calibration`]: ECE, temperature scaling, isotonic regression (PAV),
//!   credible intervals over probability samples and self-evaluation votes.
//! - [`consistency`]: self-consistency consensus, cross-paraphrase agreement
//!   and reasoning/answer entropy decomposition (RACE).
//! - [`grounding`]: fact-checking structured claims against a reference store.
//! - [`mitigation`]: sampling filters, constrained decoding and map-reduce chunking.
//! - [`pipeline`]: detect, route to a Model/Context/Data tier, validate, and
//!   record outcomes in a ledger.
//! - [`mockgen`]: seeded synthetic corpora with ground-truth labels.
//!
//! All logarithms are natural; entropies are reported in nats.

// `!(x > 0.0)` is used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod consistency;
pub mod error;
pub mod grounding;
pub mod mitigation;
pub mod mockgen;
pub mod pipeline;
pub mod records;
pub mod semantic;
pub mod uncertainty;

pub use error::{Error, Result};
