//! Workbench for studying how sharing or separating token identities across
//! two languages affects a small causal language model.
//!
//! The pipeline runs corpus ingestion and frequency counting ([`corpus`]),
//! classification of overlapping forms into the four sharing conditions
//! ([`lexicon`]), byte-level BPE with per-condition vocabularies
//! ([`tokenizer`]), a decoder-only transformer with a sequential two-language
//! training regime ([`model`]), surprisal and embedding probes ([`probes`])
//! and random-intercept mixed models ([`stats`]). [`pipeline`] drives the
//! stages from a config file.

pub mod corpus;
pub mod error;
pub mod lang;
pub mod lexicon;
pub mod model;
pub mod pipeline;
pub mod probes;
pub mod stats;
pub mod synthetic;
pub mod tokenizer;
pub mod workflow;

pub use error::{Error, Result};
pub use lang::{LanguageNames, LanguageTag};
