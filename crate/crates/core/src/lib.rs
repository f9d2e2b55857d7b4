//! Deterministic bounds on near-verbatim training-data extraction probability.
//!
//! The crate is organised around a small number of pieces:
//!
//! * [`model`]: token distribution providers, top-k decoding and teacher forcing.
//! * [`distance`]: Hamming / Levenshtein distances, ε-ball sizes and streaming
//!   viability oracles.
//! * [`search`]: top-k constrained beam search (baseline and ε-pruned) with
//!   lower/upper bound and mass accounting.
//! * [`estimators`]: Monte Carlo estimation, sample-size calculators and the
//!   exhaustive oracle used as ground truth on small instances.
//! * [`metrics`]: corpus-level aggregation of per-sequence results.
//! * [`corpus`]: chunking raw text into prefix/suffix records and JSONL I/O.

pub mod corpus;
pub mod distance;
pub mod error;
pub mod estimators;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod search;

pub use error::{Error, Result};
pub use model::{DecodingPolicy, LogitRow, StepDistribution, TokenDistributionProvider, TokenId, Vocabulary};
pub use numeric::LogProb;
