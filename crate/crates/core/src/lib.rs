//! Faithfulness evaluation and dataset curation for cross-lingual summarisation.
//!
//! The pipeline runs roughly left to right through the modules:
//!
//! * [`corpus`] reads document/summary pairs and X-NLI style aligned rows.
//! * [`scorer`] turns premise/hypothesis pairs into three-way NLI distributions
//!   (deterministic mock, persistent cache, or a remote HTTP service).
//! * [`aggregate`] builds entailment matrices and applies the premise selection
//!   strategies (full document, best sentence, top-k, incremental).
//! * [`benchmark`] compares strategy scores against human judgements.
//! * [`annotate`] converts scores into faithfulness labels and subset selections.
//! * [`transform`] emits Clean / Mask / Unlike training data.
//! * [`losses`] holds reference implementations of the training objectives.
//! * [`textmetrics`] computes ROUGE and extractiveness statistics.

pub mod aggregate;
pub mod annotate;
pub mod benchmark;
pub mod corpus;
pub mod error;
pub mod losses;
pub mod scorer;
pub mod textmetrics;
pub mod transform;

pub use error::{Error, Result};
