//! Representation-fairness and utility evaluation for ranked retrieval.
//!
//! Documents get a neutrality score from attribute word lists
//! ([`neutrality`]). Rankings are then judged by how neutral their top results
//! are relative to the best ordering of a background set ([`fairness`]), next
//! to MRR, NDCG and Recall ([`utility`]). [`tradeoff`] selects among model
//! variations by F-beta over both gains, and [`sandbox`] trains a small
//! adversarially debiased ranker on a synthetic corpus. [`ingest`] reads and
//! writes the TREC-style files, and [`cli`] backs the `fairr` binary.
//!
//! Every capability has a runnable program under `examples/`:
//! `neutrality_scoring`, `ranked_fairness`, `set_fairness`,
//! `utility_significance`, `trec_pipeline`, `tradeoff_selection`,
//! `census_names` and `adversarial_sandbox`.

pub mod cli;
pub mod error;
pub mod fairness;
pub mod ingest;
pub mod lexicon;
pub mod neutrality;
pub mod sandbox;
pub mod tradeoff;
pub mod utility;

pub use error::{Error, Result};
