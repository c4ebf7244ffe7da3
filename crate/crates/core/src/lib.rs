//! Integrates gene-expression datasets and a gene ontology into one
//! knowledge graph, learns node embeddings from random walks, and trains
//! GCN / MLP patient classifiers under single-dataset, multi-dataset and
//! transfer protocols.
//!
//! Pipeline stages, in order:
//!
//! - [`expression`]: series-matrix parsing, probe filtering, duplicate
//!   averaging and per-patient z-scores.
//! - [`kg`] / [`ntriples`]: ontology + annotation graph and patient-gene
//!   links.
//! - [`walker`]: depth-bounded directed walks.
//! - [`embedder`]: skip-gram with negative sampling, incremental updates.
//! - [`gnn`] and [`classifiers`]: weighted GCN and MLP.
//! - [`harness`]: cross-validation, metrics, experiment settings and a
//!   planted-signal synthetic data generator.

pub mod checkpoint;
pub mod classifiers;
pub mod embedder;
pub mod error;
pub mod expression;
pub mod gnn;
pub mod harness;
pub mod kg;
pub mod ntriples;
pub mod seed;
pub mod walker;

pub use error::{Error, Result};
