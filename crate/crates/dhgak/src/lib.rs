//! Graph-kernel toolkit built around deep hierarchical graph alignment kernels.
//!
//! The pipeline turns a dataset of labeled graphs into a positive semi-definite
//! Gram matrix in five stages:
//!
//! 1. [`graph`] — load TU-format datasets of undirected, node-labeled graphs.
//! 2. [`centrality`] — rank nodes by eigenvector centrality to fix a canonical
//!    node order.
//! 3. [`slicer`] — encode, for every node and hop distance, a breadth-first
//!    "slice" of its neighborhood as a label sequence.
//! 4. [`embedder`] — embed slices into vectors via skip-gram label embeddings
//!    (or a one-hot fallback) with a decayed deep recurrence across hops.
//! 5. [`alignment`] / [`kernel`] — cluster slice embeddings to build alignment
//!    feature maps, average them per graph, and assemble the per-hop, summed,
//!    and normalized Gram matrices.
//!
//! [`evaluator`] wraps the result in a precomputed-kernel SVM with nested
//! stratified cross-validation and a hyperparameter grid search; [`config`]
//! holds the serializable run configuration; [`synth`] generates random
//! labeled graphs for testing and benchmarking.
//!
//! The crate is data-parallel over graphs, clustering restarts, and Gram rows
//! when built with the default `parallel` feature (rayon); disabling it yields
//! a fully sequential build with identical results.

// The numeric code walks several parallel matrices at offset indices; plain
// index loops stay closer to the formulas than zipped iterators would.
#![allow(clippy::needless_range_loop)]

pub mod alignment;
pub mod centrality;
pub mod config;
pub mod embedder;
pub mod evaluator;
pub mod graph;
pub mod kernel;
pub mod mat;
pub mod slicer;
pub mod synth;

pub(crate) mod exec;

use std::path::PathBuf;

/// Errors produced by dataset IO, configuration validation, and the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),
    #[error("cannot normalize Gram matrix: diagonal entry {index} is {value}")]
    DegenerateDiagonal { index: usize, value: f64 },
    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// An I/O error tagged with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }
}
