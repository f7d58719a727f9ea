//! Benchmark construction and scoring.

mod dataset;
mod metrics;
mod minimize;
mod run;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::features::KeyPath;

pub use dataset::{
    evaluate_full, first_missing, label_gold, read_jsonl, record_opportunities, write_jsonl,
    DatasetRecord,
};
pub use metrics::{micro_f1, turn_weighted_f1, F1Scores};
pub use minimize::{select_records, CoveragePool, PoolEntry, Selection, Unit};
pub use run::{
    run_benchmark, AgentKind, BenchmarkReport, PairResult, ReportMetadata, RunOptions,
    SessionSummary, UserMode,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("household {household} has no value for {key}")]
    IncompleteProfile { household: usize, key: KeyPath },
    #[error("checker `{opportunity}` failed: {message}")]
    Checker {
        opportunity: String,
        message: String,
    },
    #[error("household {household} has no gold label for `{opportunity}`")]
    Unlabeled {
        household: usize,
        opportunity: String,
    },
    #[error("nothing to score: the dataset has no (household, opportunity) pairs")]
    EmptyReport,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
}

impl BenchError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
