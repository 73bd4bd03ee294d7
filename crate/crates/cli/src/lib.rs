//! Command-line front end: individual stages as subcommands plus a
//! resumable end-to-end pipeline driven by one config file.

pub mod cli;
pub mod config;
pub mod pipeline;
pub mod stages;

use std::io;
use std::path::PathBuf;

use genret::baseline::BaselineError;
use genret::bench::BenchError;
use genret::corpus::CorpusError;
use genret::decoder::DecodeError;
use genret::eval::EvalError;
use genret::identifier::{AssignError, IdMapError};
use genret::results::ResultsError;
use genret::scorer::checkpoint::CheckpointError;
use genret::scorer::{ScorerError, TrainError};
use genret::trie::TrieError;
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("path does not exist: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("item {0} is not in any loaded identifier map")]
    UnknownItem(u32),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    IdMap(#[from] IdMapError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Results(#[from] ResultsError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    /// Stable name of the variant, for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "Config",
            CliError::MissingPath(_) => "MissingPath",
            CliError::UnknownItem(_) => "UnknownItem",
            CliError::Corpus(_) => "Corpus",
            CliError::IdMap(_) => "IdMap",
            CliError::Assign(_) => "Assign",
            CliError::Scorer(_) => "Scorer",
            CliError::Train(_) => "Train",
            CliError::Checkpoint(_) => "Checkpoint",
            CliError::Trie(_) => "Trie",
            CliError::Decode(_) => "Decode",
            CliError::Eval(_) => "Eval",
            CliError::Bench(_) => "Bench",
            CliError::Baseline(_) => "Baseline",
            CliError::Results(_) => "Results",
            CliError::Io(_) => "Io",
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}
