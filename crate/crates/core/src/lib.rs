//! Generative retrieval on embedding corpora: identifier assignment, a small
//! conditional autoregressive scorer, trie-constrained beam search, a dense
//! baseline, evaluation and latency benchmarks.

pub mod baseline;
pub mod bench;
pub mod corpus;
pub mod decoder;
pub mod eval;
pub mod identifier;
pub mod provenance;
pub mod results;
pub mod scalar;
pub mod scorer;
pub mod trie;

pub use corpus::{Corpus, ItemId, ItemRecord, Query, Split, SplitFilter};
pub use identifier::{IdMap, Identifier, Scheme, TokenId, Vocabulary};
pub use scalar::Scalar;
pub use scorer::{ScorerParams, Task, TrainConfig};
pub use trie::Trie;

pub type Corpus32 = Corpus<f32>;
pub type Corpus64 = Corpus<f64>;
pub type Params32 = ScorerParams<f32>;
pub type Params64 = ScorerParams<f64>;

/// Worker threads for per-query parallel work: `GENRET_THREADS` if set to a
/// positive integer, otherwise the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("GENRET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
