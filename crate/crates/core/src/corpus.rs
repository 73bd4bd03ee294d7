//! Corpus data model: item records, queries, JSON-lines ingest/export,
//! synthetic corpus generation and train/val/test split assignment.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provenance::is_header;
use crate::scalar::{l2_normalize, Scalar};

/// Dense item index, `0..N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Which items a downstream structure (trie, dense index) covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitFilter {
    All,
    Only(Split),
}

impl SplitFilter {
    pub fn admits(self, split: Split) -> bool {
        match self {
            SplitFilter::All => true,
            SplitFilter::Only(s) => s == split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord<T> {
    pub id: ItemId,
    pub embedding: Vec<T>,
    pub captions: Vec<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query<T> {
    pub id: u32,
    pub text: String,
    pub embedding: Vec<T>,
    pub target: ItemId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: embedding has dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate item id {id}")]
    DuplicateId { line: usize, id: ItemId },
    #[error("item ids must form the contiguous range 0..{n}, missing {missing}")]
    NonContiguousIds { n: usize, missing: ItemId },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("split fractions {0:?} must be positive and sum to 1")]
    InvalidFractions((f64, f64, f64)),
    #[error("query {query} targets unknown item {target}")]
    UnknownTarget { query: u32, target: ItemId },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Immutable, validated collection of items sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T> {
    records: Vec<ItemRecord<T>>,
    dim: usize,
}

impl<T: Scalar> Corpus<T> {
    /// Validates the invariants and orders records by id.
    pub fn new(mut records: Vec<ItemRecord<T>>) -> Result<Self, CorpusError> {
        let Some(first) = records.first() else {
            return Ok(Self { records, dim: 0 });
        };
        let dim = first.embedding.len();
        if dim < 2 {
            return Err(CorpusError::InvalidParameter(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.embedding.len() != dim {
                return Err(CorpusError::DimensionMismatch {
                    line: i + 1,
                    expected: dim,
                    found: r.embedding.len(),
                });
            }
            if r.captions.is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: i + 1,
                    reason: "record has no captions".into(),
                });
            }
            if !seen.insert(r.id) {
                return Err(CorpusError::DuplicateId { line: i + 1, id: r.id });
            }
        }
        records.sort_by_key(|r| r.id);
        if let Some((i, _)) = records.iter().enumerate().find(|(i, r)| r.id.index() != *i) {
            return Err(CorpusError::NonContiguousIds {
                n: records.len(),
                missing: ItemId(i as u32),
            });
        }
        Ok(Self { records, dim })
    }

    pub fn records(&self) -> &[ItemRecord<T>] {
        &self.records
    }

    pub fn get(&self, id: ItemId) -> Option<&ItemRecord<T>> {
        self.records.get(id.index())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split_counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for r in &self.records {
            match r.split {
                Split::Train => c.train += 1,
                Split::Val => c.val += 1,
                Split::Test => c.test += 1,
            }
        }
        c
    }

    pub fn ids_in(&self, filter: SplitFilter) -> impl Iterator<Item = ItemId> + '_ {
        self.records
            .iter()
            .filter(move |r| filter.admits(r.split))
            .map(|r| r.id)
    }

    pub fn split_of(&self, id: ItemId) -> Option<Split> {
        self.get(id).map(|r| r.split)
    }

    /// Relabels splits with a seeded shuffle. Sizes are `floor(N·f)` for val and
    /// test; the remainder goes to train.
    pub fn split_assign(
        mut self,
        fractions: (f64, f64, f64),
        seed: u64,
    ) -> Result<Self, CorpusError> {
        let (tr, va, te) = fractions;
        let valid = [tr, va, te].iter().all(|f| f.is_finite() && *f > 0.0)
            && ((tr + va + te) - 1.0).abs() <= 1e-9;
        if !valid {
            return Err(CorpusError::InvalidFractions(fractions));
        }
        let n = self.records.len();
        // Tiny slack so that e.g. 0.1 * 30 = 2.9999999999999996 floors to 3.
        let n_val = ((n as f64) * va + 1e-9).floor() as usize;
        let n_test = ((n as f64) * te + 1e-9).floor() as usize;
        let n_train = n - n_val - n_test;

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for (rank, &idx) in order.iter().enumerate() {
            self.records[idx].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        Ok(self)
    }

    /// Checks that every query targets an existing item and matches the corpus dimension.
    pub fn validate_queries(&self, queries: &[Query<T>]) -> Result<(), CorpusError> {
        for q in queries {
            if self.get(q.target).is_none() {
                return Err(CorpusError::UnknownTarget {
                    query: q.id,
                    target: q.target,
                });
            }
            if q.embedding.len() != self.dim {
                return Err(CorpusError::DimensionMismatch {
                    line: q.id as usize + 1,
                    expected: self.dim,
                    found: q.embedding.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub normalize: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

/// Reads a JSON-lines corpus: one `{"id", "embedding", "captions", "split"}` object per line.
pub fn ingest<T: Scalar>(path: &Path, opts: IngestOptions) -> Result<Corpus<T>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records: Vec<ItemRecord<T>> = Vec::new();
    let mut dim = None;
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut rec: ItemRecord<T> =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: lineno,
                reason: e.to_string(),
            })?;
        let expected = *dim.get_or_insert(rec.embedding.len());
        if rec.embedding.len() != expected {
            return Err(CorpusError::DimensionMismatch {
                line: lineno,
                expected,
                found: rec.embedding.len(),
            });
        }
        if !seen.insert(rec.id) {
            return Err(CorpusError::DuplicateId {
                line: lineno,
                id: rec.id,
            });
        }
        if rec.captions.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: lineno,
                reason: "record has no captions".into(),
            });
        }
        if opts.normalize {
            l2_normalize(&mut rec.embedding);
        }
        records.push(rec);
    }
    Corpus::new(records)
}

pub fn export<T: Scalar>(
    corpus: &Corpus<T>,
    path: &Path,
    header: Option<&str>,
) -> Result<(), CorpusError> {
    write_jsonl(corpus.records(), path, header)
}

pub fn export_queries<T: Scalar>(
    queries: &[Query<T>],
    path: &Path,
    header: Option<&str>,
) -> Result<(), CorpusError> {
    write_jsonl(queries, path, header)
}

pub fn read_queries<T: Scalar>(path: &Path) -> Result<Vec<Query<T>>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || is_header(&line) || line.starts_with('#') {
            continue;
        }
        let q = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

fn write_jsonl<R: Serialize>(rows: &[R], path: &Path, header: Option<&str>) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(w, "{h}")?;
    }
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parameters of the synthetic Gaussian corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_items: usize,
    pub dim: usize,
    pub queries_per_item: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 1000,
            dim: 32,
            queries_per_item: 5,
            noise_sigma: 0.05,
            seed: 7,
        }
    }
}

pub fn synthetic_caption(item: usize, variant: usize) -> String {
    format!("cap {item} {variant}")
}

/// Generates unit-norm Gaussian item embeddings and noisy queries around them.
///
/// Every record is labelled `train`; use [`Corpus::split_assign`] afterwards.
/// With `noise_sigma == 0` each query embedding is an exact copy of its target's.
pub fn synthesize<T: Scalar>(cfg: &SynthConfig) -> Result<(Corpus<T>, Vec<Query<T>>), CorpusError> {
    if cfg.n_items == 0 || cfg.dim < 2 || cfg.queries_per_item == 0 {
        return Err(CorpusError::InvalidParameter(format!(
            "need n_items >= 1, dim >= 2, queries_per_item >= 1 (got {}, {}, {})",
            cfg.n_items, cfg.dim, cfg.queries_per_item
        )));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(CorpusError::InvalidParameter(format!(
            "noise_sigma must be finite and non-negative, got {}",
            cfg.noise_sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_captions = cfg.queries_per_item.min(5);

    let mut base: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_items);
    let mut records = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let mut e: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        l2_normalize(&mut e);
        records.push(ItemRecord {
            id: ItemId(i as u32),
            embedding: e.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            captions: (0..n_captions).map(|v| synthetic_caption(i, v)).collect(),
            split: Split::Train,
        });
        base.push(e);
    }

    let mut queries = Vec::with_capacity(cfg.n_items * cfg.queries_per_item);
    for (i, e) in base.iter().enumerate() {
        for v in 0..cfg.queries_per_item {
            let noise: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let embedding = if cfg.noise_sigma == 0.0 {
                records[i].embedding.clone()
            } else {
                let mut q: Vec<f64> = e
                    .iter()
                    .zip(&noise)
                    .map(|(x, z)| x + cfg.noise_sigma * z)
                    .collect();
                l2_normalize(&mut q);
                q.into_iter().map(T::from_f64_lossy).collect()
            };
            queries.push(Query {
                id: (i * cfg.queries_per_item + v) as u32,
                text: synthetic_caption(i, v),
                embedding,
                target: ItemId(i as u32),
            });
        }
    }
    Ok((Corpus::new(records)?, queries))
}
