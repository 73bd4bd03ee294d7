//! Exact dot-product scan over item embeddings.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};
use thiserror::Error;

use crate::corpus::{Corpus, ItemId, Query, SplitFilter};
use crate::decoder::{Ranked, RetrievalResult};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BaselineError {
    #[error("no items in the requested split")]
    EmptySplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex<T> {
    ids: Vec<ItemId>,
    /// One row per item, rows in item id order.
    matrix: Array2<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<T> {
    pub item: ItemId,
    pub score: T,
}

pub fn build_index<T: Scalar>(corpus: &Corpus<T>, filter: SplitFilter) -> Result<DenseIndex<T>, BaselineError> {
    let ids: Vec<ItemId> = corpus.ids_in(filter).collect();
    if ids.is_empty() {
        return Err(BaselineError::EmptySplit);
    }
    let mut matrix = Array2::zeros((ids.len(), corpus.dim()));
    for (mut row, id) in matrix.rows_mut().into_iter().zip(&ids) {
        let rec = corpus.get(*id).expect("id comes from the corpus");
        row.assign(&ArrayView1::from(rec.embedding.as_slice()));
    }
    Ok(DenseIndex { ids, matrix })
}

fn by_score_then_id<T: Scalar>(a: &Hit<T>, b: &Hit<T>) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.item.cmp(&b.item))
}

impl<T: Scalar> DenseIndex<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    /// Inner product of `query` with every indexed item, in index order.
    ///
    /// # Panics
    /// If `query` does not have the index dimension.
    pub fn scores(&self, query: &[T]) -> Vec<T> {
        assert_eq!(query.len(), self.dim(), "query dimension");
        self.matrix.dot(&ArrayView1::from(query)).to_vec()
    }

    /// Top `topk` items by inner product, ties broken by item id.
    pub fn search(&self, query: &[T], topk: usize) -> Vec<Hit<T>> {
        let mut hits: Vec<Hit<T>> = self
            .scores(query)
            .into_iter()
            .zip(&self.ids)
            .map(|(score, &item)| Hit { item, score })
            .collect();
        let k = topk.min(hits.len());
        if k == 0 {
            return Vec::new();
        }
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, by_score_then_id);
            hits.truncate(k);
        }
        hits.sort_by(by_score_then_id);
        hits
    }

    /// Search results in the same shape the decoder produces.
    pub fn retrieve(&self, query: &[T], topk: usize) -> RetrievalResult {
        let ranked: Vec<Ranked> = self
            .search(query, topk)
            .into_iter()
            .map(|h| Ranked { item: h.item, logprob: h.score.as_f64() })
            .collect();
        RetrievalResult { emitted: ranked.len(), valid: ranked.len(), ranked }
    }

    pub fn retrieve_all(&self, queries: &[Query<T>], topk: usize, threads: usize) -> Vec<RetrievalResult> {
        let threads = threads.clamp(1, queries.len().max(1));
        if threads == 1 {
            return queries.iter().map(|q| self.retrieve(&q.embedding, topk)).collect();
        }
        let chunk = queries.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = queries
                .chunks(chunk)
                .map(|qs| s.spawn(move || qs.iter().map(|q| self.retrieve(&q.embedding, topk)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("search worker panicked"))
                .collect()
        })
    }
}
