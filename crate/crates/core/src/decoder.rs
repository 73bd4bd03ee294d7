//! Beam search over identifier tokens, optionally constrained by a trie.
//!
//! The beam holds at most `beam` hypotheses. Finished hypotheses stay in the
//! beam and compete by total log-probability with the extensions of the
//! unfinished ones; the search stops once every hypothesis in the beam is
//! finished. Ties are broken by token sequence, so results are reproducible.

use std::cmp::Ordering;

use thiserror::Error;

use crate::corpus::{ItemId, Query};
use crate::identifier::{TokenId, Vocabulary};
use crate::scalar::Scalar;
use crate::scorer::{ScorerError, ScorerParams, Task};
use crate::trie::{NodeId, Trie};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("beam size must be at least 1")]
    InvalidBeam,
    #[error("max_len {max_len} is shorter than the longest identifier ({needed})")]
    MaxLenTooShort { max_len: usize, needed: usize },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<TokenId>,
    /// Sum of per-token log-probabilities, accumulated in f64.
    pub logprob: f64,
    pub finished: bool,
    node: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub item: ItemId,
    pub logprob: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalResult {
    /// Sorted by log-probability descending, ties by item id ascending.
    pub ranked: Vec<Ranked>,
    /// Finished sequences produced by the search.
    pub emitted: usize,
    /// Emitted sequences that name a stored item.
    pub valid: usize,
}

impl RetrievalResult {
    pub fn items(&self) -> Vec<ItemId> {
        self.ranked.iter().map(|r| r.item).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam: usize,
    /// Restrict every step to continuations present in the trie.
    pub constrained: bool,
    /// Longest sequence generated; defaults to the trie depth when `None`.
    pub max_len: Option<usize>,
}

impl BeamConfig {
    pub fn constrained(beam: usize) -> Self {
        Self { beam, constrained: true, max_len: None }
    }

    pub fn unconstrained(beam: usize) -> Self {
        Self { beam, constrained: false, max_len: None }
    }
}

enum Cand {
    Frozen(usize),
    Extend { parent: usize, token: TokenId, node: Option<NodeId> },
}

struct Scored {
    cand: Cand,
    logprob: f64,
}

fn cand_tokens<'a>(c: &'a Cand, pool: &'a [BeamHypothesis]) -> (&'a [TokenId], Option<TokenId>) {
    match *c {
        Cand::Frozen(i) => (&pool[i].tokens, None),
        Cand::Extend { parent, token, .. } => (&pool[parent].tokens, Some(token)),
    }
}

fn cmp_candidates(a: &Scored, b: &Scored, pool: &[BeamHypothesis]) -> Ordering {
    b.logprob.total_cmp(&a.logprob).then_with(|| {
        let (pa, ta) = cand_tokens(&a.cand, pool);
        let (pb, tb) = cand_tokens(&b.cand, pool);
        pa.iter().chain(ta.iter()).cmp(pb.iter().chain(tb.iter()))
    })
}

/// Raw beam search. With a trie, only trie continuations are considered;
/// without one, every vocabulary token is, and a hypothesis ends at EOS or
/// when it reaches `max_len` tokens. Returns the finished hypotheses, best
/// first.
pub fn generate<T: Scalar>(
    params: &ScorerParams<T>,
    condition: &[T],
    task: Task,
    beam: usize,
    trie: Option<&Trie>,
    max_len: usize,
) -> Result<Vec<BeamHypothesis>, DecodeError> {
    if beam == 0 {
        return Err(DecodeError::InvalidBeam);
    }
    if let Some(t) = trie {
        if max_len < t.max_depth() {
            return Err(DecodeError::MaxLenTooShort { max_len, needed: t.max_depth() });
        }
    }
    let mut pool = vec![BeamHypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: max_len == 0,
        node: trie.map(|_| Trie::ROOT),
    }];
    while pool.iter().any(|h| !h.finished) {
        let active: Vec<usize> = (0..pool.len()).filter(|&i| !pool[i].finished).collect();
        let prefixes: Vec<&[TokenId]> = active.iter().map(|&i| pool[i].tokens.as_slice()).collect();
        let scores = params.score_batch(condition, task, &prefixes)?;

        let mut cands: Vec<Scored> = (0..pool.len())
            .filter(|&i| pool[i].finished)
            .map(|i| Scored { cand: Cand::Frozen(i), logprob: pool[i].logprob })
            .collect();
        for (row, &parent) in active.iter().enumerate() {
            let base = pool[parent].logprob;
            let lp = scores.row(row);
            match (trie, pool[parent].node) {
                (Some(t), Some(node)) => {
                    for (token, child) in t.children(node) {
                        cands.push(Scored {
                            cand: Cand::Extend { parent, token, node: Some(child) },
                            logprob: base + lp[token as usize].as_f64(),
                        });
                    }
                }
                _ => {
                    for (token, &x) in lp.iter().enumerate() {
                        cands.push(Scored {
                            cand: Cand::Extend { parent, token: token as TokenId, node: None },
                            logprob: base + x.as_f64(),
                        });
                    }
                }
            }
        }
        if cands.len() > beam {
            cands.select_nth_unstable_by(beam - 1, |a, b| cmp_candidates(a, b, &pool));
            cands.truncate(beam);
        }
        cands.sort_by(|a, b| cmp_candidates(a, b, &pool));

        let next: Vec<BeamHypothesis> = cands
            .into_iter()
            .map(|s| match s.cand {
                Cand::Frozen(i) => pool[i].clone(),
                Cand::Extend { parent, token, node } => {
                    let mut tokens = Vec::with_capacity(pool[parent].tokens.len() + 1);
                    tokens.extend_from_slice(&pool[parent].tokens);
                    tokens.push(token);
                    let finished = token == Vocabulary::EOS || tokens.len() >= max_len;
                    BeamHypothesis { tokens, logprob: s.logprob, finished, node }
                }
            })
            .collect();
        if next.is_empty() {
            // nothing left to extend (empty trie)
            pool.clear();
            break;
        }
        pool = next;
    }
    Ok(pool)
}

/// Beam search mapped through `trie` lookup. In unconstrained mode the trie
/// is used only to map generated sequences to items; sequences that name no
/// item are dropped and counted as invalid.
pub fn beam_search<T: Scalar>(
    params: &ScorerParams<T>,
    condition: &[T],
    task: Task,
    trie: &Trie,
    cfg: BeamConfig,
) -> Result<RetrievalResult, DecodeError> {
    let max_len = cfg.max_len.unwrap_or(trie.max_depth());
    let hyps = generate(params, condition, task, cfg.beam, cfg.constrained.then_some(trie), max_len)?;
    let mut ranked: Vec<Ranked> = hyps
        .iter()
        .filter_map(|h| trie.lookup(&h.tokens).map(|item| Ranked { item, logprob: h.logprob }))
        .collect();
    ranked.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then(a.item.cmp(&b.item)));
    Ok(RetrievalResult { emitted: hyps.len(), valid: ranked.len(), ranked })
}

/// Retrieve-task search for one query.
pub fn retrieve<T: Scalar>(
    params: &ScorerParams<T>,
    query: &Query<T>,
    trie: &Trie,
    cfg: BeamConfig,
) -> Result<RetrievalResult, DecodeError> {
    beam_search(params, &query.embedding, Task::Retrieve, trie, cfg)
}

/// Decodes every query, splitting the work over `threads` scoped workers.
/// Output order follows `queries`.
pub fn retrieve_all<T: Scalar>(
    params: &ScorerParams<T>,
    queries: &[Query<T>],
    trie: &Trie,
    cfg: BeamConfig,
    threads: usize,
) -> Result<Vec<RetrievalResult>, DecodeError> {
    let threads = threads.clamp(1, queries.len().max(1));
    if threads == 1 {
        return queries.iter().map(|q| retrieve(params, q, trie, cfg)).collect();
    }
    let chunk = queries.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|qs| s.spawn(move || qs.iter().map(|q| retrieve(params, q, trie, cfg)).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(queries.len());
        for h in handles {
            out.extend(h.join().expect("decoder worker panicked")?);
        }
        Ok(out)
    })
}
