use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::kmeans::{kmeans, KMeansError};
use super::{IdMap, Scheme, TokenId, Vocabulary};
use crate::corpus::{Corpus, ItemId};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssignError {
    #[error("cannot assign identifiers to an empty corpus")]
    EmptyCorpus,
    #[error("structured identifiers need k >= 2 and c >= 1 (got k={k}, c={c})")]
    InvalidTreeShape { k: usize, c: usize },
    #[error(transparent)]
    KMeans(#[from] KMeansError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignOptions {
    pub seed: u64,
    /// Branching factor of the cluster tree.
    pub k: usize,
    /// Largest leaf size.
    pub c: usize,
    pub kmeans_iters: usize,
}

impl Default for AssignOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 10,
            c: 100,
            kmeans_iters: 50,
        }
    }
}

/// Identifiers plus the vocabulary they are spelled in.
#[derive(Debug, Clone)]
pub struct Assignment<T> {
    pub vocab: Vocabulary,
    pub ids: IdMap,
    pub tree: Option<ClusterTree<T>>,
}

/// Builds the base vocabulary of `corpus` and assigns identifiers under `scheme`.
pub fn assign<T: Scalar>(
    scheme: Scheme,
    corpus: &Corpus<T>,
    opts: &AssignOptions,
) -> Result<Assignment<T>, AssignError> {
    let mut vocab = Vocabulary::base(corpus);
    let mut tree = None;
    let ids = match scheme {
        Scheme::String => assign_string(corpus, &vocab, opts.seed)?,
        Scheme::Numeric => assign_numeric(corpus, &vocab, opts.seed)?,
        Scheme::Semantic => assign_semantic(corpus, &mut vocab)?,
        Scheme::Atomic => assign_atomic(corpus, &mut vocab)?,
        Scheme::Structured => {
            let (ids, t) = assign_structured(corpus, &mut vocab, opts)?;
            tree = Some(t);
            ids
        }
    };
    Ok(Assignment { vocab, ids, tree })
}

/// 1-based rank of every item after a seeded shuffle.
fn shuffled_ranks<T: Scalar>(corpus: &Corpus<T>, seed: u64) -> Result<Vec<usize>, AssignError> {
    if corpus.is_empty() {
        return Err(AssignError::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut ranks = vec![0; corpus.len()];
    for (pos, &item) in order.iter().enumerate() {
        ranks[item] = pos + 1;
    }
    Ok(ranks)
}

/// Decimal rank split left to right into two-digit chunks; the last chunk may
/// be a single digit.
pub fn assign_string<T: Scalar>(
    corpus: &Corpus<T>,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<IdMap, AssignError> {
    let ranks = shuffled_ranks(corpus, seed)?;
    let mut map = IdMap::new(Scheme::String);
    for (item, rank) in ranks.into_iter().enumerate() {
        let digits = rank.to_string();
        let mut tokens: Vec<TokenId> = digits
            .as_bytes()
            .chunks(2)
            .map(|chunk| {
                let s = std::str::from_utf8(chunk).expect("ascii digits");
                vocab.id(s).expect("digit tokens are in the base vocabulary")
            })
            .collect();
        tokens.push(Vocabulary::EOS);
        map.insert(ItemId(item as u32), tokens);
    }
    Ok(map)
}

/// Same ranks as [`assign_string`], one digit per token.
pub fn assign_numeric<T: Scalar>(
    corpus: &Corpus<T>,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<IdMap, AssignError> {
    let ranks = shuffled_ranks(corpus, seed)?;
    let mut map = IdMap::new(Scheme::Numeric);
    for (item, rank) in ranks.into_iter().enumerate() {
        let mut tokens: Vec<TokenId> = rank
            .to_string()
            .chars()
            .map(|ch| vocab.id(ch.encode_utf8(&mut [0; 4])).expect("digit tokens are in the base vocabulary"))
            .collect();
        tokens.push(Vocabulary::EOS);
        map.insert(ItemId(item as u32), tokens);
    }
    Ok(map)
}

/// Whitespace-tokenized first caption. Repeats get a numeric suffix token
/// `2`, `3`, ... in item-id order until the sequence is unused.
pub fn assign_semantic<T: Scalar>(
    corpus: &Corpus<T>,
    vocab: &mut Vocabulary,
) -> Result<IdMap, AssignError> {
    if corpus.is_empty() {
        return Err(AssignError::EmptyCorpus);
    }
    let mut used: HashSet<Vec<TokenId>> = HashSet::with_capacity(corpus.len());
    let mut map = IdMap::new(Scheme::Semantic);
    for r in corpus.records() {
        let words: Vec<TokenId> = r.captions[0]
            .split_whitespace()
            .map(|w| vocab.push(w))
            .collect();
        let mut candidate = words.clone();
        let mut k = 2usize;
        while used.contains(&candidate) {
            candidate = words.clone();
            candidate.push(vocab.push(&k.to_string()));
            k += 1;
        }
        used.insert(candidate.clone());
        candidate.push(Vocabulary::EOS);
        map.insert(r.id, candidate);
    }
    Ok(map)
}

/// One dedicated `I_<item_id>` token per item.
pub fn assign_atomic<T: Scalar>(
    corpus: &Corpus<T>,
    vocab: &mut Vocabulary,
) -> Result<IdMap, AssignError> {
    let mut map = IdMap::new(Scheme::Atomic);
    for r in corpus.records() {
        let t = vocab.push(&format!("I_{}", r.id));
        map.insert(r.id, vec![t, Vocabulary::EOS]);
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNode<T> {
    /// 1-based depth; level-1 nodes are children of the root.
    pub level: usize,
    /// 1-based position among siblings after renumbering.
    pub index: usize,
    pub centroid: Vec<T>,
    pub children: Vec<usize>,
    /// Leaf members in item-id order; empty for inner nodes.
    pub members: Vec<ItemId>,
}

impl<T> ClusterNode<T> {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn token(&self) -> String {
        format!("C_{}_{}", self.level, self.index)
    }
}

/// Recursive k-means tree behind structured identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree<T> {
    pub nodes: Vec<ClusterNode<T>>,
    /// Level-1 node indices.
    pub roots: Vec<usize>,
    /// Whether the identical-points fallback split was used anywhere.
    pub used_fallback: bool,
}

impl<T> ClusterTree<T> {
    pub fn leaves(&self) -> impl Iterator<Item = &ClusterNode<T>> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }
}

struct TreeBuilder<'a, T> {
    corpus: &'a Corpus<T>,
    opts: &'a AssignOptions,
    nodes: Vec<ClusterNode<T>>,
    used_fallback: bool,
}

impl<T: Scalar> TreeBuilder<'_, T> {
    /// Partitions `items` into child clusters at `level`, recursing into any
    /// child larger than `c`. Returns the child node indices.
    fn split(&mut self, items: &[ItemId], level: usize) -> Result<Vec<usize>, AssignError> {
        let mut groups = self.partition(items, level)?;
        groups.sort_by(|a, b| {
            b.0.len()
                .cmp(&a.0.len())
                .then_with(|| lex_cmp(&a.1, &b.1))
        });
        let mut children = Vec::with_capacity(groups.len());
        for (j, (mut members, centroid)) in groups.into_iter().enumerate() {
            members.sort();
            let node = self.nodes.len();
            self.nodes.push(ClusterNode {
                level,
                index: j + 1,
                centroid,
                children: Vec::new(),
                members: Vec::new(),
            });
            if members.len() > self.opts.c {
                let grandchildren = self.split(&members, level + 1)?;
                self.nodes[node].children = grandchildren;
            } else {
                self.nodes[node].members = members;
            }
            children.push(node);
        }
        Ok(children)
    }

    fn partition(&mut self, items: &[ItemId], level: usize) -> Result<Vec<(Vec<ItemId>, Vec<T>)>, AssignError> {
        let points: Vec<&[T]> = items
            .iter()
            .map(|&id| self.corpus.get(id).expect("item belongs to corpus").embedding.as_slice())
            .collect();
        // the root is clustered only when it does not already fit in one leaf
        if level == 1 && items.len() <= self.opts.c {
            return Ok(vec![(items.to_vec(), mean(&points))]);
        }
        let k = self.opts.k.min(items.len());
        if points.iter().all(|p| *p == points[0]) {
            self.used_fallback = true;
            let mut sorted = items.to_vec();
            sorted.sort();
            let chunk = sorted.len().div_ceil(k);
            return Ok(sorted
                .chunks(chunk)
                .map(|c| (c.to_vec(), points[0].to_vec()))
                .collect());
        }
        let seed = self
            .opts
            .seed
            .wrapping_add((level as u64) << 32)
            .wrapping_add(items[0].0 as u64);
        let km = kmeans(&points, k, self.opts.kmeans_iters, seed)?;
        let mut groups: Vec<(Vec<ItemId>, Vec<T>)> =
            km.centroids.into_iter().map(|c| (Vec::new(), c)).collect();
        for (&id, &a) in items.iter().zip(&km.assignments) {
            groups[a].0.push(id);
        }
        Ok(groups)
    }
}

fn mean<T: Scalar>(points: &[&[T]]) -> Vec<T> {
    let n = T::from_usize(points.len().max(1)).expect("count fits in float");
    let mut acc = vec![T::zero(); points.first().map_or(0, |p| p.len())];
    for p in points {
        for (a, &x) in acc.iter_mut().zip(p.iter()) {
            *a = *a + x;
        }
    }
    acc.into_iter().map(|a| a / n).collect()
}

fn lex_cmp<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Path of `C_<level>_<j>` tokens through a recursive k-means tree, then a
/// leaf-local `P_<m>` position token.
pub fn assign_structured<T: Scalar>(
    corpus: &Corpus<T>,
    vocab: &mut Vocabulary,
    opts: &AssignOptions,
) -> Result<(IdMap, ClusterTree<T>), AssignError> {
    if opts.k < 2 || opts.c < 1 {
        return Err(AssignError::InvalidTreeShape { k: opts.k, c: opts.c });
    }
    if corpus.is_empty() {
        return Err(AssignError::EmptyCorpus);
    }
    let items: Vec<ItemId> = corpus.records().iter().map(|r| r.id).collect();
    let mut builder = TreeBuilder {
        corpus,
        opts,
        nodes: Vec::new(),
        used_fallback: false,
    };
    let roots = builder.split(&items, 1)?;
    let tree = ClusterTree {
        nodes: builder.nodes,
        roots,
        used_fallback: builder.used_fallback,
    };

    let mut map = IdMap::new(Scheme::Structured);
    let mut path: Vec<TokenId> = Vec::new();
    for &r in &tree.roots {
        emit_paths(&tree, r, vocab, &mut path, &mut map);
    }
    Ok((map, tree))
}

fn emit_paths<T>(
    tree: &ClusterTree<T>,
    node: usize,
    vocab: &mut Vocabulary,
    path: &mut Vec<TokenId>,
    map: &mut IdMap,
) {
    let n = &tree.nodes[node];
    path.push(vocab.push(&n.token()));
    if n.is_leaf() {
        for (m, &item) in n.members.iter().enumerate() {
            let mut tokens = path.clone();
            tokens.push(vocab.push(&format!("P_{}", m + 1)));
            tokens.push(Vocabulary::EOS);
            map.insert(item, tokens);
        }
    } else {
        for &child in &n.children {
            emit_paths(tree, child, vocab, path, map);
        }
    }
    path.pop();
}
