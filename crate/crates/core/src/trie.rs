//! Prefix tree over identifier token sequences, used to restrict decoding to
//! identifiers that name real items.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::{Corpus, ItemId, SplitFilter};
use crate::identifier::{IdMap, Identifier, TokenId};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrieError {
    #[error("identifier of item {item} conflicts with item {other}: one is a prefix of the other")]
    PrefixConflict { item: ItemId, other: ItemId },
    #[error("identifier of item {item} is empty")]
    EmptyIdentifier { item: ItemId },
}

/// Index into the trie's node table.
pub type NodeId = u32;

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<TokenId, NodeId>,
    item: Option<ItemId>,
}

#[derive(Debug, Clone)]
pub struct Trie {
    nodes: Vec<Node>,
    terminals: usize,
    max_depth: usize,
}

impl Default for Trie {
    fn default() -> Self {
        Self {
            nodes: vec![Node::default()],
            terminals: 0,
            max_depth: 0,
        }
    }
}

impl Trie {
    pub const ROOT: NodeId = 0;

    pub fn build<'a, I>(identifiers: I) -> Result<Self, TrieError>
    where
        I: IntoIterator<Item = &'a Identifier>,
    {
        let mut trie = Trie::default();
        for id in identifiers {
            trie.insert(id.item, &id.tokens)?;
        }
        Ok(trie)
    }

    /// Trie over the identifiers of items whose split passes `filter`.
    pub fn for_split<T: Scalar>(
        ids: &IdMap,
        corpus: &Corpus<T>,
        filter: SplitFilter,
    ) -> Result<Self, TrieError> {
        Self::build(
            ids.iter()
                .filter(|id| corpus.split_of(id.item).is_some_and(|s| filter.admits(s))),
        )
    }

    fn insert(&mut self, item: ItemId, tokens: &[TokenId]) -> Result<(), TrieError> {
        if tokens.is_empty() {
            return Err(TrieError::EmptyIdentifier { item });
        }
        let mut node = Self::ROOT;
        for &t in tokens {
            if let Some(other) = self.nodes[node as usize].item {
                return Err(TrieError::PrefixConflict { item, other });
            }
            node = match self.nodes[node as usize].children.get(&t) {
                Some(&child) => child,
                None => {
                    let child = self.nodes.len() as NodeId;
                    self.nodes.push(Node::default());
                    self.nodes[node as usize].children.insert(t, child);
                    child
                }
            };
        }
        let end = &self.nodes[node as usize];
        if let Some(other) = end.item {
            return Err(TrieError::PrefixConflict { item, other });
        }
        if !end.children.is_empty() {
            let other = self
                .first_item_below(node)
                .expect("every branch ends in a terminal");
            return Err(TrieError::PrefixConflict { item, other });
        }
        self.nodes[node as usize].item = Some(item);
        self.terminals += 1;
        self.max_depth = self.max_depth.max(tokens.len());
        Ok(())
    }

    fn first_item_below(&self, mut node: NodeId) -> Option<ItemId> {
        loop {
            let n = &self.nodes[node as usize];
            if let Some(item) = n.item {
                return Some(item);
            }
            node = *n.children.values().next()?;
        }
    }

    pub fn walk(&self, prefix: &[TokenId]) -> Option<NodeId> {
        prefix
            .iter()
            .try_fold(Self::ROOT, |node, t| self.child(node, *t))
    }

    pub fn child(&self, node: NodeId, token: TokenId) -> Option<NodeId> {
        self.nodes[node as usize].children.get(&token).copied()
    }

    /// Children of `node` in ascending token order.
    pub fn children(&self, node: NodeId) -> impl Iterator<Item = (TokenId, NodeId)> + '_ {
        self.nodes[node as usize].children.iter().map(|(&t, &n)| (t, n))
    }

    pub fn item_at(&self, node: NodeId) -> Option<ItemId> {
        self.nodes[node as usize].item
    }

    /// Tokens that extend `prefix` towards at least one stored identifier.
    pub fn allowed_next(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        self.walk(prefix)
            .map(|n| self.children(n).map(|(t, _)| t).collect())
            .unwrap_or_default()
    }

    /// Item whose complete identifier (EOS included) is exactly `seq`.
    pub fn lookup(&self, seq: &[TokenId]) -> Option<ItemId> {
        self.walk(seq).and_then(|n| self.item_at(n))
    }

    /// Number of stored identifiers.
    pub fn len(&self) -> usize {
        self.terminals
    }

    pub fn is_empty(&self) -> bool {
        self.terminals == 0
    }

    /// Length of the longest stored identifier.
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Every stored `(sequence, item)` pair in lexicographic token order.
    pub fn enumerate(&self) -> Vec<(Vec<TokenId>, ItemId)> {
        let mut out = Vec::with_capacity(self.terminals);
        let mut path = Vec::new();
        self.collect(Self::ROOT, &mut path, &mut out);
        out
    }

    fn collect(&self, node: NodeId, path: &mut Vec<TokenId>, out: &mut Vec<(Vec<TokenId>, ItemId)>) {
        let n = &self.nodes[node as usize];
        if let Some(item) = n.item {
            out.push((path.clone(), item));
        }
        for (&t, &child) in &n.children {
            path.push(t);
            self.collect(child, path, out);
            path.pop();
        }
    }
}
