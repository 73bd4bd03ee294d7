//! Item identifiers: the five assignment schemes, the token vocabulary and
//! the tab-separated identifier map format.

mod assign;
pub mod kmeans;
mod vocab;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assign::{
    assign, assign_atomic, assign_numeric, assign_semantic, assign_string, assign_structured,
    AssignError, AssignOptions, Assignment, ClusterNode, ClusterTree,
};
pub use vocab::{TokenId, Vocabulary, BOS_TOKEN, EOS_TOKEN, PAD_TOKEN};

use crate::corpus::ItemId;
use crate::provenance::is_header;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    String,
    Numeric,
    Semantic,
    Structured,
    Atomic,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::String,
        Scheme::Numeric,
        Scheme::Semantic,
        Scheme::Structured,
        Scheme::Atomic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::String => "string",
            Scheme::Numeric => "numeric",
            Scheme::Semantic => "semantic",
            Scheme::Structured => "structured",
            Scheme::Atomic => "atomic",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|sch| sch.as_str() == s)
            .ok_or_else(|| format!("unknown identifier scheme `{s}`"))
    }
}

/// Token sequence naming one item. `tokens` always ends with EOS and never
/// contains BOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Identifier {
    pub scheme: Scheme,
    pub item: ItemId,
    pub tokens: Vec<TokenId>,
}

impl Identifier {
    /// Tokens without the trailing EOS.
    pub fn body(&self) -> &[TokenId] {
        match self.tokens.split_last() {
            Some((&Vocabulary::EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }

    pub fn render(&self, vocab: &Vocabulary) -> String {
        self.body()
            .iter()
            .map(|&t| vocab.token(t).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Error)]
pub enum IdMapError {
    #[error("line {line}: malformed identifier line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: token `{token}` is not in the vocabulary")]
    UnknownToken { line: usize, token: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Identifiers of one scheme keyed by item id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    scheme: Scheme,
    entries: BTreeMap<ItemId, Identifier>,
}

impl IdMap {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, item: ItemId, tokens: Vec<TokenId>) {
        self.entries.insert(
            item,
            Identifier {
                scheme: self.scheme,
                item,
                tokens,
            },
        );
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn get(&self, item: ItemId) -> Option<&Identifier> {
        self.entries.get(&item)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Identifier> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest identifier length, EOS included.
    pub fn max_len(&self) -> usize {
        self.iter().map(|id| id.tokens.len()).max().unwrap_or(0)
    }

    /// TSV: `item_id \t scheme \t space-joined tokens` (EOS implied, not written).
    pub fn export(&self, vocab: &Vocabulary, path: &Path, header: Option<&str>) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        if let Some(h) = header {
            writeln!(w, "{h}")?;
        }
        for id in self.iter() {
            writeln!(w, "{}\t{}\t{}", id.item, self.scheme, id.render(vocab))?;
        }
        w.flush()
    }

    pub fn import(path: &Path, vocab: &Vocabulary) -> Result<Self, IdMapError> {
        let rows = read_idmap_rows(path)?;
        let scheme = rows.first().map(|r| r.scheme).unwrap_or(Scheme::Atomic);
        let mut map = IdMap::new(scheme);
        for row in rows {
            if row.scheme != scheme {
                return Err(IdMapError::MalformedLine {
                    line: row.line,
                    reason: format!("scheme `{}` differs from `{scheme}`", row.scheme),
                });
            }
            if map.get(row.item).is_some() {
                return Err(IdMapError::MalformedLine {
                    line: row.line,
                    reason: format!("item {} listed twice", row.item),
                });
            }
            let mut tokens = row
                .tokens
                .iter()
                .map(|t| {
                    vocab.id(t).ok_or_else(|| IdMapError::UnknownToken {
                        line: row.line,
                        token: t.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            tokens.push(Vocabulary::EOS);
            map.insert(row.item, tokens);
        }
        Ok(map)
    }
}

/// One parsed line of an identifier map, before vocabulary resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMapRow {
    pub line: usize,
    pub item: ItemId,
    pub scheme: Scheme,
    pub tokens: Vec<String>,
}

pub fn read_idmap_rows(path: &Path) -> Result<Vec<IdMapRow>, IdMapError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.is_empty() || is_header(&line) {
            continue;
        }
        let malformed = |reason: &str| IdMapError::MalformedLine {
            line: lineno,
            reason: reason.to_owned(),
        };
        let mut cols = line.split('\t');
        let (Some(item), Some(scheme), Some(tokens), None) =
            (cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(malformed("expected three tab-separated columns"));
        };
        let item = item
            .parse::<u32>()
            .map_err(|_| malformed("item id is not a non-negative integer"))?;
        let scheme = scheme.parse::<Scheme>().map_err(|e| malformed(&e))?;
        rows.push(IdMapRow {
            line: lineno,
            item: ItemId(item),
            scheme,
            tokens: tokens.split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize, SynthConfig};

    fn small() -> crate::corpus::Corpus<f32> {
        synthesize(&SynthConfig { n_items: 3, dim: 4, queries_per_item: 1, noise_sigma: 0.0, seed: 1 })
            .unwrap()
            .0
    }

    #[test]
    fn scheme_parse_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("bogus".parse::<Scheme>().is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        for scheme in Scheme::ALL {
            let a = assign(scheme, &c, &AssignOptions::default()).unwrap();
            let p = dir.path().join(format!("{scheme}.tsv"));
            a.ids.export(&a.vocab, &p, Some("#!genret test")).unwrap();
            let back = IdMap::import(&p, &a.vocab).unwrap();
            assert_eq!(back, a.ids, "{scheme}");
        }
    }

    #[test]
    fn atomic_map_has_one_line_per_item() {
        let dir = tempfile::tempdir().unwrap();
        let a = assign(Scheme::Atomic, &small(), &AssignOptions::default()).unwrap();
        let p = dir.path().join("ids.tsv");
        a.ids.export(&a.vocab, &p, None).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), "0\tatomic\tI_0");
    }

    #[test]
    fn import_rejects_unknown_token() {
        let dir = tempfile::tempdir().unwrap();
        let a = assign(Scheme::Numeric, &small(), &AssignOptions::default()).unwrap();
        let p = dir.path().join("ids.tsv");
        std::fs::write(&p, "0\tnumeric\t1\n1\tnumeric\tI_99\n").unwrap();
        let err = IdMap::import(&p, &a.vocab).unwrap_err();
        assert!(matches!(err, IdMapError::UnknownToken { line: 2, ref token } if token == "I_99"));
    }

    #[test]
    fn import_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let a = assign(Scheme::Numeric, &small(), &AssignOptions::default()).unwrap();
        for body in ["0\tnumeric\n", "x\tnumeric\t1\n", "0\tnope\t1\n", "0\tnumeric\t1\n0\tnumeric\t2\n"] {
            let p = dir.path().join("ids.tsv");
            std::fs::write(&p, body).unwrap();
            assert!(
                matches!(IdMap::import(&p, &a.vocab), Err(IdMapError::MalformedLine { .. })),
                "{body:?}"
            );
        }
    }
}
