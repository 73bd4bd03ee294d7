//! Ranked-results TSV: `query_id \t rank \t item_id \t logprob`.
//!
//! `# key=value` comment lines carry the decoder's emitted/valid counts and
//! free-form run metadata; `#empty` lines mark queries with no result.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::ItemId;
use crate::decoder::{Ranked, RetrievalResult};

pub const COLUMNS: &str = "query_id\trank\titem_id\tlogprob";

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsFile {
    pub rankings: BTreeMap<u32, Vec<Ranked>>,
    pub emitted: usize,
    pub valid: usize,
    pub meta: BTreeMap<String, String>,
}

impl ResultsFile {
    pub fn item_rankings(&self) -> BTreeMap<u32, Vec<ItemId>> {
        self.rankings
            .iter()
            .map(|(q, r)| (*q, r.iter().map(|x| x.item).collect()))
            .collect()
    }

    pub fn validity(&self) -> f64 {
        if self.emitted == 0 {
            0.0
        } else {
            self.valid as f64 / self.emitted as f64
        }
    }
}

pub fn write_results<'a>(
    path: &Path,
    header: Option<&str>,
    meta: &[(&str, String)],
    rows: impl IntoIterator<Item = (u32, &'a RetrievalResult)>,
) -> io::Result<()> {
    let rows: Vec<(u32, &RetrievalResult)> = rows.into_iter().collect();
    let emitted: usize = rows.iter().map(|r| r.1.emitted).sum();
    let valid: usize = rows.iter().map(|r| r.1.valid).sum();
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(w, "{h}")?;
    }
    writeln!(w, "# emitted={emitted} valid={valid}")?;
    if !meta.is_empty() {
        let kv: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(w, "# {}", kv.join(" "))?;
    }
    writeln!(w, "{COLUMNS}")?;
    for (q, r) in rows {
        if r.ranked.is_empty() {
            writeln!(w, "#empty\t{q}")?;
        }
        for (rank, hit) in r.ranked.iter().enumerate() {
            writeln!(w, "{q}\t{}\t{}\t{}", rank + 1, hit.item, hit.logprob)?;
        }
    }
    w.flush()
}

pub fn read_results(path: &Path) -> Result<ResultsFile, ResultsError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = ResultsFile::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let bad = |reason: &str| ResultsError::Malformed { line: lineno, reason: reason.to_owned() };
        if line.is_empty() || line == COLUMNS {
            continue;
        }
        if let Some(q) = line.strip_prefix("#empty\t") {
            let q = q.parse().map_err(|_| bad("bad query id"))?;
            out.rankings.entry(q).or_default();
            continue;
        }
        if let Some(pairs) = line.strip_prefix("# ") {
            for pair in pairs.split(' ') {
                if let Some((k, v)) = pair.split_once('=') {
                    out.meta.insert(k.to_owned(), v.to_owned());
                }
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [q, rank, item, lp] = cols[..] else {
            return Err(bad("expected four tab-separated columns"));
        };
        let q: u32 = q.parse().map_err(|_| bad("bad query id"))?;
        let rank: usize = rank.parse().map_err(|_| bad("bad rank"))?;
        let item: u32 = item.parse().map_err(|_| bad("bad item id"))?;
        let logprob: f64 = lp.parse().map_err(|_| bad("bad score"))?;
        let list = out.rankings.entry(q).or_default();
        if rank != list.len() + 1 {
            return Err(bad("ranks must be consecutive from 1"));
        }
        list.push(Ranked { item: ItemId(item), logprob });
    }
    let count = |key: &str, out: &ResultsFile| -> Result<usize, ResultsError> {
        out.meta.get(key).map_or(Ok(0), |v| {
            v.parse().map_err(|_| ResultsError::Malformed { line: 0, reason: format!("bad {key} count") })
        })
    };
    out.emitted = count("emitted", &out)?;
    out.valid = count("valid", &out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.tsv");
        let a = RetrievalResult {
            ranked: vec![Ranked { item: ItemId(4), logprob: -0.125 }, Ranked { item: ItemId(1), logprob: -3.5 }],
            emitted: 3,
            valid: 2,
        };
        let empty = RetrievalResult { ranked: vec![], emitted: 1, valid: 0 };
        write_results(&p, Some("#!genret x"), &[("scheme", "atomic".into())], [(10, &a), (11, &empty)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("10\t1\t4\t-0.125\n10\t2\t1\t-3.5\n"));
        let back = read_results(&p).unwrap();
        assert_eq!(back.rankings[&10], a.ranked);
        assert!(back.rankings[&11].is_empty());
        assert_eq!((back.emitted, back.valid), (4, 2));
        assert_eq!(back.validity(), 0.5);
        assert_eq!(back.meta["scheme"], "atomic");
    }

    #[test]
    fn rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.tsv");
        for body in ["1\t1\t2\n", "1\t2\t2\t0.0\n", "x\t1\t2\t0.0\n"] {
            std::fs::write(&p, body).unwrap();
            assert!(matches!(read_results(&p), Err(ResultsError::Malformed { line: 1, .. })), "{body:?}");
        }
    }
}
