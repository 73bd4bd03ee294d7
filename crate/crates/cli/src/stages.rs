//! File-to-file stage implementations shared by the subcommands and the
//! pipeline. Every text artifact starts with the caller's provenance header.

use std::collections::BTreeMap;
use std::path::Path;

use genret::corpus::{self, IngestOptions, SynthConfig};
use genret::decoder::{retrieve_all, BeamConfig};
use genret::eval::{recall_at_k, EvalReport};
use genret::identifier::{assign, AssignOptions};
use genret::results::{read_results, write_results};
use genret::scorer::checkpoint::{load_checkpoint, save_checkpoint};
use genret::scorer::{train, write_loss_csv, ModelShape};
use genret::{Corpus, IdMap, ItemId, Query, Scheme, ScorerParams, SplitFilter, TrainConfig, Trie, Vocabulary};

use crate::CliError;

/// Scalar type used by every command.
pub type F = f32;

pub const CORPUS: &str = "corpus.jsonl";
pub const QUERIES: &str = "queries.jsonl";
pub const IDMAP: &str = "idmap.tsv";
pub const VOCAB: &str = "vocab.txt";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const LOSS: &str = "loss.csv";
pub const RESULTS: &str = "results.tsv";
pub const REPORT: &str = "report.csv";

/// Reads a corpus artifact written by this tool (already normalized).
pub fn read_corpus(path: &Path) -> Result<Corpus<F>, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingPath(path.to_owned()));
    }
    Ok(corpus::ingest(path, IngestOptions { normalize: false })?)
}

pub fn read_queries(path: &Path) -> Result<Vec<Query<F>>, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingPath(path.to_owned()));
    }
    Ok(corpus::read_queries(path)?)
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingPath(path.to_owned()));
    }
    Ok(Vocabulary::read(path)?)
}

pub fn read_idmap(path: &Path, vocab: &Vocabulary) -> Result<IdMap, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingPath(path.to_owned()));
    }
    Ok(IdMap::import(path, vocab)?)
}

/// Space-separated `key=value` pairs.
pub fn parse_meta(text: &str) -> BTreeMap<String, String> {
    text.split_whitespace()
        .filter_map(|p| p.split_once('='))
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
}

/// Synthetic corpus with seeded splits.
pub fn synth(
    cfg: &SynthConfig,
    fractions: (f64, f64, f64),
    corpus_out: &Path,
    queries_out: &Path,
    header: &str,
) -> Result<(usize, usize), CliError> {
    let (c, q) = corpus::synthesize::<F>(cfg)?;
    let c = c.split_assign(fractions, cfg.seed)?;
    corpus::export(&c, corpus_out, Some(header))?;
    corpus::export_queries(&q, queries_out, Some(header))?;
    Ok((c.len(), q.len()))
}

/// Validates and normalizes an external corpus (and its queries) into
/// artifacts. The record splits are kept as given.
pub fn ingest(
    input: &Path,
    queries: Option<&Path>,
    normalize: bool,
    corpus_out: &Path,
    queries_out: Option<&Path>,
    header: &str,
) -> Result<(usize, usize), CliError> {
    if !input.is_file() {
        return Err(CliError::MissingPath(input.to_owned()));
    }
    let c = corpus::ingest::<F>(input, IngestOptions { normalize })?;
    let mut n_queries = 0;
    let mut qs = None;
    if let Some(qp) = queries {
        let mut q = read_queries(qp)?;
        c.validate_queries(&q)?;
        if normalize {
            q.iter_mut().for_each(|q| genret::scalar::l2_normalize(&mut q.embedding));
        }
        n_queries = q.len();
        qs = Some(q);
    }
    corpus::export(&c, corpus_out, Some(header))?;
    if let (Some(q), Some(out)) = (qs, queries_out) {
        corpus::export_queries(&q, out, Some(header))?;
    }
    Ok((c.len(), n_queries))
}

/// Assigns identifiers; writes the identifier map and vocabulary.
pub fn assign_ids(
    corpus_path: &Path,
    scheme: Scheme,
    opts: &AssignOptions,
    idmap_out: &Path,
    vocab_out: &Path,
    header: &str,
) -> Result<usize, CliError> {
    let c = read_corpus(corpus_path)?;
    let a = assign(scheme, &c, opts)?;
    a.ids.export(&a.vocab, idmap_out, Some(header))?;
    a.vocab.write(vocab_out, Some(header))?;
    Ok(a.vocab.len())
}

pub struct TrainInputs<'a> {
    pub corpus: &'a Path,
    pub queries: &'a Path,
    pub idmap: &'a Path,
    pub vocab: &'a Path,
}

pub struct ModelConfig {
    pub hidden: usize,
    pub max_len: Option<usize>,
    pub init_seed: u64,
}

/// Initializes and trains a scorer; writes the checkpoint and loss trace.
/// Returns the final loss.
pub fn train_model(
    inputs: &TrainInputs<'_>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    checkpoint_out: &Path,
    loss_out: &Path,
    header: &str,
) -> Result<Option<f64>, CliError> {
    let c = read_corpus(inputs.corpus)?;
    let q = read_queries(inputs.queries)?;
    c.validate_queries(&q)?;
    let vocab = read_vocab(inputs.vocab)?;
    let ids = read_idmap(inputs.idmap, &vocab)?;
    let needed = ids.max_len() + 1;
    let max_len = model.max_len.unwrap_or(needed);
    if max_len < needed {
        return Err(CliError::Config(format!("max_len {max_len} is shorter than the longest identifier ({needed})")));
    }
    let shape = ModelShape { vocab: vocab.len(), cond_dim: c.dim(), hidden: model.hidden, max_len };
    let params = ScorerParams::<F>::init(shape, model.init_seed);
    let (params, trace) = train(params, &c, &q, &ids, cfg)?;
    let meta = format!("{header}\nscheme={} memorize={}", ids.scheme(), !cfg.skip_memorize);
    save_checkpoint(&params, vocab.fingerprint(), &meta, checkpoint_out)?;
    write_loss_csv(&trace, loss_out, Some(header))?;
    Ok(trace.last().map(|r| r.loss))
}

pub struct RetrieveInputs<'a> {
    pub checkpoint: &'a Path,
    pub idmap: &'a Path,
    pub vocab: &'a Path,
    pub queries: &'a Path,
    /// Needed to restrict the trie to a split; without it every mapped item
    /// is a candidate.
    pub corpus: Option<&'a Path>,
}

/// Decodes queries into a ranked-results file. With a corpus and a split
/// filter, only queries whose target passes the filter are decoded.
pub fn retrieve(
    inputs: &RetrieveInputs<'_>,
    filter: SplitFilter,
    beam: BeamConfig,
    threads: usize,
    out: &Path,
    header: &str,
) -> Result<usize, CliError> {
    let vocab = read_vocab(inputs.vocab)?;
    let ids = read_idmap(inputs.idmap, &vocab)?;
    if !inputs.checkpoint.is_file() {
        return Err(CliError::MissingPath(inputs.checkpoint.to_owned()));
    }
    let ckpt = load_checkpoint::<F>(inputs.checkpoint, Some(vocab.fingerprint()))?;
    let mut queries = read_queries(inputs.queries)?;
    let trie = match inputs.corpus {
        Some(p) => {
            let c = read_corpus(p)?;
            c.validate_queries(&queries)?;
            queries.retain(|q| c.split_of(q.target).is_some_and(|s| filter.admits(s)));
            Trie::for_split(&ids, &c, filter)?
        }
        None => Trie::build(ids.iter())?,
    };
    let results = retrieve_all(&ckpt.params, &queries, &trie, beam, threads)?;
    let meta = parse_meta(&ckpt.meta);
    let mut fields = vec![
        ("scheme", ids.scheme().to_string()),
        ("beam", beam.beam.to_string()),
        ("constrained", beam.constrained.to_string()),
    ];
    if let Some(m) = meta.get("memorize") {
        fields.push(("memorize", m.clone()));
    }
    write_results(out, Some(header), &fields, queries.iter().map(|q| q.id).zip(&results))?;
    Ok(queries.len())
}

/// Scores a results file against the query targets.
pub fn evaluate(results_path: &Path, queries_path: &Path) -> Result<EvalReport, CliError> {
    if !results_path.is_file() {
        return Err(CliError::MissingPath(results_path.to_owned()));
    }
    let res = read_results(results_path)?;
    let queries = read_queries(queries_path)?;
    let rankings = res.item_rankings();
    let truths: BTreeMap<u32, ItemId> =
        queries.iter().filter(|q| rankings.contains_key(&q.id)).map(|q| (q.id, q.target)).collect();
    if let Some(q) = rankings.keys().find(|q| !truths.contains_key(q)) {
        return Err(genret::eval::EvalError::MissingQuery(*q).into());
    }
    let flag = |k: &str| res.meta.get(k).is_some_and(|v| v == "true");
    Ok(EvalReport {
        scheme: res.meta.get("scheme").and_then(|s| s.parse().ok()).unwrap_or(Scheme::Atomic),
        beam: res.meta.get("beam").and_then(|s| s.parse().ok()).unwrap_or(0),
        constrained: flag("constrained"),
        memorize_trained: flag("memorize"),
        r1: recall_at_k(&rankings, &truths, 1)?,
        r5: recall_at_k(&rankings, &truths, 5)?,
        r10: recall_at_k(&rankings, &truths, 10)?,
        n_queries: truths.len(),
        validity: res.validity(),
    })
}
