//! Recall@K, the ablation grid and the beam-size sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{Corpus, ItemId, Query, Split, SplitFilter};
use crate::decoder::{retrieve_all, BeamConfig, DecodeError, RetrievalResult};
use crate::identifier::{assign, AssignError, AssignOptions, Assignment, Scheme};
use crate::scalar::Scalar;
use crate::scorer::{train, LossRecord, ModelShape, ScorerParams, TrainConfig, TrainError};
use crate::trie::{Trie, TrieError};

/// Cut-offs reported for every run.
pub const KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {0} has no ranking")]
    MissingQuery(u32),
    #[error("K must be at least 1")]
    InvalidK,
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("beam {beam} is smaller than the largest cut-off K={k}")]
    BeamSmallerThanK { beam: usize, k: usize },
    #[error("bad grid spec: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Fraction of queries in `truths` whose target is among the first `k`
/// entries of its ranking.
pub fn recall_at_k(
    rankings: &BTreeMap<u32, Vec<ItemId>>,
    truths: &BTreeMap<u32, ItemId>,
    k: usize,
) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if truths.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut hits = 0usize;
    for (q, target) in truths {
        let ranking = rankings.get(q).ok_or(EvalError::MissingQuery(*q))?;
        if ranking.iter().take(k).any(|i| i == target) {
            hits += 1;
        }
    }
    Ok(hits as f64 / truths.len() as f64)
}

/// Recall at every K in [`KS`] and the trie-lookup success rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub n_queries: usize,
    pub validity: f64,
}

pub fn score_results<T>(queries: &[Query<T>], results: &[RetrievalResult]) -> Result<Scores, EvalError> {
    let truths: BTreeMap<u32, ItemId> = queries.iter().map(|q| (q.id, q.target)).collect();
    let rankings: BTreeMap<u32, Vec<ItemId>> =
        queries.iter().zip(results).map(|(q, r)| (q.id, r.items())).collect();
    let emitted: usize = results.iter().map(|r| r.emitted).sum();
    let valid: usize = results.iter().map(|r| r.valid).sum();
    Ok(Scores {
        r1: recall_at_k(&rankings, &truths, 1)?,
        r5: recall_at_k(&rankings, &truths, 5)?,
        r10: recall_at_k(&rankings, &truths, 10)?,
        n_queries: truths.len(),
        validity: if emitted == 0 { 0.0 } else { valid as f64 / emitted as f64 },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub beam: usize,
    pub constrained: bool,
    pub memorize_trained: bool,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub n_queries: usize,
    pub validity: f64,
}

impl EvalReport {
    fn new(model: &TrainedModel<impl Scalar>, cfg: BeamConfig, s: Scores) -> Self {
        Self {
            scheme: model.scheme,
            beam: cfg.beam,
            constrained: cfg.constrained,
            memorize_trained: model.memorize_trained,
            r1: s.r1,
            r5: s.r5,
            r10: s.r10,
            n_queries: s.n_queries,
            validity: s.validity,
        }
    }
}

/// Everything a grid cell is trained and evaluated on.
#[derive(Debug, Clone)]
pub struct ExperimentSetup<'a, T> {
    /// Corpus with its splits already assigned.
    pub corpus: &'a Corpus<T>,
    pub queries: &'a [Query<T>],
    pub assign: AssignOptions,
    pub hidden: usize,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub threads: usize,
}

impl<T: Scalar> ExperimentSetup<'_, T> {
    /// Queries whose target is a test item, one per caption.
    pub fn test_queries(&self) -> Vec<Query<T>> {
        self.queries
            .iter()
            .filter(|q| self.corpus.split_of(q.target) == Some(Split::Test))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub scheme: Scheme,
    pub memorize_trained: bool,
    pub assignment: Assignment<T>,
    pub params: ScorerParams<T>,
    pub trace: Vec<LossRecord>,
}

impl<T: Scalar> TrainedModel<T> {
    /// Trie over the test items' identifiers.
    pub fn test_trie(&self, corpus: &Corpus<T>) -> Result<Trie, TrieError> {
        Trie::for_split(&self.assignment.ids, corpus, SplitFilter::Only(Split::Test))
    }
}

/// Assigns identifiers and trains a fresh scorer, with or without the
/// memorize phase. The retrieve step count is the same either way.
pub fn train_scheme<T: Scalar>(
    setup: &ExperimentSetup<'_, T>,
    scheme: Scheme,
    memorize: bool,
) -> Result<TrainedModel<T>, EvalError> {
    let assignment = assign(scheme, setup.corpus, &setup.assign)?;
    let shape = ModelShape {
        vocab: assignment.vocab.len(),
        cond_dim: setup.corpus.dim(),
        hidden: setup.hidden,
        max_len: assignment.ids.max_len() + 1,
    };
    let params = ScorerParams::init(shape, setup.init_seed);
    let cfg = TrainConfig { skip_memorize: !memorize, ..setup.train.clone() };
    let (params, trace) = train(params, setup.corpus, setup.queries, &assignment.ids, &cfg)?;
    Ok(TrainedModel { scheme, memorize_trained: memorize, assignment, params, trace })
}

/// Decodes the test queries with `model` and scores them.
pub fn evaluate<T: Scalar>(
    setup: &ExperimentSetup<'_, T>,
    model: &TrainedModel<T>,
    cfg: BeamConfig,
) -> Result<(EvalReport, Vec<RetrievalResult>), EvalError> {
    let queries = setup.test_queries();
    let trie = model.test_trie(setup.corpus)?;
    let results = retrieve_all(&model.params, &queries, &trie, cfg, setup.threads)?;
    let scores = score_results(&queries, &results)?;
    Ok((EvalReport::new(model, cfg, scores), results))
}

/// Cells of an ablation grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub schemes: Vec<Scheme>,
    pub constrained: Vec<bool>,
    pub memorize: Vec<bool>,
    pub beams: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            schemes: vec![Scheme::Numeric, Scheme::String, Scheme::Semantic, Scheme::Structured],
            constrained: vec![true, false],
            memorize: vec![true, false],
            beams: vec![10],
        }
    }
}

impl GridSpec {
    pub fn cells(&self) -> usize {
        self.schemes.len() * self.constrained.len() * self.memorize.len() * self.beams.len()
    }
}

fn parse_flag(v: &str) -> Result<bool, EvalError> {
    match v {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        other => Err(EvalError::BadGrid(format!("`{other}` is not on/off"))),
    }
}

/// `key=v1,v2;key=...` with keys `scheme`, `constrained`, `memorize`, `beam`.
/// Omitted keys keep their defaults; `scheme=all` selects every scheme.
impl FromStr for GridSpec {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut g = GridSpec::default();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| EvalError::BadGrid(format!("`{part}` has no `=`")))?;
            let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(EvalError::BadGrid(format!("`{key}` has no values")));
            }
            match key.trim() {
                "scheme" if values == ["all"] => g.schemes = Scheme::ALL.to_vec(),
                "scheme" => {
                    g.schemes = values
                        .iter()
                        .map(|v| v.parse::<Scheme>().map_err(EvalError::BadGrid))
                        .collect::<Result<_, _>>()?
                }
                "constrained" => g.constrained = values.iter().map(|v| parse_flag(v)).collect::<Result<_, _>>()?,
                "memorize" => g.memorize = values.iter().map(|v| parse_flag(v)).collect::<Result<_, _>>()?,
                "beam" => {
                    g.beams = values
                        .iter()
                        .map(|v| match v.parse::<usize>() {
                            Ok(b) if b > 0 => Ok(b),
                            _ => Err(EvalError::BadGrid(format!("bad beam `{v}`"))),
                        })
                        .collect::<Result<_, _>>()?
                }
                other => return Err(EvalError::BadGrid(format!("unknown key `{other}`"))),
            }
        }
        Ok(g)
    }
}

/// Trains one model per (scheme, memorize) pair and evaluates it under every
/// (constrained, beam) combination. Reports come out in grid order.
pub fn run_ablation<T: Scalar>(
    setup: &ExperimentSetup<'_, T>,
    grid: &GridSpec,
) -> Result<Vec<EvalReport>, EvalError> {
    let mut reports = Vec::with_capacity(grid.cells());
    for &scheme in &grid.schemes {
        for &memorize in &grid.memorize {
            let model = train_scheme(setup, scheme, memorize)?;
            reports.extend(evaluate_grid(setup, &model, grid)?);
        }
    }
    Ok(reports)
}

/// The (constrained, beam) part of the grid for an already trained model.
pub fn evaluate_grid<T: Scalar>(
    setup: &ExperimentSetup<'_, T>,
    model: &TrainedModel<T>,
    grid: &GridSpec,
) -> Result<Vec<EvalReport>, EvalError> {
    let mut out = Vec::new();
    for &constrained in &grid.constrained {
        for &beam in &grid.beams {
            out.push(evaluate(setup, model, BeamConfig { beam, constrained, max_len: None })?.0);
        }
    }
    Ok(out)
}

/// Constrained evaluation of one trained model at each beam size.
pub fn beam_sweep<T: Scalar>(
    setup: &ExperimentSetup<'_, T>,
    model: &TrainedModel<T>,
    beams: &[usize],
) -> Result<Vec<EvalReport>, EvalError> {
    let k = *KS.last().expect("non-empty");
    if let Some(&beam) = beams.iter().find(|&&b| b < k) {
        return Err(EvalError::BeamSmallerThanK { beam, k });
    }
    beams
        .iter()
        .map(|&b| evaluate(setup, model, BeamConfig::constrained(b)).map(|r| r.0))
        .collect()
}

const COLUMNS: [&str; 9] = ["scheme", "beam", "constrained", "memorize", "r1", "r5", "r10", "n_queries", "validity"];

fn fields(r: &EvalReport) -> [String; 9] {
    [
        r.scheme.to_string(),
        r.beam.to_string(),
        r.constrained.to_string(),
        r.memorize_trained.to_string(),
        format!("{:.6}", r.r1),
        format!("{:.6}", r.r5),
        format!("{:.6}", r.r10),
        r.n_queries.to_string(),
        format!("{:.6}", r.validity),
    ]
}

pub fn write_report_csv(reports: &[EvalReport], path: &Path, header: Option<&str>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(w, "{h}")?;
    }
    writeln!(w, "{}", COLUMNS.join(","))?;
    for r in reports {
        writeln!(w, "{}", fields(r).join(","))?;
    }
    w.flush()
}

/// Column-aligned plain-text rendering of `reports`.
pub fn format_table(reports: &[EvalReport]) -> String {
    let rows: Vec<[String; 9]> = reports.iter().map(fields).collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([COLUMNS[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&COLUMNS, &mut out);
    for r in &rows {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    }
    out
}
