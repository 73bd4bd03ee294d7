//! Query latency of the dense scan and of constrained generation as the
//! corpus grows.
//!
//! Each size gets a fresh synthetic corpus with atomic identifiers. The
//! generative side uses untrained scorer weights: decoding cost depends on
//! the shapes only, and timing excludes training. Note that with atomic
//! identifiers the vocabulary, and hence the output projection, grows with N.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::baseline::{build_index, BaselineError};
use crate::corpus::{synthesize, CorpusError, Query, SplitFilter, SynthConfig};
use crate::decoder::{retrieve_all, BeamConfig, DecodeError};
use crate::identifier::{assign, AssignError, AssignOptions, Scheme};
use crate::scorer::{ModelShape, ScorerParams, DEFAULT_HIDDEN};
use crate::trie::{Trie, TrieError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid sizes: {0}")]
    InvalidSizes(String),
    #[error("invalid benchmark setting: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Dense,
    Generative,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dense => "dense",
            Method::Generative => "generative",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub method: Method,
    pub corpus_size: usize,
    pub qps: f64,
    /// Median over trials of the mean per-query latency.
    pub mean_latency_s: f64,
    pub trials: usize,
    /// Scorer vocabulary size (for the dense method, the vocabulary the
    /// generative side used at the same N).
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub n_queries: usize,
    pub beam: usize,
    pub seed: u64,
    pub dim: usize,
    pub hidden: usize,
    pub trials: usize,
    /// Untimed queries run before each method's trials.
    pub warmup: usize,
    /// Workers used by both methods inside the timed region.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1_000, 10_000, 100_000],
            n_queries: 1000,
            beam: 10,
            seed: 7,
            dim: 32,
            hidden: DEFAULT_HIDDEN,
            trials: 3,
            warmup: 20,
            threads: 1,
        }
    }
}

/// Parses `1000`, `10k`, `1.5m`.
pub fn parse_size(s: &str) -> Result<usize, BenchError> {
    let s = s.trim().to_ascii_lowercase();
    let (num, mult) = match s.chars().last() {
        Some('k') => (&s[..s.len() - 1], 1e3),
        Some('m') => (&s[..s.len() - 1], 1e6),
        _ => (s.as_str(), 1.0),
    };
    let v: f64 = num
        .parse()
        .map_err(|_| BenchError::InvalidSizes(format!("`{s}` is not a size")))?;
    let n = v * mult;
    if !(n.is_finite() && n >= 1.0 && n.fract() == 0.0) {
        return Err(BenchError::InvalidSizes(format!("`{s}` is not a positive whole number")));
    }
    Ok(n as usize)
}

pub fn parse_sizes(s: &str) -> Result<Vec<usize>, BenchError> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_size).collect()
}

fn validate(cfg: &BenchConfig) -> Result<(), BenchError> {
    if cfg.sizes.is_empty() {
        return Err(BenchError::InvalidSizes("no sizes given".into()));
    }
    if cfg.sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BenchError::InvalidSizes(format!("{:?} is not strictly ascending", cfg.sizes)));
    }
    if cfg.sizes[0] < 2 {
        return Err(BenchError::InvalidSizes("sizes must be at least 2".into()));
    }
    let bad = |m: &str| Err(BenchError::InvalidConfig(m.into()));
    if cfg.trials < 3 {
        return bad("at least 3 trials");
    }
    if cfg.n_queries == 0 || cfg.beam == 0 || cfg.hidden == 0 || cfg.threads == 0 {
        return bad("n_queries, beam, hidden and threads must be positive");
    }
    Ok(())
}

/// Runs `f` `trials` times and returns the median wall time divided by `n`.
fn median_latency(trials: usize, n: usize, mut f: impl FnMut() -> Result<(), BenchError>) -> Result<f64, BenchError> {
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64() / n as f64);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

/// Evenly spaced subset of `queries`.
fn pick_queries<T: Clone>(queries: &[T], n: usize) -> Vec<T> {
    let n = n.min(queries.len());
    (0..n).map(|i| queries[i * queries.len() / n].clone()).collect()
}

pub fn run_scaling(cfg: &BenchConfig) -> Result<Vec<LatencyReport>, BenchError> {
    validate(cfg)?;
    let mut reports = Vec::with_capacity(2 * cfg.sizes.len());
    for &n in &cfg.sizes {
        let synth = SynthConfig { n_items: n, dim: cfg.dim, queries_per_item: 1, noise_sigma: 0.05, seed: cfg.seed };
        let (corpus, queries) = synthesize::<f32>(&synth)?;
        let queries: Vec<Query<f32>> = pick_queries(&queries, cfg.n_queries);
        let warm: Vec<Query<f32>> = pick_queries(&queries, cfg.warmup.max(1));
        let assignment = assign(Scheme::Atomic, &corpus, &AssignOptions { seed: cfg.seed, ..Default::default() })?;
        let trie = Trie::for_split(&assignment.ids, &corpus, SplitFilter::All)?;
        let index = build_index(&corpus, SplitFilter::All)?;
        let vocab = assignment.vocab.len();
        let shape = ModelShape { vocab, cond_dim: cfg.dim, hidden: cfg.hidden, max_len: assignment.ids.max_len() + 1 };
        let mut params = ScorerParams::<f32>::init(shape, cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0f32, 0.1).expect("positive std");
        params.w_out.iter_mut().for_each(|x| *x = normal.sample(&mut rng));

        let beam = BeamConfig::constrained(cfg.beam);
        let dense = |qs: &[Query<f32>]| {
            std::hint::black_box(index.retrieve_all(qs, cfg.beam, cfg.threads));
            Ok(())
        };
        let generative = |qs: &[Query<f32>]| {
            std::hint::black_box(retrieve_all(&params, qs, &trie, beam, cfg.threads)?);
            Ok(())
        };
        dense(&warm)?;
        let dense_lat = median_latency(cfg.trials, queries.len(), || dense(&queries))?;
        generative(&warm)?;
        let gen_lat = median_latency(cfg.trials, queries.len(), || generative(&queries))?;
        for (method, lat) in [(Method::Dense, dense_lat), (Method::Generative, gen_lat)] {
            reports.push(LatencyReport {
                method,
                corpus_size: n,
                qps: 1.0 / lat,
                mean_latency_s: lat,
                trials: cfg.trials,
                vocab_size: vocab,
            });
        }
    }
    Ok(reports)
}

/// Least-squares line `y = slope·x + intercept` with its coefficient of
/// determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r2 })
}

/// Latency against corpus size for one method, sorted by size.
pub fn latency_curve(reports: &[LatencyReport], method: Method) -> Vec<(usize, f64)> {
    let mut pts: Vec<(usize, f64)> = reports
        .iter()
        .filter(|r| r.method == method)
        .map(|r| (r.corpus_size, r.mean_latency_s))
        .collect();
    pts.sort_by_key(|p| p.0);
    pts
}

/// Largest over smallest latency of `method` across sizes.
pub fn latency_ratio(reports: &[LatencyReport], method: Method) -> Option<f64> {
    let lat: Vec<f64> = latency_curve(reports, method).into_iter().map(|p| p.1).collect();
    let max = lat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = lat.iter().copied().fold(f64::INFINITY, f64::min);
    (!lat.is_empty() && min > 0.0).then(|| max / min)
}

/// Smallest measured N at which generative throughput is at least the dense
/// throughput.
pub fn crossover(reports: &[LatencyReport]) -> Option<usize> {
    let dense = latency_curve(reports, Method::Dense);
    let gen = latency_curve(reports, Method::Generative);
    dense
        .iter()
        .filter_map(|&(n, d)| gen.iter().find(|g| g.0 == n).map(|&(_, g)| (n, d, g)))
        .find(|&(_, d, g)| g <= d)
        .map(|(n, _, _)| n)
}

pub fn write_latency_csv(reports: &[LatencyReport], path: &Path, header: Option<&str>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(w, "{h}")?;
    }
    writeln!(w, "method,n,qps,mean_latency_s")?;
    for r in reports {
        writeln!(w, "{},{},{:.3},{:.9}", r.method, r.corpus_size, r.qps, r.mean_latency_s)?;
    }
    w.flush()
}

/// Whitespace-separated columns `n dense_qps generative_qps vocab`, one row
/// per size, for gnuplot.
pub fn write_plot_data(reports: &[LatencyReport], path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# n dense_qps generative_qps vocab")?;
    let dense = latency_curve(reports, Method::Dense);
    for (n, d) in dense {
        let g = reports.iter().find(|r| r.method == Method::Generative && r.corpus_size == n);
        let (gq, v) = g.map_or((f64::NAN, 0), |g| (g.qps, g.vocab_size));
        writeln!(w, "{n} {:.3} {:.3} {v}", 1.0 / d, gq)?;
    }
    w.flush()
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Method::Dense),
            "generative" => Ok(Method::Generative),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}
