//! Argument parsing and subcommand dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use genret::bench::{self, BenchConfig, Method};
use genret::decoder::BeamConfig;
use genret::eval::{format_table, run_ablation, write_report_csv, ExperimentSetup, GridSpec};
use genret::identifier::read_idmap_rows;
use genret::{ItemId, Scheme, Split, SplitFilter};

use crate::pipeline::{self, Outcome};
use crate::stages::{self, ModelConfig, RetrieveInputs, TrainInputs};
use crate::{CliError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "genret", version, about = "Generative retrieval experiments on embedding corpora")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its queries.
    Synth(SynthArgs),
    /// Validate and normalize a JSONL corpus.
    Ingest(IngestArgs),
    /// Assign identifiers under one scheme.
    AssignIds(AssignArgs),
    /// Train a scorer (memorize, then retrieve).
    Train(TrainArgs),
    /// Decode queries into a ranked-results file.
    Retrieve(RetrieveArgs),
    /// Score a results file, or train and evaluate an ablation grid.
    Eval(EvalArgs),
    /// Latency of dense scan vs generative decoding across corpus sizes.
    Bench(BenchArgs),
    /// Print one item's identifier under each loaded map.
    Inspect(InspectArgs),
    /// Run every stage from one config file.
    Pipeline(PipelineArgs),
}

/// Config file plus `key=value` overrides.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, extra: Vec<String>) -> Result<RunConfig, CliError> {
        let mut overrides = self.set.clone();
        overrides.extend(extra);
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn set<T: ToString>(key: &str, v: Option<T>) -> Option<String> {
    v.map(|v| format!("{key}={}", v.to_string()))
}

fn set_str(key: &str, v: Option<impl AsRef<str>>) -> Option<String> {
    v.map(|v| format!("{key}={:?}", v.as_ref()))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Queries per item.
    #[arg(long)]
    pub qpi: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus output; queries go next to it as `queries.jsonl` unless given.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub queries_out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Keep embeddings as given instead of L2-normalizing.
    #[arg(long)]
    pub no_normalize: bool,
    /// Normalized corpus output; only validation is done when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub queries_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub scheme: Scheme,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Receives `idmap.tsv` and `vocab.txt`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub idmap: PathBuf,
    /// Defaults to `vocab.txt` next to the identifier map.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Receives `checkpoint.bin` and `loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub steps_memorize: Option<usize>,
    #[arg(long)]
    pub steps_retrieve: Option<usize>,
    #[arg(long)]
    pub skip_memorize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub idmap: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub query_file: PathBuf,
    /// Restricts the trie (and the decoded queries) to a split.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `test` (default) or `all`; needs `--corpus`.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 10)]
    pub beam: usize,
    #[arg(long)]
    pub unconstrained: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ablation grid, e.g. `scheme=all;constrained=on,off;memorize=on;beam=10`.
    #[arg(long, conflicts_with = "results")]
    pub grid: Option<String>,
    #[arg(long, requires = "queries")]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "1k,10k,100k")]
    pub sizes: String,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 10)]
    pub beam: usize,
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "latency.csv")]
    pub out: PathBuf,
    /// Optional gnuplot data file.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Identifier map; repeatable.
    #[arg(long, required = true)]
    pub idmap: Vec<PathBuf>,
    #[arg(long)]
    pub item: u32,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Skip stages whose recorded inputs and outputs are unchanged.
    #[arg(long)]
    pub resume: bool,
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::AssignIds(a) => assign_ids(a),
        Command::Train(a) => train(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Inspect(a) => inspect(a),
        Command::Pipeline(a) => pipeline_cmd(a),
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let extra = [
        set("n_items", a.n),
        set("dim", a.dim),
        set("queries_per_item", a.qpi),
        set("noise_sigma", a.sigma),
        set("seed_data", a.seed),
    ];
    let cfg = a.cfg.load(extra.into_iter().flatten().collect())?;
    let queries_out = a.queries_out.unwrap_or_else(|| sibling(&a.out, stages::QUERIES));
    let header = cfg.provenance().header_line();
    let (n, q) = stages::synth(&cfg.synth_config(), cfg.fractions(), &a.out, &queries_out, &header)?;
    println!("wrote {n} items to {} and {q} queries to {}", a.out.display(), queries_out.display());
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<(), CliError> {
    let cfg = RunConfig::default();
    let header = cfg.provenance().header_line();
    let tmp;
    let out = match &a.out {
        Some(p) => p.clone(),
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().join(stages::CORPUS)
        }
    };
    let queries_out = a.queries.as_ref().map(|_| a.queries_out.clone().unwrap_or_else(|| sibling(&out, stages::QUERIES)));
    let (n, q) = stages::ingest(&a.input, a.queries.as_deref(), !a.no_normalize, &out, queries_out.as_deref(), &header)?;
    println!("{n} items, {q} queries ok");
    if let Some(p) = &a.out {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn assign_ids(a: AssignArgs) -> Result<(), CliError> {
    let extra = [set_str("scheme", Some(a.scheme.as_str())), set("k", a.k), set("c", a.c), set("seed_identifier", a.seed)];
    let cfg = a.cfg.load(extra.into_iter().flatten().collect())?;
    std::fs::create_dir_all(&a.out)?;
    let header = cfg.provenance().header_line();
    let (idmap, vocab) = (a.out.join(stages::IDMAP), a.out.join(stages::VOCAB));
    let v = stages::assign_ids(&a.corpus, cfg.scheme, &cfg.assign_options(), &idmap, &vocab, &header)?;
    println!("{} identifiers, vocabulary {v}, in {}", cfg.scheme, a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let extra = [
        set("hidden", a.hidden),
        set("learning_rate", a.lr),
        set("batch_size", a.batch),
        set("steps_memorize", a.steps_memorize),
        set("steps_retrieve", a.steps_retrieve),
        set("seed_training", a.seed),
        a.skip_memorize.then(|| "skip_memorize=true".to_owned()),
    ];
    let cfg = a.cfg.load(extra.into_iter().flatten().collect())?;
    std::fs::create_dir_all(&a.out)?;
    let vocab = a.vocab.unwrap_or_else(|| sibling(&a.idmap, stages::VOCAB));
    let inputs = TrainInputs { corpus: &a.corpus, queries: &a.queries, idmap: &a.idmap, vocab: &vocab };
    let model = ModelConfig { hidden: cfg.hidden, max_len: cfg.max_len, init_seed: cfg.seed_training };
    let header = cfg.provenance().header_line();
    let (ckpt, loss) = (a.out.join(stages::CHECKPOINT), a.out.join(stages::LOSS));
    let last = stages::train_model(&inputs, &model, &cfg.train_config(), &ckpt, &loss, &header)?;
    match last {
        Some(l) => println!("final loss {l:.4}; wrote {} and {}", ckpt.display(), loss.display()),
        None => println!("no steps run; wrote {}", ckpt.display()),
    }
    Ok(())
}

fn parse_filter(s: &str) -> Result<SplitFilter, CliError> {
    match s {
        "all" => Ok(SplitFilter::All),
        other => other
            .parse::<Split>()
            .map(SplitFilter::Only)
            .map_err(|_| CliError::Config(format!("unknown split `{other}`"))),
    }
}

fn retrieve(a: RetrieveArgs) -> Result<(), CliError> {
    let filter = parse_filter(&a.split)?;
    let cfg = RunConfig { beam: a.beam, constrained: !a.unconstrained, ..RunConfig::default() };
    cfg.validate()?;
    let vocab = a.vocab.unwrap_or_else(|| sibling(&a.idmap, stages::VOCAB));
    let inputs = RetrieveInputs {
        checkpoint: &a.checkpoint,
        idmap: &a.idmap,
        vocab: &vocab,
        queries: &a.query_file,
        corpus: a.corpus.as_deref(),
    };
    let beam = BeamConfig { beam: a.beam, constrained: !a.unconstrained, max_len: None };
    let header = cfg.provenance().header_line();
    let n = stages::retrieve(&inputs, filter, beam, genret::worker_threads(), &a.out, &header)?;
    println!("decoded {n} queries into {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let reports = if let Some(results) = &a.results {
        let queries = a.queries.as_ref().expect("clap enforces --queries");
        let cfg = RunConfig::default();
        let report = stages::evaluate(results, queries)?;
        write_report_csv(std::slice::from_ref(&report), &a.out, Some(&cfg.provenance().header_line()))?;
        vec![report]
    } else {
        let cfg = a.cfg.load(Vec::new())?;
        let grid: GridSpec = a.grid.as_deref().unwrap_or("").parse()?;
        let tmp = tempfile::tempdir()?;
        let (cp, qp) = (tmp.path().join(stages::CORPUS), tmp.path().join(stages::QUERIES));
        let header = cfg.provenance().header_line();
        match (&cfg.corpus, &cfg.queries) {
            (Some(c), Some(q)) => stages::ingest(c, Some(q), true, &cp, Some(&qp), &header)?,
            _ => stages::synth(&cfg.synth_config(), cfg.fractions(), &cp, &qp, &header)?,
        };
        let corpus = stages::read_corpus(&cp)?;
        let queries = stages::read_queries(&qp)?;
        let setup = ExperimentSetup {
            corpus: &corpus,
            queries: &queries,
            assign: cfg.assign_options(),
            hidden: cfg.hidden,
            init_seed: cfg.seed_training,
            train: cfg.train_config(),
            threads: genret::worker_threads(),
        };
        let reports = run_ablation(&setup, &grid)?;
        write_report_csv(&reports, &a.out, Some(&header))?;
        reports
    };
    print!("{}", format_table(&reports));
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<(), CliError> {
    let cfg = BenchConfig {
        sizes: bench::parse_sizes(&a.sizes)?,
        n_queries: a.queries,
        beam: a.beam,
        trials: a.trials,
        seed: a.seed,
        threads: genret::worker_threads(),
        ..BenchConfig::default()
    };
    let reports = bench::run_scaling(&cfg)?;
    let header = RunConfig { seed_data: a.seed, ..RunConfig::default() }.provenance().header_line();
    bench::write_latency_csv(&reports, &a.out, Some(&header))?;
    if let Some(p) = &a.plot {
        bench::write_plot_data(&reports, p)?;
    }
    println!("{:<11} {:>8} {:>8} {:>12} {:>16}", "method", "n", "vocab", "qps", "mean_latency_s");
    for r in &reports {
        println!("{:<11} {:>8} {:>8} {:>12.1} {:>16.9}", r.method, r.corpus_size, r.vocab_size, r.qps, r.mean_latency_s);
    }
    let dense = bench::latency_curve(&reports, Method::Dense);
    let (xs, ys): (Vec<f64>, Vec<f64>) = dense.iter().map(|&(n, l)| (n as f64, l)).unzip();
    if let Some(fit) = bench::linear_fit(&xs, &ys) {
        println!("dense linear fit: R^2 = {:.4}", fit.r2);
    }
    if let Some(r) = bench::latency_ratio(&reports, Method::Generative) {
        println!("generative max/min latency ratio: {r:.2}");
    }
    match bench::crossover(&reports) {
        Some(n) => println!("crossover at N = {n}"),
        None => println!("no crossover in the measured range"),
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let mut lines = Vec::new();
    for path in &a.idmap {
        if !path.is_file() {
            return Err(CliError::MissingPath(path.clone()));
        }
        let rows = read_idmap_rows(path)?;
        if let Some(row) = rows.iter().find(|r| r.item == ItemId(a.item)) {
            lines.push(format!("{}: {}", row.scheme, row.tokens.join(" ")));
        }
    }
    if lines.is_empty() {
        return Err(CliError::UnknownItem(a.item));
    }
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

fn pipeline_cmd(a: PipelineArgs) -> Result<(), CliError> {
    let extra = set_str("out_dir", a.out_dir.as_ref().map(|p| p.to_string_lossy().into_owned()));
    let cfg = a.cfg.load(extra.into_iter().collect())?;
    let summary = pipeline::run(&cfg, a.resume)?;
    for (stage, outcome) in &summary.stages {
        let what = match outcome {
            Outcome::Ran => "ran",
            Outcome::Skipped => "skipped",
        };
        println!("{:<11} {what}", stage.name());
    }
    print!("{}", format_table(std::slice::from_ref(&summary.report)));
    println!("artifacts in {}", summary.out_dir.display());
    Ok(())
}
