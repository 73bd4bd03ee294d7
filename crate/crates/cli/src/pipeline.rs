//! End-to-end run: corpus, identifiers, training, retrieval, evaluation.
//!
//! Stage outputs are written into a staging directory inside `out_dir` and
//! moved into place once the stage succeeds. `stages.json` records, per
//! stage, a key over the settings it reads and its input hashes plus the hash of each
//! output; with `resume`, stages whose key and outputs still match are
//! skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use genret::decoder::BeamConfig;
use genret::eval::{write_report_csv, EvalReport};
use genret::provenance::short_hash;
use genret::SplitFilter;
use serde::{Deserialize, Serialize};

use crate::stages;
use crate::{CliError, RunConfig};

pub const MANIFEST: &str = "stages.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Corpus,
    Assign,
    Train,
    Retrieve,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Corpus, Stage::Assign, Stage::Train, Stage::Retrieve, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Assign => "assign-ids",
            Stage::Train => "train",
            Stage::Retrieve => "retrieve",
            Stage::Eval => "eval",
        }
    }

    fn inputs(self) -> &'static [&'static str] {
        use stages::*;
        match self {
            Stage::Corpus => &[],
            Stage::Assign => &[CORPUS],
            Stage::Train => &[CORPUS, QUERIES, IDMAP, VOCAB],
            Stage::Retrieve => &[CORPUS, QUERIES, IDMAP, VOCAB, CHECKPOINT],
            Stage::Eval => &[QUERIES, RESULTS],
        }
    }

    fn outputs(self) -> &'static [&'static str] {
        use stages::*;
        match self {
            Stage::Corpus => &[CORPUS, QUERIES],
            Stage::Assign => &[IDMAP, VOCAB],
            Stage::Train => &[CHECKPOINT, LOSS],
            Stage::Retrieve => &[RESULTS],
            Stage::Eval => &[REPORT],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    key: String,
    outputs: BTreeMap<String, String>,
}

type Manifest = BTreeMap<String, StageRecord>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub stages: Vec<(Stage, Outcome)>,
    pub report: EvalReport,
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    Ok(short_hash(&fs::read(path)?))
}

/// The config fields a stage reads directly; upstream settings reach it
/// through the input hashes.
fn stage_settings(cfg: &RunConfig, stage: Stage) -> String {
    match stage {
        Stage::Corpus => format!(
            "{:?} {:?} {} {} {} {} {:?} {}",
            cfg.corpus,
            cfg.queries,
            cfg.n_items,
            cfg.dim,
            cfg.queries_per_item,
            cfg.noise_sigma,
            cfg.fractions(),
            cfg.seed_data
        ),
        Stage::Assign => format!("{} {:?}", cfg.scheme, cfg.assign_options()),
        Stage::Train => format!("{} {:?} {} {:?}", cfg.hidden, cfg.max_len, cfg.seed_training, cfg.train_config()),
        Stage::Retrieve => format!("{} {}", cfg.beam, cfg.constrained),
        Stage::Eval => String::new(),
    }
}

fn stage_key(cfg: &RunConfig, stage: Stage, dir: &Path) -> Result<String, CliError> {
    let mut text = format!("{}\n{}\n", stage.name(), stage_settings(cfg, stage));
    for name in stage.inputs() {
        text.push_str(&format!("{name}={}\n", file_hash(&dir.join(name))?));
    }
    if stage == Stage::Corpus {
        for p in [&cfg.corpus, &cfg.queries].into_iter().flatten() {
            text.push_str(&format!("{}={}\n", p.display(), file_hash(p)?));
        }
    }
    Ok(short_hash(text.as_bytes()))
}

fn read_manifest(dir: &Path) -> Manifest {
    fs::read_to_string(dir.join(MANIFEST))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default()
}

fn write_manifest(dir: &Path, staging: &Path, m: &Manifest) -> Result<(), CliError> {
    let tmp = staging.join(MANIFEST);
    fs::write(&tmp, serde_json::to_string_pretty(m).expect("manifest serializes") + "\n")?;
    fs::rename(tmp, dir.join(MANIFEST))?;
    Ok(())
}

fn is_current(rec: Option<&StageRecord>, key: &str, stage: Stage, dir: &Path) -> bool {
    let Some(rec) = rec else { return false };
    rec.key == key
        && stage.outputs().iter().all(|name| {
            let path = dir.join(name);
            rec.outputs.get(*name).is_some_and(|h| file_hash(&path).is_ok_and(|f| &f == h))
        })
}

fn run_stage(cfg: &RunConfig, stage: Stage, dir: &Path, staging: &Path) -> Result<(), CliError> {
    let header = cfg.provenance().header_line();
    let input = |name: &str| dir.join(name);
    let output = |name: &str| staging.join(name);
    use stages::*;
    match stage {
        Stage::Corpus => match (&cfg.corpus, &cfg.queries) {
            (Some(c), Some(q)) => {
                stages::ingest(c, Some(q), true, &output(CORPUS), Some(&output(QUERIES)), &header)?;
            }
            _ => {
                stages::synth(&cfg.synth_config(), cfg.fractions(), &output(CORPUS), &output(QUERIES), &header)?;
            }
        },
        Stage::Assign => {
            stages::assign_ids(&input(CORPUS), cfg.scheme, &cfg.assign_options(), &output(IDMAP), &output(VOCAB), &header)?;
        }
        Stage::Train => {
            let (corpus, queries, idmap, vocab) = (input(CORPUS), input(QUERIES), input(IDMAP), input(VOCAB));
            let inputs = TrainInputs { corpus: &corpus, queries: &queries, idmap: &idmap, vocab: &vocab };
            let model = ModelConfig { hidden: cfg.hidden, max_len: cfg.max_len, init_seed: cfg.seed_training };
            stages::train_model(&inputs, &model, &cfg.train_config(), &output(CHECKPOINT), &output(LOSS), &header)?;
        }
        Stage::Retrieve => {
            let (corpus, queries, idmap, vocab, ckpt) =
                (input(CORPUS), input(QUERIES), input(IDMAP), input(VOCAB), input(CHECKPOINT));
            let inputs = RetrieveInputs {
                checkpoint: &ckpt,
                idmap: &idmap,
                vocab: &vocab,
                queries: &queries,
                corpus: Some(&corpus),
            };
            let beam = BeamConfig { beam: cfg.beam, constrained: cfg.constrained, max_len: None };
            let filter = SplitFilter::Only(genret::Split::Test);
            stages::retrieve(&inputs, filter, beam, genret::worker_threads(), &output(RESULTS), &header)?;
        }
        Stage::Eval => {
            let report = stages::evaluate(&input(RESULTS), &input(QUERIES))?;
            write_report_csv(&[report], &output(REPORT), Some(&header))?;
        }
    }
    Ok(())
}

/// Runs every stage in order. The config is validated before anything is
/// written.
pub fn run(cfg: &RunConfig, resume: bool) -> Result<PipelineSummary, CliError> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir)?;
    let staging = tempfile::Builder::new().prefix(".staging-").tempdir_in(&dir)?;
    let mut manifest = if resume { read_manifest(&dir) } else { Manifest::new() };
    let mut done = Vec::new();
    for stage in Stage::ALL {
        let key = stage_key(cfg, stage, &dir)?;
        if resume && is_current(manifest.get(stage.name()), &key, stage, &dir) {
            done.push((stage, Outcome::Skipped));
            continue;
        }
        run_stage(cfg, stage, &dir, staging.path())?;
        let mut outputs = BTreeMap::new();
        for name in stage.outputs() {
            let h = file_hash(&staging.path().join(name))?;
            fs::rename(staging.path().join(name), dir.join(name))?;
            outputs.insert((*name).to_owned(), h);
        }
        manifest.insert(stage.name().to_owned(), StageRecord { key, outputs });
        write_manifest(&dir, staging.path(), &manifest)?;
        done.push((stage, Outcome::Ran));
    }
    let report = stages::evaluate(&dir.join(stages::RESULTS), &dir.join(stages::QUERIES))?;
    Ok(PipelineSummary { out_dir: dir, stages: done, report })
}
