//! Flat TOML run configuration.

use std::path::{Path, PathBuf};

use genret::corpus::SynthConfig;
use genret::identifier::{AssignOptions, Scheme};
use genret::provenance::{short_hash, Provenance, Seeds};
use genret::scorer::{TrainConfig, DEFAULT_HIDDEN};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// JSONL corpus to ingest; a synthetic corpus is generated when absent.
    pub corpus: Option<PathBuf>,
    /// JSONL queries; required together with `corpus`.
    pub queries: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub n_items: usize,
    pub dim: usize,
    pub queries_per_item: usize,
    pub noise_sigma: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,

    pub scheme: Scheme,
    pub k: usize,
    pub c: usize,
    pub kmeans_iters: usize,

    pub hidden: usize,
    /// Position slots; longest identifier + 1 when absent.
    pub max_len: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps_memorize: usize,
    pub steps_retrieve: usize,
    pub skip_memorize: bool,
    pub retrieve_mix: f64,

    pub beam: usize,
    pub constrained: bool,

    pub seed_data: u64,
    pub seed_identifier: u64,
    pub seed_training: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let assign = AssignOptions::default();
        let train = TrainConfig::default();
        Self {
            corpus: None,
            queries: None,
            out_dir: PathBuf::from("genret-run"),
            n_items: synth.n_items,
            dim: synth.dim,
            queries_per_item: synth.queries_per_item,
            noise_sigma: synth.noise_sigma,
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
            scheme: Scheme::Atomic,
            k: assign.k,
            c: assign.c,
            kmeans_iters: assign.kmeans_iters,
            hidden: DEFAULT_HIDDEN,
            max_len: None,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            steps_memorize: train.steps_memorize,
            steps_retrieve: train.steps_retrieve,
            skip_memorize: false,
            retrieve_mix: 0.0,
            beam: 10,
            constrained: true,
            seed_data: synth.seed,
            seed_identifier: 0,
            seed_training: 0,
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any) and applies `key=value` overrides on top.
    /// Override values are parsed as TOML and fall back to plain strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
            table.insert(key.trim().to_owned(), value);
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.corpus.is_some() != self.queries.is_some() {
            return bad("`corpus` and `queries` must be given together".into());
        }
        for p in [&self.corpus, &self.queries].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::MissingPath(p.clone()));
            }
        }
        if self.beam == 0 {
            return bad("beam must be positive".into());
        }
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds { data: self.seed_data, identifier: self.seed_identifier, training: self.seed_training }
    }

    /// Canonical TOML of every setting that affects artifact contents (the
    /// output directory is left out).
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        toml::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        short_hash(self.canonical().as_bytes())
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(&self.canonical(), self.seeds())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_items: self.n_items,
            dim: self.dim,
            queries_per_item: self.queries_per_item,
            noise_sigma: self.noise_sigma,
            seed: self.seed_data,
        }
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train_frac, self.val_frac, self.test_frac)
    }

    pub fn assign_options(&self) -> AssignOptions {
        AssignOptions { seed: self.seed_identifier, k: self.k, c: self.c, kmeans_iters: self.kmeans_iters }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            steps_memorize: self.steps_memorize,
            steps_retrieve: self.steps_retrieve,
            seed: self.seed_training,
            skip_memorize: self.skip_memorize,
            retrieve_mix: self.retrieve_mix,
        }
    }
}
