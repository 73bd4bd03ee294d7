//! Mini-batch Adam training for the memorize and retrieve phases.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Example, ScorerError, ScorerParams, Task, TENSOR_COUNT};
use crate::corpus::{Corpus, ItemId, Query, Split};
use crate::identifier::IdMap;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("item {0} has no identifier")]
    MissingIdentifier(ItemId),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("no training examples for the {0} phase")]
    NoExamples(Task),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps_memorize: usize,
    pub steps_retrieve: usize,
    pub seed: u64,
    pub skip_memorize: bool,
    /// Fraction of every retrieve batch drawn from memorize examples. Zero
    /// runs the two phases strictly one after the other.
    pub retrieve_mix: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            steps_memorize: 2000,
            steps_retrieve: 6000,
            seed: 0,
            skip_memorize: false,
            retrieve_mix: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.steps_memorize == 0 || self.steps_retrieve == 0 {
            return bad("step counts must be positive");
        }
        if !(0.0..1.0).contains(&self.retrieve_mix) {
            return bad("retrieve_mix must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Loss of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// 1-based, continuing across phases.
    pub step: usize,
    pub phase: Task,
    pub loss: f64,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ScorerParams<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = params.slices().iter().map(|s| vec![T::zero(); s.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ScorerParams<T>, grads: &ScorerParams<T>) {
        self.t += 1;
        let c1 = T::from_f64_lossy(1.0 / (1.0 - self.beta1.powi(self.t)));
        let c2 = T::from_f64_lossy(1.0 / (1.0 - self.beta2.powi(self.t)));
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let lr = T::from_f64_lossy(self.lr);
        let eps = T::from_f64_lossy(self.eps);
        let gs = grads.slices();
        for (k, p) in params.slices_mut().into_iter().enumerate().take(TENSOR_COUNT) {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], gs[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                p[i] = p[i] - lr * (m[i] * c1) / ((v[i] * c2).sqrt() + eps);
            }
        }
    }
}

/// Reshuffles the index set at every epoch boundary.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng, out: &mut Vec<usize>) {
        for _ in 0..k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
    }
}

struct Phase<'a, T> {
    task: Task,
    steps: usize,
    examples: &'a [Example<'a, T>],
    mix: Option<(&'a [Example<'a, T>], usize)>,
}

fn run_phase<T: Scalar>(
    mut params: ScorerParams<T>,
    phase: Phase<'_, T>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<LossRecord>,
) -> Result<ScorerParams<T>, TrainError> {
    if phase.examples.is_empty() {
        return Err(TrainError::NoExamples(phase.task));
    }
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let n_mix = phase.mix.map_or(0, |(_, n)| n);
    let mut main = EpochSampler::new(phase.examples.len(), rng);
    let mut extra = phase.mix.map(|(ex, _)| EpochSampler::new(ex.len(), rng));
    let mut idx = Vec::with_capacity(cfg.batch_size);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..phase.steps {
        idx.clear();
        batch.clear();
        main.take(cfg.batch_size - n_mix, rng, &mut idx);
        batch.extend(idx.iter().map(|&i| phase.examples[i]));
        if let (Some(s), Some((ex, n))) = (extra.as_mut(), phase.mix) {
            idx.clear();
            s.take(n, rng, &mut idx);
            batch.extend(idx.iter().map(|&i| ex[i]));
        }
        let (loss, grads) = params.loss_and_grad(&batch)?;
        adam.step(&mut params, &grads);
        trace.push(LossRecord { step: trace.len() + 1, phase: phase.task, loss: loss.as_f64() });
    }
    Ok(params)
}

fn memorize_examples<'a, T: Scalar>(
    corpus: &'a Corpus<T>,
    idmap: &'a IdMap,
) -> Result<Vec<Example<'a, T>>, TrainError> {
    corpus
        .records()
        .iter()
        .map(|r| {
            let id = idmap.get(r.id).ok_or(TrainError::MissingIdentifier(r.id))?;
            Ok(Example { condition: &r.embedding, task: Task::Memorize, target: &id.tokens })
        })
        .collect()
}

/// Queries whose target item is in the training split.
fn retrieve_examples<'a, T: Scalar>(
    corpus: &Corpus<T>,
    queries: &'a [Query<T>],
    idmap: &'a IdMap,
) -> Result<Vec<Example<'a, T>>, TrainError> {
    queries
        .iter()
        .filter(|q| corpus.split_of(q.target) == Some(Split::Train))
        .map(|q| {
            let id = idmap.get(q.target).ok_or(TrainError::MissingIdentifier(q.target))?;
            Ok(Example { condition: &q.embedding, task: Task::Retrieve, target: &id.tokens })
        })
        .collect()
}

/// Memorize phase: every corpus item's embedding to its identifier.
pub fn train_memorize<T: Scalar>(
    params: ScorerParams<T>,
    corpus: &Corpus<T>,
    idmap: &IdMap,
    cfg: &TrainConfig,
) -> Result<(ScorerParams<T>, Vec<LossRecord>), TrainError> {
    cfg.validate()?;
    let examples = memorize_examples(corpus, idmap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps_memorize);
    let phase = Phase { task: Task::Memorize, steps: cfg.steps_memorize, examples: &examples, mix: None };
    let params = run_phase(params, phase, cfg, &mut rng, &mut trace)?;
    Ok((params, trace))
}

/// Retrieve phase: training-split queries to their target's identifier.
pub fn train_retrieve<T: Scalar>(
    params: ScorerParams<T>,
    corpus: &Corpus<T>,
    queries: &[Query<T>],
    idmap: &IdMap,
    cfg: &TrainConfig,
) -> Result<(ScorerParams<T>, Vec<LossRecord>), TrainError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0002);
    let mut trace = Vec::with_capacity(cfg.steps_retrieve);
    let params = retrieve_phase(params, corpus, queries, idmap, cfg, &mut rng, &mut trace)?;
    Ok((params, trace))
}

fn retrieve_phase<T: Scalar>(
    params: ScorerParams<T>,
    corpus: &Corpus<T>,
    queries: &[Query<T>],
    idmap: &IdMap,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<LossRecord>,
) -> Result<ScorerParams<T>, TrainError> {
    let examples = retrieve_examples(corpus, queries, idmap)?;
    let n_mix = (cfg.retrieve_mix * cfg.batch_size as f64).round() as usize;
    let n_mix = n_mix.min(cfg.batch_size - 1);
    let mem = if n_mix > 0 { memorize_examples(corpus, idmap)? } else { Vec::new() };
    let phase = Phase {
        task: Task::Retrieve,
        steps: cfg.steps_retrieve,
        examples: &examples,
        mix: (n_mix > 0).then_some((mem.as_slice(), n_mix)),
    };
    run_phase(params, phase, cfg, rng, trace)
}

/// Both phases in order; the memorize phase is skipped when configured.
pub fn train<T: Scalar>(
    params: ScorerParams<T>,
    corpus: &Corpus<T>,
    queries: &[Query<T>],
    idmap: &IdMap,
    cfg: &TrainConfig,
) -> Result<(ScorerParams<T>, Vec<LossRecord>), TrainError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps_memorize + cfg.steps_retrieve);
    let mut params = params;
    if !cfg.skip_memorize {
        let examples = memorize_examples(corpus, idmap)?;
        let phase = Phase { task: Task::Memorize, steps: cfg.steps_memorize, examples: &examples, mix: None };
        params = run_phase(params, phase, cfg, &mut rng, &mut trace)?;
    }
    let params = retrieve_phase(params, corpus, queries, idmap, cfg, &mut rng, &mut trace)?;
    Ok((params, trace))
}

/// `step,phase,loss` CSV.
pub fn write_loss_csv(trace: &[LossRecord], path: &Path, header: Option<&str>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(w, "{h}")?;
    }
    writeln!(w, "step,phase,loss")?;
    for r in trace {
        writeln!(w, "{},{},{}", r.step, r.phase, r.loss)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize, SynthConfig};
    use crate::identifier::{assign, AssignOptions, Scheme};
    use crate::scorer::ModelShape;

    fn setup(n: usize) -> (Corpus<f32>, Vec<Query<f32>>, IdMap, ScorerParams<f32>) {
        let (c, q) = synthesize::<f32>(&SynthConfig { n_items: n, dim: 8, queries_per_item: 2, noise_sigma: 0.0, seed: 3 })
            .unwrap();
        let a = assign(Scheme::Atomic, &c, &AssignOptions::default()).unwrap();
        let shape = ModelShape { vocab: a.vocab.len(), cond_dim: 8, hidden: 16, max_len: a.ids.max_len() + 1 };
        let p = ScorerParams::init(shape, 5);
        (c, q, a.ids, p)
    }

    fn quick() -> TrainConfig {
        TrainConfig { learning_rate: 1e-2, batch_size: 8, steps_memorize: 30, steps_retrieve: 20, ..Default::default() }
    }

    #[test]
    fn deterministic_for_seed() {
        let (c, q, ids, p) = setup(20);
        let a = train(p.clone(), &c, &q, &ids, &quick()).unwrap();
        let b = train(p.clone(), &c, &q, &ids, &quick()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let other = train(p, &c, &q, &ids, &TrainConfig { seed: 1, ..quick() }).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn trace_starts_at_log_v_and_decreases() {
        let (c, _, ids, p) = setup(20);
        let v = p.vocab_size() as f64;
        let (_, trace) = train_memorize(p, &c, &ids, &quick()).unwrap();
        assert_eq!(trace.len(), 30);
        assert!((trace[0].loss - v.ln()).abs() < 1e-5);
        assert!(trace.last().unwrap().loss < trace[0].loss);
        assert!(trace.iter().all(|r| r.phase == Task::Memorize));
    }

    #[test]
    fn skip_memorize_runs_retrieve_only() {
        let (c, q, ids, p) = setup(20);
        let cfg = TrainConfig { skip_memorize: true, ..quick() };
        let (_, trace) = train(p, &c, &q, &ids, &cfg).unwrap();
        assert_eq!(trace.len(), 20);
        assert!(trace.iter().all(|r| r.phase == Task::Retrieve && r.loss.is_finite()));
        assert_eq!(trace[0].step, 1);
    }

    #[test]
    fn missing_identifier_is_reported() {
        let (c, q, ids, p) = setup(5);
        let mut partial = IdMap::new(Scheme::Atomic);
        for id in ids.iter().take(4) {
            partial.insert(id.item, id.tokens.clone());
        }
        let err = train_memorize(p.clone(), &c, &partial, &quick()).unwrap_err();
        assert!(matches!(err, TrainError::MissingIdentifier(ItemId(4))));
        let err = train_retrieve(p, &c, &q, &partial, &quick()).unwrap_err();
        assert!(matches!(err, TrainError::MissingIdentifier(ItemId(4))));
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..quick() },
            TrainConfig { batch_size: 0, ..quick() },
            TrainConfig { steps_retrieve: 0, ..quick() },
            TrainConfig { retrieve_mix: 1.0, ..quick() },
        ] {
            assert!(matches!(cfg.validate(), Err(TrainError::InvalidConfig(_))));
        }
    }

    #[test]
    fn mixed_retrieve_batches_train() {
        let (c, q, ids, p) = setup(20);
        let cfg = TrainConfig { retrieve_mix: 0.25, ..quick() };
        let (_, trace) = train(p, &c, &q, &ids, &cfg).unwrap();
        assert_eq!(trace.len(), 50);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let shape = ModelShape { vocab: 4, cond_dim: 2, hidden: 2, max_len: 2 };
        let mut p = ScorerParams::<f64>::zeros(shape);
        let mut g = ScorerParams::<f64>::zeros(shape);
        g.b_out[1] = 3.0;
        g.b_out[2] = -0.5;
        let mut adam = Adam::new(&p, 0.1);
        adam.step(&mut p, &g);
        assert!((p.b_out[1] + 0.1).abs() < 1e-6);
        assert!((p.b_out[2] - 0.1).abs() < 1e-6);
        assert_eq!(p.b_out[0], 0.0);
    }

    #[test]
    fn loss_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let trace = [LossRecord { step: 1, phase: Task::Memorize, loss: 2.5 }];
        write_loss_csv(&trace, &p, Some("#!genret x")).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "#!genret x\nstep,phase,loss\n1,memorize,2.5\n");
    }
}
