//! Trained-model checks on small synthetic corpora.

use std::sync::OnceLock;

use genret::corpus::{synthesize, SynthConfig};
use genret::decoder::{generate, retrieve_all, BeamConfig};
use genret::eval::score_results;
use genret::identifier::{assign, AssignOptions, Assignment};
use genret::scorer::{train, train_memorize, ModelShape};
use genret::{Corpus, Query, Scheme, ScorerParams, Split, SplitFilter, Task, TrainConfig, Trie};

type Model = (Corpus<f32>, Vec<Query<f32>>, Assignment<f32>, ScorerParams<f32>);

fn setup(n: usize, sigma: f64, scheme: Scheme) -> (Corpus<f32>, Vec<Query<f32>>, Assignment<f32>, ScorerParams<f32>) {
    let cfg = SynthConfig { n_items: n, noise_sigma: sigma, ..SynthConfig::default() };
    let (c, q) = synthesize::<f32>(&cfg).unwrap();
    let c = c.split_assign((0.8, 0.1, 0.1), 7).unwrap();
    let a = assign(scheme, &c, &AssignOptions::default()).unwrap();
    let shape = ModelShape { vocab: a.vocab.len(), cond_dim: c.dim(), hidden: 128, max_len: a.ids.max_len() + 1 };
    let p = ScorerParams::init(shape, 0);
    (c, q, a, p)
}

fn greedy(p: &ScorerParams<f32>, cond: &[f32], task: Task, max_len: usize) -> Vec<u32> {
    generate(p, cond, task, 1, None, max_len).unwrap().remove(0).tokens
}

/// N=100 atomic, σ=0, default training (both phases).
fn sigma0_model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| {
        let (c, q, a, p) = setup(100, 0.0, Scheme::Atomic);
        let (p, _) = train(p, &c, &q, &a.ids, &TrainConfig::default()).unwrap();
        (c, q, a, p)
    })
}

#[test]
fn memorizes_every_item_at_n100() {
    let (c, _, a, p) = setup(100, 0.05, Scheme::Atomic);
    let (p, trace) = train_memorize(p, &c, &a.ids, &TrainConfig::default()).unwrap();
    assert_eq!(trace.len(), 2000);
    assert!(trace.last().unwrap().loss < trace[0].loss);
    let max_len = a.ids.max_len();
    let wrong: Vec<_> = c
        .records()
        .iter()
        .filter(|r| greedy(&p, &r.embedding, Task::Memorize, max_len) != a.ids.get(r.id).unwrap().tokens)
        .map(|r| r.id)
        .collect();
    assert!(wrong.is_empty(), "not memorized: {wrong:?}");
}

#[test]
fn zero_noise_retrieve_agrees_with_memorize() {
    let (c, _, a, p) = sigma0_model();
    let max_len = a.ids.max_len();
    let agree = c
        .records()
        .iter()
        .filter(|r| greedy(p, &r.embedding, Task::Memorize, max_len) == greedy(p, &r.embedding, Task::Retrieve, max_len))
        .count();
    assert!(agree as f64 >= 0.99 * c.len() as f64, "{agree}/{}", c.len());
}

#[test]
fn trained_beam5_results_are_all_valid() {
    let (c, q, a, p) = sigma0_model();
    let test: Vec<Query<f32>> = q.iter().filter(|q| c.split_of(q.target) == Some(Split::Test)).cloned().collect();
    let trie = Trie::for_split(&a.ids, c, SplitFilter::Only(Split::Test)).unwrap();
    let res = retrieve_all(p, &test, &trie, BeamConfig::constrained(5), 1).unwrap();
    assert!(res.iter().all(|r| r.ranked.len() == 5.min(trie.len())));
    let s = score_results(&test, &res).unwrap();
    assert_eq!(s.validity, 1.0);
}

#[test]
fn undertrained_unconstrained_decoding_emits_invalid_ids() {
    let (c, q, a, p) = setup(100, 0.05, Scheme::Numeric);
    let cfg = TrainConfig { steps_memorize: 5, steps_retrieve: 5, ..TrainConfig::default() };
    let (p, trace) = train(p, &c, &q, &a.ids, &cfg).unwrap();
    assert!(trace.iter().all(|r| r.loss.is_finite()));
    let test: Vec<Query<f32>> = q.iter().filter(|q| c.split_of(q.target) == Some(Split::Test)).cloned().collect();
    let trie = Trie::for_split(&a.ids, &c, SplitFilter::Only(Split::Test)).unwrap();
    let free = retrieve_all(&p, &test, &trie, BeamConfig::unconstrained(10), 1).unwrap();
    assert!(score_results(&test, &free).unwrap().validity < 1.0);
    let held = retrieve_all(&p, &test, &trie, BeamConfig::constrained(10), 1).unwrap();
    assert_eq!(score_results(&test, &held).unwrap().validity, 1.0);
}

#[test]
fn skip_memorize_still_trains() {
    let (c, q, a, p) = setup(50, 0.05, Scheme::Structured);
    let cfg = TrainConfig { steps_retrieve: 50, skip_memorize: true, ..TrainConfig::default() };
    let (_, trace) = train(p, &c, &q, &a.ids, &cfg).unwrap();
    assert_eq!(trace.len(), 50);
    assert!(trace.iter().all(|r| r.phase == Task::Retrieve && r.loss.is_finite()));
}
