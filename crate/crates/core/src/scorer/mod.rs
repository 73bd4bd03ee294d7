//! Conditional autoregressive scorer over identifier tokens.
//!
//! The decoder state for a prefix is the mean of its token and position
//! embeddings, plus a projection of the conditioning embedding and a learned
//! task vector. Two tanh layers and a vocabulary projection turn that state
//! into next-token log-probabilities.

mod backprop;
pub mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::identifier::TokenId;
use crate::scalar::Scalar;

pub use backprop::Example;
pub use train::{
    train, train_memorize, train_retrieve, write_loss_csv, Adam, LossRecord, TrainConfig,
    TrainError,
};

/// Which instruction the model is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    /// Item embedding to identifier.
    Memorize,
    /// Query embedding to identifier of the relevant item.
    Retrieve,
}

impl Task {
    pub fn row(self) -> usize {
        match self {
            Task::Memorize => 0,
            Task::Retrieve => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Memorize => "memorize",
            Task::Retrieve => "retrieve",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "memorize" => Ok(Task::Memorize),
            "retrieve" => Ok(Task::Retrieve),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScorerError {
    #[error("prefix of length {len} does not fit a model with {max_len} positions")]
    PrefixTooLong { len: usize, max_len: usize },
    #[error("token {token} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { token: TokenId, vocab: usize },
    #[error("condition has dimension {found}, model expects {expected}")]
    ConditionDim { expected: usize, found: usize },
    #[error("cannot shrink the vocabulary from {from} to {to}")]
    ShrinkNotAllowed { from: usize, to: usize },
}

/// Hidden width used unless a run configures another.
pub const DEFAULT_HIDDEN: usize = 128;

/// Sizes that fix the parameter shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub vocab: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    /// Number of position embeddings; must exceed the longest prefix fed in.
    pub max_len: usize,
}

/// Every trainable array of the scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams<T> {
    pub token_embed: Array2<T>,
    pub pos_embed: Array2<T>,
    pub cond_proj: Array2<T>,
    pub task_embed: Array2<T>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
    /// One row per vocabulary token.
    pub w_out: Array2<T>,
    pub b_out: Array1<T>,
}

pub(crate) const TENSOR_COUNT: usize = 10;

impl<T: Scalar> ScorerParams<T> {
    pub fn zeros(shape: ModelShape) -> Self {
        let ModelShape { vocab, cond_dim, hidden, max_len } = shape;
        Self {
            token_embed: Array2::zeros((vocab, hidden)),
            pos_embed: Array2::zeros((max_len, hidden)),
            cond_proj: Array2::zeros((cond_dim, hidden)),
            task_embed: Array2::zeros((2, hidden)),
            w1: Array2::zeros((hidden, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, hidden)),
            b2: Array1::zeros(hidden),
            w_out: Array2::zeros((vocab, hidden)),
            b_out: Array1::zeros(vocab),
        }
    }

    /// Gaussian initialisation. The output layer and task vectors start at
    /// zero, so a fresh model predicts the uniform distribution.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut p = Self::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = shape.hidden as f64;
        let mut fill = |a: &mut Array2<T>, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            a.iter_mut().for_each(|x| *x = T::from_f64_lossy(dist.sample(&mut rng)));
        };
        fill(&mut p.token_embed, 0.5);
        fill(&mut p.pos_embed, 0.5);
        fill(&mut p.cond_proj, 1.0);
        fill(&mut p.w1, 1.0 / h.sqrt());
        fill(&mut p.w2, 1.0 / h.sqrt());
        p
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            vocab: self.token_embed.nrows(),
            cond_dim: self.cond_proj.nrows(),
            hidden: self.w1.nrows(),
            max_len: self.pos_embed.nrows(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn num_parameters(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub(crate) fn slices(&self) -> [&[T]; TENSOR_COUNT] {
        fn c<T>(s: Option<&[T]>) -> &[T] {
            s.expect("parameters are contiguous")
        }
        [
            c(self.token_embed.as_slice()),
            c(self.pos_embed.as_slice()),
            c(self.cond_proj.as_slice()),
            c(self.task_embed.as_slice()),
            c(self.w1.as_slice()),
            c(self.b1.as_slice()),
            c(self.w2.as_slice()),
            c(self.b2.as_slice()),
            c(self.w_out.as_slice()),
            c(self.b_out.as_slice()),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [T]; TENSOR_COUNT] {
        fn c<T>(s: Option<&mut [T]>) -> &mut [T] {
            s.expect("parameters are contiguous")
        }
        [
            c(self.token_embed.as_slice_mut()),
            c(self.pos_embed.as_slice_mut()),
            c(self.cond_proj.as_slice_mut()),
            c(self.task_embed.as_slice_mut()),
            c(self.w1.as_slice_mut()),
            c(self.b1.as_slice_mut()),
            c(self.w2.as_slice_mut()),
            c(self.b2.as_slice_mut()),
            c(self.w_out.as_slice_mut()),
            c(self.b_out.as_slice_mut()),
        ]
    }

    /// Grows the vocabulary to `new_vocab` tokens; new embedding rows and
    /// output rows are zero.
    pub fn extend_vocab(mut self, new_vocab: usize) -> Result<Self, ScorerError> {
        let old = self.vocab_size();
        if new_vocab < old {
            return Err(ScorerError::ShrinkNotAllowed { from: old, to: new_vocab });
        }
        if new_vocab == old {
            return Ok(self);
        }
        let h = self.shape().hidden;
        let grow = |a: &Array2<T>| {
            let mut g = Array2::zeros((new_vocab, h));
            g.slice_mut(s![..old, ..]).assign(a);
            g
        };
        self.token_embed = grow(&self.token_embed);
        self.w_out = grow(&self.w_out);
        let mut b = Array1::zeros(new_vocab);
        b.slice_mut(s![..old]).assign(&self.b_out);
        self.b_out = b;
        Ok(self)
    }

    fn check_prefix(&self, prefix: &[TokenId]) -> Result<(), ScorerError> {
        let max_len = self.pos_embed.nrows();
        if prefix.len() >= max_len {
            return Err(ScorerError::PrefixTooLong { len: prefix.len(), max_len });
        }
        let vocab = self.vocab_size();
        if let Some(&token) = prefix.iter().find(|&&t| t as usize >= vocab) {
            return Err(ScorerError::TokenOutOfRange { token, vocab });
        }
        Ok(())
    }

    fn check_condition(&self, condition: &[T]) -> Result<(), ScorerError> {
        let expected = self.cond_proj.nrows();
        if condition.len() != expected {
            return Err(ScorerError::ConditionDim { expected, found: condition.len() });
        }
        Ok(())
    }

    /// Writes the pooled state of `prefix` plus `base` into `out`.
    fn pool_into(&self, prefix: &[TokenId], base: ArrayView1<'_, T>, mut out: ndarray::ArrayViewMut1<'_, T>) {
        out.assign(&base);
        if prefix.is_empty() {
            return;
        }
        let inv = T::one() / T::from_usize(prefix.len()).expect("length fits in float");
        for (pos, &t) in prefix.iter().enumerate() {
            let tok = self.token_embed.row(t as usize);
            let p = self.pos_embed.row(pos);
            ndarray::Zip::from(&mut out)
                .and(&tok)
                .and(&p)
                .for_each(|o, &a, &b| *o = *o + (a + b) * inv);
        }
    }

    /// Hidden activations after both tanh layers for the given pre-layer states.
    fn hidden(&self, states: ArrayView2<'_, T>) -> (Array2<T>, Array2<T>) {
        let mut a1 = states.dot(&self.w1);
        a1 += &self.b1;
        a1.mapv_inplace(T::tanh);
        let mut a2 = a1.dot(&self.w2);
        a2 += &self.b2;
        a2.mapv_inplace(T::tanh);
        (a1, a2)
    }

    fn logits(&self, a2: ArrayView2<'_, T>) -> Array2<T> {
        let mut z = a2.dot(&self.w_out.t());
        z += &self.b_out;
        z
    }

    /// Pre-softmax scores for one prefix.
    pub fn logits_next(&self, condition: &[T], task: Task, prefix: &[TokenId]) -> Result<Vec<T>, ScorerError> {
        self.check_condition(condition)?;
        self.check_prefix(prefix)?;
        let states = self.states(condition, task, &[prefix]);
        let (_, a2) = self.hidden(states.view());
        Ok(self.logits(a2.view()).row(0).to_vec())
    }

    fn states(&self, condition: &[T], task: Task, prefixes: &[&[TokenId]]) -> Array2<T> {
        let cond = ArrayView1::from(condition);
        let mut base = cond.dot(&self.cond_proj);
        base += &self.task_embed.row(task.row());
        let mut states = Array2::zeros((prefixes.len(), self.shape().hidden));
        for (row, prefix) in states.axis_iter_mut(Axis(0)).zip(prefixes) {
            self.pool_into(prefix, base.view(), row);
        }
        states
    }

    /// Log-probabilities of the next token after `prefix`.
    pub fn score_next(&self, condition: &[T], task: Task, prefix: &[TokenId]) -> Result<Vec<T>, ScorerError> {
        Ok(self.score_batch(condition, task, &[prefix])?.row(0).to_vec())
    }

    /// Next-token log-probabilities for several prefixes sharing one condition;
    /// one row per prefix.
    pub fn score_batch(
        &self,
        condition: &[T],
        task: Task,
        prefixes: &[&[TokenId]],
    ) -> Result<Array2<T>, ScorerError> {
        self.check_condition(condition)?;
        for p in prefixes {
            self.check_prefix(p)?;
        }
        let states = self.states(condition, task, prefixes);
        let (_, a2) = self.hidden(states.view());
        let mut z = self.logits(a2.view());
        log_softmax_rows(&mut z);
        Ok(z)
    }

    /// Sum of next-token log-probabilities along `seq`.
    pub fn sequence_logprob(&self, condition: &[T], task: Task, seq: &[TokenId]) -> Result<T, ScorerError> {
        let prefixes: Vec<&[TokenId]> = (0..seq.len()).map(|i| &seq[..i]).collect();
        let lp = self.score_batch(condition, task, &prefixes)?;
        Ok(seq.iter().enumerate().map(|(i, &t)| lp[[i, t as usize]]).sum())
    }
}

pub(crate) fn log_softmax_rows<T: Scalar>(z: &mut Array2<T>) {
    for mut row in z.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        row.mapv_inplace(|x| x - lse);
    }
}
