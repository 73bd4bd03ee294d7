//! Teacher-forced loss and its exact gradient.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{log_softmax_rows, ScorerError, ScorerParams, Task};
use crate::identifier::TokenId;
use crate::scalar::Scalar;

/// One training sequence: a condition, the instruction, and the full target
/// identifier (EOS included).
#[derive(Debug, Clone, Copy)]
pub struct Example<'a, T> {
    pub condition: &'a [T],
    pub task: Task,
    pub target: &'a [TokenId],
}

struct Forward<T> {
    conds: Array2<T>,
    states: Array2<T>,
    a1: Array2<T>,
    a2: Array2<T>,
    log_probs: Array2<T>,
    /// (example index, position) of each row.
    rows: Vec<(usize, usize)>,
    labels: Vec<TokenId>,
}

impl<T: Scalar> ScorerParams<T> {
    fn forward_batch(&self, batch: &[Example<'_, T>]) -> Result<Forward<T>, ScorerError> {
        let shape = self.shape();
        let mut conds = Array2::zeros((batch.len(), shape.cond_dim));
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (b, ex) in batch.iter().enumerate() {
            self.check_condition(ex.condition)?;
            if let Some((_, body)) = ex.target.split_last() {
                self.check_prefix(body)?;
            }
            if let Some(&token) = ex.target.iter().find(|&&t| t as usize >= shape.vocab) {
                return Err(ScorerError::TokenOutOfRange { token, vocab: shape.vocab });
            }
            conds.row_mut(b).assign(&ndarray::ArrayView1::from(ex.condition));
            for (pos, &t) in ex.target.iter().enumerate() {
                rows.push((b, pos));
                labels.push(t);
            }
        }
        let mut base = conds.dot(&self.cond_proj);
        for (mut row, ex) in base.axis_iter_mut(Axis(0)).zip(batch) {
            row += &self.task_embed.row(ex.task.row());
        }
        let mut states = Array2::zeros((rows.len(), shape.hidden));
        for (out, &(b, pos)) in states.axis_iter_mut(Axis(0)).zip(&rows) {
            self.pool_into(&batch[b].target[..pos], base.row(b), out);
        }
        let (a1, a2) = self.hidden(states.view());
        let mut log_probs = self.logits(a2.view());
        log_softmax_rows(&mut log_probs);
        Ok(Forward { conds, states, a1, a2, log_probs, rows, labels })
    }

    /// Mean negative log-likelihood per target token.
    pub fn loss(&self, batch: &[Example<'_, T>]) -> Result<T, ScorerError> {
        let f = self.forward_batch(batch)?;
        Ok(mean_nll(&f))
    }

    /// Mean per-token NLL of `batch` and its gradient with respect to every
    /// parameter.
    pub fn loss_and_grad(&self, batch: &[Example<'_, T>]) -> Result<(T, ScorerParams<T>), ScorerError> {
        let f = self.forward_batch(batch)?;
        let loss = mean_nll(&f);
        let mut g = ScorerParams::zeros(self.shape());
        if f.rows.is_empty() {
            return Ok((loss, g));
        }
        let inv_r = T::one() / T::from_usize(f.rows.len()).expect("row count fits in float");

        // softmax minus one-hot, averaged over rows
        let mut dz = f.log_probs.mapv(|x| x.exp() * inv_r);
        for (r, &label) in f.labels.iter().enumerate() {
            dz[[r, label as usize]] = dz[[r, label as usize]] - inv_r;
        }
        g.b_out = dz.sum_axis(Axis(0));
        g.w_out = dz.t().dot(&f.a2);
        let da2 = dz.dot(&self.w_out);

        let du2 = tanh_backward(da2, f.a2.view());
        g.w2 = f.a1.t().dot(&du2);
        g.b2 = du2.sum_axis(Axis(0));
        let da1 = du2.dot(&self.w2.t());

        let du1 = tanh_backward(da1, f.a1.view());
        g.w1 = f.states.t().dot(&du1);
        g.b1 = du1.sum_axis(Axis(0));
        let ds = du1.dot(&self.w1.t());

        let mut dbase = Array2::<T>::zeros((batch.len(), self.shape().hidden));
        for (ds_row, &(b, pos)) in ds.axis_iter(Axis(0)).zip(&f.rows) {
            let mut acc = dbase.row_mut(b);
            acc += &ds_row;
            if pos == 0 {
                continue;
            }
            let scale = T::one() / T::from_usize(pos).expect("length fits in float");
            let scaled: Array1<T> = ds_row.mapv(|x| x * scale);
            for (i, &t) in batch[b].target[..pos].iter().enumerate() {
                let mut te = g.token_embed.row_mut(t as usize);
                te += &scaled;
                let mut pe = g.pos_embed.row_mut(i);
                pe += &scaled;
            }
        }
        g.cond_proj = f.conds.t().dot(&dbase);
        for (row, ex) in dbase.axis_iter(Axis(0)).zip(batch) {
            let mut te = g.task_embed.row_mut(ex.task.row());
            te += &row;
        }
        Ok((loss, g))
    }
}

fn mean_nll<T: Scalar>(f: &Forward<T>) -> T {
    if f.rows.is_empty() {
        return T::zero();
    }
    let total: T = f
        .labels
        .iter()
        .enumerate()
        .map(|(r, &t)| -f.log_probs[[r, t as usize]])
        .sum();
    total / T::from_usize(f.rows.len()).expect("row count fits in float")
}

fn tanh_backward<T: Scalar>(mut upstream: Array2<T>, activ: ArrayView2<'_, T>) -> Array2<T> {
    Zip::from(&mut upstream)
        .and(&activ)
        .for_each(|d, &a| *d = *d * (T::one() - a * a));
    upstream
}
