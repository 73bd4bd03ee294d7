//! Lloyd's k-means with k-means++ seeding.
//!
//! Empty clusters are repaired by moving the point farthest from its centroid
//! out of the largest cluster. Each iteration records the within-cluster sum
//! of squares, which never increases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::{squared_distance, Scalar};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KMeansError {
    #[error("k must be in 1..={n}, got {k}")]
    InvalidK { k: usize, n: usize },
    #[error("max_iters must be at least 1")]
    InvalidIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<T> {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    /// Objective after every completed iteration.
    pub objective_trace: Vec<T>,
    pub converged: bool,
}

impl<T: Scalar> KMeans<T> {
    pub fn objective(&self) -> T {
        *self.objective_trace.last().expect("at least one iteration runs")
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Within-cluster sum of squared Euclidean distances.
pub fn within_cluster_ss<T: Scalar>(points: &[&[T]], assignments: &[usize], centroids: &[Vec<T>]) -> T {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

pub fn kmeans<T: Scalar>(
    points: &[&[T]],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KMeans<T>, KMeansError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(KMeansError::InvalidK { k, n });
    }
    if max_iters == 0 {
        return Err(KMeansError::InvalidIterations);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut converged = false;

    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = nearest(p, &centroids);
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        changed |= repair_empty(points, &mut assignments, &mut centroids);
        if !changed {
            converged = true;
            break;
        }
        update_centroids(points, &assignments, &mut centroids);
        trace.push(within_cluster_ss(points, &assignments, &centroids));
    }
    if trace.is_empty() {
        trace.push(within_cluster_ss(points, &assignments, &centroids));
    }
    Ok(KMeans {
        assignments,
        centroids,
        objective_trace: trace,
        converged,
    })
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn plus_plus_init<T: Scalar>(points: &[&[T]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]).as_f64())
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final partial sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            chosen.iter().position(|c| !c).expect("k <= n")
        };
        chosen[pick] = true;
        centroids.push(points[pick].to_vec());
        let c = centroids.last().expect("just pushed");
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, c).as_f64());
        }
    }
    centroids
}

/// Gives every empty cluster the farthest member of the currently largest
/// cluster. Returns whether anything moved.
fn repair_empty<T: Scalar>(points: &[&[T]], assignments: &mut [usize], centroids: &mut [Vec<T>]) -> bool {
    let k = centroids.len();
    let mut moved = false;
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return moved;
        };
        // first largest cluster wins ties
        let largest = (0..k).fold(0, |best, j| if sizes[j] > sizes[best] { j } else { best });
        let mut far = usize::MAX;
        let mut far_d = T::neg_infinity();
        for (i, p) in points.iter().enumerate() {
            if assignments[i] == largest {
                let d = squared_distance(p, &centroids[largest]);
                if d >= far_d {
                    far_d = d;
                    far = i;
                }
            }
        }
        assignments[far] = empty;
        centroids[empty] = points[far].to_vec();
        moved = true;
    }
}

fn update_centroids<T: Scalar>(points: &[&[T]], assignments: &[usize], centroids: &mut [Vec<T>]) {
    let dim = centroids[0].len();
    let mut sums = vec![vec![T::zero(); dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &x) in sums[a].iter_mut().zip(p.iter()) {
            *s = *s + x;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            let n = T::from_usize(n).expect("count fits in float");
            for (cx, sx) in c.iter_mut().zip(s) {
                *cx = sx / n;
            }
        }
    }
}
