//! Lloyd's k-means with greedy farthest-point seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub dim: usize,
    /// `k x dim`, row-major.
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

impl Clustering {
    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    pub fn k(&self) -> usize {
        self.centers.len() / self.dim.max(1)
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.chunks_exact(dim).enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Clusters `points` (`n x dim`, row-major) into `k` groups.
///
/// The first seed is drawn uniformly from `seed`; each further seed is the point
/// farthest from the seeds chosen so far (lowest index on ties). Lloyd updates run
/// until no center moves more than [`SHIFT_TOLERANCE`] or [`MAX_ITERATIONS`] is hit.
/// An empty cluster keeps its previous center.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> Result<Clustering> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: points.len(),
        });
    }
    let n = points.len() / dim;
    if k == 0 || n < k {
        return Err(Error::TooFewSamples {
            samples: n,
            clusters: k,
        });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonfiniteInput);
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut centers = point(first).to_vec();
    let mut min_dist: Vec<f64> = (0..n).map(|i| squared_distance(point(i), point(first))).collect();
    for _ in 1..k {
        let mut far = 0;
        for i in 1..n {
            if min_dist[i] > min_dist[far] {
                far = i;
            }
        }
        centers.extend_from_slice(point(far));
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min(squared_distance(point(i), point(far)));
        }
    }

    let mut assignments = vec![0; n];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (i, a) in assignments.iter_mut().enumerate() {
            *a = nearest(point(i), &centers, dim).0;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        let mut max_shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let updated: Vec<f64> = sums[c * dim..(c + 1) * dim].iter().map(|s| s * inv).collect();
            let old = &mut centers[c * dim..(c + 1) * dim];
            max_shift = max_shift.max(squared_distance(old, &updated).sqrt());
            old.copy_from_slice(&updated);
        }
        if max_shift < SHIFT_TOLERANCE {
            break;
        }
    }
    for (i, a) in assignments.iter_mut().enumerate() {
        *a = nearest(point(i), &centers, dim).0;
    }
    Ok(Clustering {
        dim,
        centers,
        assignments,
        iterations,
    })
}
