//! Spherical mini-batch k-means: k-means++ seeding and one EM step.

use rand::Rng as _;
use rayon::prelude::*;

use crate::seed::Rng;
use crate::{Error, Result};

pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Nearest centroid by squared Euclidean distance; ties go to the lowest
/// index.
pub fn nearest(centroids: &[f32], dim: usize, x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Greedy k-means++ seeding. The first centroid is uniform over the
/// points. Each next one is the best of `2 + ⌊ln k⌋` candidates drawn
/// proportionally to the squared distance to the closest chosen centroid,
/// where best means the lowest resulting potential (ties to the earlier
/// draw).
pub fn kmeanspp_init(points: &[f32], dim: usize, k: usize, rng: &mut Rng) -> Result<Vec<f32>> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: points.len(),
        });
    }
    let n = points.len() / dim;
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "k-means++ needs 1 <= k <= number of points, got k={k} for {n} points"
        )));
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(point(first));

    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut best: Option<(usize, f64, Vec<f64>)> = None;
            for _ in 0..trials {
                let cand = draw_weighted(&closest, total, rng);
                let updated: Vec<f64> = closest
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| d.min(sq_dist(point(i), point(cand))))
                    .collect();
                let potential: f64 = updated.iter().sum();
                if best.as_ref().is_none_or(|b| potential < b.1) {
                    best = Some((cand, potential, updated));
                }
            }
            let (cand, _, updated) = best.expect("at least one trial");
            closest = updated;
            cand
        } else {
            // Every remaining point coincides with a centroid.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            let pick = free[rng.random_range(0..free.len())];
            closest[pick] = 0.0;
            pick
        };
        chosen[pick] = true;
        centroids.extend_from_slice(point(pick));
    }
    Ok(centroids)
}

/// Index drawn with probability `weights[i] / total`; zero weights are
/// never drawn.
fn draw_weighted(weights: &[f64], total: f64, rng: &mut Rng) -> usize {
    let mut target = rng.random::<f64>() * total;
    let mut pick = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            pick = Some(i);
            if target < w {
                break;
            }
            target -= w;
        }
    }
    pick.expect("positive total weight")
}

/// Centroids plus the number of points each has absorbed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansState {
    pub dim: usize,
    pub centroids: Vec<f32>,
    pub counts: Vec<u64>,
}

impl KMeansState {
    pub fn new(centroids: Vec<f32>, dim: usize) -> Self {
        let k = centroids.len() / dim;
        Self {
            dim,
            centroids,
            counts: vec![0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    /// E-step: nearest centroid for every point of the batch.
    pub fn assign(&self, batch: &[f32]) -> Vec<u32> {
        batch
            .par_chunks_exact(self.dim)
            .map(|x| nearest(&self.centroids, self.dim, x).0 as u32)
            .collect()
    }

    /// M-step on (possibly rebalanced) assignments.
    ///
    /// Clusters left empty are re-seeded to the batch points farthest from
    /// their assigned centroids, which are then reassigned. Points at zero
    /// distance are never used, so a batch sitting exactly on the centroids
    /// leaves them untouched. Every other centroid becomes the count-weighted
    /// running mean of its history and the new members, projected back onto
    /// the unit sphere. Returns the re-seeded cluster indices.
    pub fn update(&mut self, batch: &[f32], assignments: &mut [u32]) -> Vec<usize> {
        let dim = self.dim;
        let k = self.k();
        let mut members = vec![0usize; k];
        for &a in assignments.iter() {
            members[a as usize] += 1;
        }

        let mut reseeded = Vec::new();
        if members.contains(&0) {
            let mut far: Vec<(usize, f64)> = batch
                .chunks_exact(dim)
                .zip(assignments.iter())
                .enumerate()
                .map(|(i, (x, &a))| (i, sq_dist(x, self.centroid(a as usize))))
                .filter(|&(_, d)| d > 0.0)
                .collect();
            far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut candidates = far.into_iter();
            for j in 0..k {
                if members[j] != 0 {
                    continue;
                }
                let Some((i, _)) = candidates
                    .by_ref()
                    .find(|&(i, _)| members[assignments[i] as usize] > 1)
                else {
                    break;
                };
                members[assignments[i] as usize] -= 1;
                members[j] = 1;
                assignments[i] = j as u32;
                reseeded.push(j);
            }
        }

        let mut sums = vec![0f64; k * dim];
        for (x, &a) in batch.chunks_exact(dim).zip(assignments.iter()) {
            let s = &mut sums[a as usize * dim..(a as usize + 1) * dim];
            for (s, &v) in s.iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        for j in 0..k {
            let b = members[j] as u64;
            if b == 0 {
                continue;
            }
            let prior = if reseeded.contains(&j) { 0 } else { self.counts[j] };
            let c = &mut self.centroids[j * dim..(j + 1) * dim];
            let s = &sums[j * dim..(j + 1) * dim];
            let blended: Vec<f64> = c
                .iter()
                .zip(s)
                .map(|(&c, &s)| (prior as f64 * c as f64 + s) / (prior + b) as f64)
                .collect();
            let norm = blended.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                for (c, v) in c.iter_mut().zip(&blended) {
                    *c = (v / norm) as f32;
                }
            }
            self.counts[j] = prior + b;
        }
        reseeded
    }
}

/// One unbalanced EM step: assignment to the nearest centroid followed by
/// the centroid update. Returns the final batch assignments.
pub fn kmeans_step(state: &mut KMeansState, batch: &[f32]) -> Vec<u32> {
    let mut assignments = state.assign(batch);
    state.update(batch, &mut assignments);
    assignments
}
