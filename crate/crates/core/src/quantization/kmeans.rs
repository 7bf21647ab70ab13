use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::fixed_point::{compute_linear_params, FixedPointParams};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

const MAX_ITERATIONS: usize = 100;
const TOLERANCE: f64 = 1e-6;
/// Independent k-means++ restarts; the lowest-SSE run wins.
const RESTARTS: u64 = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    /// Ascending.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub sse: f64,
}

fn nearest(x: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate().skip(1) {
        if (x - c).abs() < (x - centroids[best]).abs() {
            best = j;
        }
    }
    best
}

fn plus_plus_init(xs: &[f64], k: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let mut centroids = vec![xs[rng.random_range(0..xs.len())]];
    let mut d2: Vec<f64> = xs.iter().map(|x| (x - centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = xs.len() - 1;
        if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
        }
        // guard against float leftovers landing on an existing centroid
        if d2[pick] == 0.0 {
            pick = (0..xs.len()).max_by(|&a, &b| d2[a].total_cmp(&d2[b])).unwrap();
        }
        let c = xs[pick];
        centroids.push(c);
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min((x - c).powi(2));
        }
    }
    centroids
}

fn lloyd(xs: &[f64], mut centroids: Vec<f64>) -> (Vec<f64>, Vec<usize>, f64) {
    let k = centroids.len();
    let mut assign = vec![0usize; xs.len()];
    for _ in 0..MAX_ITERATIONS {
        for (a, &x) in assign.iter_mut().zip(xs) {
            *a = nearest(x, &centroids);
        }
        let mut sum = vec![0.0f64; k];
        let mut count = vec![0usize; k];
        for (&a, &x) in assign.iter().zip(xs) {
            sum[a] += x;
            count[a] += 1;
        }
        let mut next: Vec<f64> = (0..k)
            .map(|j| if count[j] > 0 { sum[j] / count[j] as f64 } else { centroids[j] })
            .collect();
        for j in 0..k {
            if count[j] == 0 {
                // reseed at the point farthest from its own centroid
                let far = (0..xs.len())
                    .max_by(|&a, &b| {
                        (xs[a] - next[assign[a]])
                            .abs()
                            .total_cmp(&(xs[b] - next[assign[b]]).abs())
                    })
                    .unwrap();
                next[j] = xs[far];
                assign[far] = j;
            }
        }
        let moved = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        centroids = next;
        if moved < TOLERANCE {
            break;
        }
    }
    centroids.sort_by(f64::total_cmp);
    for (a, &x) in assign.iter_mut().zip(xs) {
        *a = nearest(x, &centroids);
    }
    let sse = assign
        .iter()
        .zip(xs)
        .map(|(&a, &x)| (x - centroids[a]).powi(2))
        .sum();
    (centroids, assign, sse)
}

/// Means of the SSE-optimal split of sorted `xs` into `k` contiguous runs.
///
/// Divide-and-conquer over the split points, which are monotone in the run
/// end, so this costs `O(k n log n)` with prefix sums.
fn optimal_partition_means(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, &x) in sorted.iter().enumerate() {
        s1[i + 1] = s1[i] + x;
        s2[i + 1] = s2[i] + x * x;
    }
    let cost = |i: usize, j: usize| {
        let len = (j - i) as f64;
        let sum = s1[j] - s1[i];
        (s2[j] - s2[i] - sum * sum / len).max(0.0)
    };

    // prev[j]: best cost of the first j points in m-1 runs
    let mut prev: Vec<f64> = (0..=n).map(|j| if j == 0 { 0.0 } else { cost(0, j) }).collect();
    let mut splits = vec![vec![0usize; n + 1]; k];
    for (m, split) in splits.iter_mut().enumerate().skip(1) {
        let mut cur = vec![f64::INFINITY; n + 1];
        // run ends j in [m+1, n]; the last run starts at i in [m, j-1]
        let mut stack = vec![(m + 1, n, m, n - 1)];
        while let Some((jlo, jhi, ilo, ihi)) = stack.pop() {
            if jlo > jhi {
                continue;
            }
            let j = (jlo + jhi) / 2;
            let (mut best, mut arg) = (f64::INFINITY, ilo);
            for (i, &p) in prev.iter().enumerate().take(ihi.min(j - 1) + 1).skip(ilo) {
                let c = p + cost(i, j);
                if c < best {
                    best = c;
                    arg = i;
                }
            }
            cur[j] = best;
            split[j] = arg;
            if j > jlo {
                stack.push((jlo, j - 1, ilo, arg));
            }
            stack.push((j + 1, jhi, arg, ihi));
        }
        prev = cur;
    }
    let mut bounds = vec![n];
    let mut j = n;
    for m in (1..k).rev() {
        j = splits[m][j];
        bounds.push(j);
    }
    bounds.push(0);
    bounds.reverse();
    bounds
        .windows(2)
        .map(|w| (s1[w[1]] - s1[w[0]]) / (w[1] - w[0]) as f64)
        .collect()
}

/// One-dimensional k-means: Lloyd iterations from a fixed number of seeded
/// k-means++ initializations plus one initialization at the optimal
/// contiguous partition; the lowest SSE wins. `k` is reduced to the number
/// of distinct values when there are fewer.
pub fn kmeans_1d(values: &[f32], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::Config("cluster count must be at least 1".into()));
    }
    if values.is_empty() {
        return Err(Error::Config("cannot cluster an empty set".into()));
    }
    let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let k = k.min(distinct.len());

    let mut best: Option<KMeansResult> = None;
    for r in 0..=RESTARTS {
        let init = if r == RESTARTS {
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            optimal_partition_means(&sorted, k)
        } else {
            plus_plus_init(&xs, k, &mut rng_from_seed(derive_seed(seed, r)))
        };
        let (centroids, assignments, sse) = lloyd(&xs, init);
        if best.as_ref().is_none_or(|b| sse < b.sse) {
            best = Some(KMeansResult {
                centroids,
                assignments,
                sse,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Per-layer codebook: fixed-point centroid table plus one index per weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    /// Quantizer applied to the centroid set.
    pub params: FixedPointParams,
    /// Fixed-point code of each centroid.
    pub codes: Vec<i32>,
    /// Centroid index of each weight.
    pub indices: Vec<u32>,
}

impl Codebook {
    pub fn entries(&self) -> usize {
        self.codes.len()
    }

    /// `ceil(log2(entries))`; a single-entry table needs no index bits.
    pub fn index_bits(&self) -> u32 {
        let n = self.entries();
        if n <= 1 {
            0
        } else {
            usize::BITS - (n - 1).leading_zeros()
        }
    }

    pub fn centroids(&self) -> Vec<f32> {
        self.codes.iter().map(|&c| self.params.value(c)).collect()
    }

    /// Dequantized weights.
    pub fn values(&self) -> Vec<f32> {
        let table = self.centroids();
        self.indices.iter().map(|&i| table[i as usize]).collect()
    }

    pub fn validate(&self, weights: usize) -> Result<()> {
        self.params.validate()?;
        if self.codes.is_empty() {
            return Err(Error::Format("codebook has no entries".into()));
        }
        if self.indices.len() != weights {
            return Err(Error::Format(format!(
                "codebook indexes {} weights, layer has {weights}",
                self.indices.len()
            )));
        }
        if let Some(bad) = self.indices.iter().find(|&&i| i as usize >= self.codes.len()) {
            return Err(Error::Format(format!(
                "codebook index {bad} out of range for {} entries",
                self.codes.len()
            )));
        }
        let (lo, hi) = (self.params.min_code(), self.params.max_code());
        if self.codes.iter().any(|&c| (c as i64) < lo || (c as i64) > hi) {
            return Err(Error::Format("centroid code outside its bit width".into()));
        }
        Ok(())
    }
}

/// Clusters a layer's weights into at most `omega` centroids and quantizes
/// the centroids to `psi`-bit fixed point.
///
/// Exact zeros (pruned weights) are kept out of the clustering and pinned to
/// a dedicated zero entry, which counts towards `omega`.
pub fn quantize_layer_nonlinear(weights: &[f32], omega: usize, psi: u32, seed: u64) -> Result<Codebook> {
    if omega == 0 {
        return Err(Error::Config("omega must be at least 1".into()));
    }
    if weights.is_empty() {
        return Err(Error::Config("cannot quantize an empty layer".into()));
    }
    let nonzero: Vec<f32> = weights.iter().copied().filter(|&w| w != 0.0).collect();
    let has_zero = nonzero.len() < weights.len();
    let clusters = if has_zero { omega - 1 } else { omega };

    let mut raw: Vec<f64> = Vec::new();
    let mut assignments = Vec::new();
    if clusters > 0 && !nonzero.is_empty() {
        let km = kmeans_1d(&nonzero, clusters, seed)?;
        raw = km.centroids;
        assignments = km.assignments;
    }
    let offset = usize::from(has_zero);
    let mut table: Vec<f32> = Vec::with_capacity(raw.len() + offset);
    if has_zero {
        table.push(0.0);
    }
    table.extend(raw.iter().map(|&c| c as f32));
    let params = compute_linear_params(&table, psi)?;
    let codes = table.iter().map(|&c| params.code(c)).collect();

    let mut next = assignments.into_iter();
    let indices = weights
        .iter()
        .map(|&w| {
            if w == 0.0 {
                0
            } else {
                // omega == 1 with pruned zeros leaves no cluster for the rest
                next.next().map_or(0, |a| (a + offset) as u32)
            }
        })
        .collect();
    Ok(Codebook {
        params,
        codes,
        indices,
    })
}
