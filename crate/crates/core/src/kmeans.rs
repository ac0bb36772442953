//! K-means with K-means++ seeding over row-major f32 data.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 25,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub dim: usize,
    /// Row-major, `k * dim` values.
    pub centroids: Vec<f32>,
    /// Cluster of every input row.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

fn squared_distance_f64(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - y;
            d * d
        })
        .sum()
}

/// Clusters `data` (rows of `dim`) into at most `config.k` groups.
///
/// When the data holds no more than `k` distinct rows the distinct rows are
/// returned as centroids, in first-occurrence order.
pub fn kmeans(data: &[f32], dim: usize, config: &KMeansConfig) -> Result<Clustering> {
    if config.k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::InvalidParameter(format!(
            "{} values do not form rows of dimension {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if n == 0 {
        return Err(Error::InvalidParameter("no vectors to cluster".into()));
    }
    let rows: Vec<&[f32]> = data.chunks_exact(dim).collect();

    if let Some(clustering) = distinct_shortcut(&rows, dim, config.k) {
        return Ok(clustering);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = seed_plus_plus(&rows, config.k, &mut rng);
    let k = config.k;
    let mut assignments = vec![0usize; n];
    let mut dists = vec![0f64; n];
    let mut wcss = Vec::new();
    let mut iterations = 0;

    loop {
        let total = assign(&rows, &centroids, dim, &mut assignments, &mut dists);
        wcss.push(total);
        if iterations == config.max_iters {
            break;
        }
        iterations += 1;

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (row, &c) in rows.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row.iter()) {
                *s += f64::from(x);
            }
        }

        // Empty clusters take the points currently worst served.
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        let mut reseeded = Vec::with_capacity(empty.len());
        if !empty.is_empty() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
            for (&c, &p) in empty.iter().zip(&order) {
                reseeded.push((c, p));
            }
        }

        let mut shift = 0f64;
        for c in 0..k {
            let new: Vec<f64> = if let Some(&(_, p)) = reseeded.iter().find(|(e, _)| *e == c) {
                rows[p].iter().map(|&x| f64::from(x)).collect()
            } else if counts[c] == 0 {
                continue;
            } else {
                let inv = 1.0 / counts[c] as f64;
                sums[c * dim..(c + 1) * dim].iter().map(|s| s * inv).collect()
            };
            let old = &mut centroids[c * dim..(c + 1) * dim];
            let moved: f64 = old.iter().zip(&new).map(|(a, b)| (a - b) * (a - b)).sum();
            shift = shift.max(moved.sqrt());
            old.copy_from_slice(&new);
        }
        if shift < config.tol && reseeded.is_empty() {
            let total = assign(&rows, &centroids, dim, &mut assignments, &mut dists);
            wcss.push(total);
            break;
        }
    }

    Ok(Clustering {
        dim,
        centroids: centroids.iter().map(|&v| v as f32).collect(),
        assignments,
        wcss,
        iterations,
    })
}

fn distinct_shortcut(rows: &[&[f32]], dim: usize, k: usize) -> Option<Clustering> {
    let key = |row: &[f32]| -> Vec<u32> { row.iter().map(|v| (v + 0.0).to_bits()).collect() };
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut centroids = Vec::new();
    let mut assignments = Vec::with_capacity(rows.len());
    for row in rows {
        let next = index.len();
        let id = *index.entry(key(row)).or_insert(next);
        if id == next {
            if next == k {
                return None;
            }
            centroids.extend_from_slice(row);
        }
        assignments.push(id);
    }
    Some(Clustering {
        dim,
        centroids,
        assignments,
        wcss: vec![0.0],
        iterations: 0,
    })
}

fn seed_plus_plus(rows: &[&[f32]], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rows.len();
    let dim = rows[0].len();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(rows[first].iter().map(|&x| f64::from(x)));
    let mut nearest: Vec<f64> = rows
        .iter()
        .map(|r| squared_distance_f64(r, &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        // More than k distinct rows, so some row is still uncovered.
        debug_assert!(total > 0.0);
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        if nearest[pick] == 0.0 {
            pick = nearest
                .iter()
                .rposition(|&d| d > 0.0)
                .expect("an uncovered row exists");
        }
        let start = centroids.len();
        centroids.extend(rows[pick].iter().map(|&x| f64::from(x)));
        for (d, r) in nearest.iter_mut().zip(rows) {
            *d = d.min(squared_distance_f64(r, &centroids[start..]));
        }
    }
    centroids
}

fn assign(
    rows: &[&[f32]],
    centroids: &[f64],
    dim: usize,
    assignments: &mut [usize],
    dists: &mut [f64],
) -> f64 {
    let mut total = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let mut best = (0usize, f64::INFINITY);
        for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
            let d = squared_distance_f64(row, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        assignments[i] = best.0;
        dists[i] = best.1;
        total += best.1;
    }
    total
}
