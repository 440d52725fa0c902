use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FcgError;
use crate::encoding::{squared_distance, FeatureEncoder};
use crate::tabular::{SampleRecord, Subgroup};

pub const MAX_ITER: usize = 300;
pub const TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub iterations: usize,
    pub inertia: f64,
    pub converged: bool,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds. Stops once the summed squared
/// centroid shift is at most `tol` times the mean per-dimension variance.
/// `k` is lowered to the number of distinct points when needed.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> KMeans {
    assert!(!points.is_empty() && k >= 1, "kmeans needs points and k >= 1");
    let distinct = distinct_count(points);
    let k = if distinct < k {
        log::warn!("only {distinct} distinct points; using {distinct} clusters instead of {k}");
        distinct
    } else {
        k
    };
    let dim = points[0].len();
    let n = points.len() as f64;
    let mean_var = if dim == 0 {
        0.0
    } else {
        (0..dim)
            .map(|j| {
                let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
                points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n
            })
            .sum::<f64>()
            / dim as f64
    };
    let tol = tol * mean_var;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![0; points.len()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            *l = nearest(p, &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift += squared_distance(&next, &centroids[j]);
            centroids[j] = next;
        }
        if shift <= tol {
            converged = true;
            break;
        }
    }
    let mut inertia = 0.0;
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        let (j, d) = nearest(p, &centroids);
        *l = j;
        inertia += d;
    }
    KMeans {
        centroids,
        labels,
        iterations,
        inertia,
        converged,
    }
}

/// Candidates of one subgroup, ascending by id, with their encodings and the
/// cluster each belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupPool {
    pub subgroup: Subgroup,
    pub ids: Vec<u64>,
    pub vectors: Vec<Vec<f64>>,
    pub clusters: Vec<usize>,
    /// Members per cluster over the whole subgroup.
    pub cluster_sizes: Vec<usize>,
}

impl SubgroupPool {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Pools for the four subgroups in g1..g4 order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub cells: Vec<SubgroupPool>,
}

impl CandidatePool {
    pub fn get(&self, g: Subgroup) -> Option<&SubgroupPool> {
        self.cells.iter().find(|c| c.subgroup == g)
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(SubgroupPool::len).sum()
    }
}

/// Cluster one subgroup into `n` groups and keep the `m` records nearest each
/// centroid. Every non-empty cluster keeps at least one of its own members.
pub fn cluster_subgroup(records: &[SampleRecord], n: usize, m: usize, seed: u64) -> Result<SubgroupPool, FcgError> {
    let subgroup = records
        .first()
        .map(SampleRecord::subgroup)
        .ok_or(FcgError::SubgroupTooSmall {
            subgroup: None,
            size: 0,
            n,
        })?;
    if records.iter().any(|r| r.subgroup() != subgroup) {
        return Err(FcgError::MixedSubgroup);
    }
    if records.len() < n || n == 0 || m == 0 {
        return Err(FcgError::SubgroupTooSmall {
            subgroup: Some(subgroup),
            size: records.len(),
            n,
        });
    }
    let mut sorted: Vec<&SampleRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.id);
    let owned: Vec<SampleRecord> = sorted.iter().map(|r| (*r).clone()).collect();
    let encoder = FeatureEncoder::fit(&owned);
    let points: Vec<Vec<f64>> = owned.iter().map(|r| encoder.encode(&r.features)).collect();

    let km = kmeans(&points, n, seed, MAX_ITER, TOL);
    let k = km.centroids.len();
    let mut cluster_sizes = vec![0; k];
    for &l in &km.labels {
        cluster_sizes[l] += 1;
    }

    let mut chosen = vec![false; points.len()];
    for (j, c) in km.centroids.iter().enumerate() {
        let dist: Vec<f64> = points.iter().map(|p| squared_distance(p, c)).collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        // ties fall to the lower id because points are id-sorted
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        let mut picks: Vec<usize> = order.iter().copied().take(m).collect();
        if cluster_sizes[j] > 0 && !picks.iter().any(|&i| km.labels[i] == j) {
            let own = order.iter().copied().find(|&i| km.labels[i] == j).unwrap();
            *picks.last_mut().unwrap() = own;
        }
        for i in picks {
            chosen[i] = true;
        }
    }

    let keep: Vec<usize> = (0..points.len()).filter(|&i| chosen[i]).collect();
    Ok(SubgroupPool {
        subgroup,
        ids: keep.iter().map(|&i| owned[i].id).collect(),
        vectors: keep.iter().map(|&i| points[i].clone()).collect(),
        clusters: keep.iter().map(|&i| km.labels[i]).collect(),
        cluster_sizes,
    })
}
