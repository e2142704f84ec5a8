use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{canonicalize, nearest, sq_dist, Centroids, ClusterLabels, Method};
use crate::error::{Error, Result};
use crate::feature_prep::PixelMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: ClusterLabels,
    /// Centroids indexed by the (canonical) labels.
    pub centroids: Centroids,
    /// Inertia after every assignment step, in order.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm from a k-means++ start. Labels are renumbered by first
/// appearance so the output is a pure function of `(matrix, k, seed)`.
pub fn kmeans(
    matrix: &PixelMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterLabels> {
    kmeans_fit(
        matrix,
        KMeansParams {
            k,
            seed,
            max_iter,
            tol,
        },
    )
    .map(|fit| fit.labels)
}

pub fn kmeans_fit(matrix: &PixelMatrix, params: KMeansParams) -> Result<KMeansFit> {
    let (n, dim, k) = (matrix.rows(), matrix.cols(), params.k);
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::KExceedsPoints { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_init(matrix, k, &mut rng);
    let mut history = Vec::new();
    let mut labels;
    let mut iterations = 0;

    loop {
        let (assigned, dists) = assign(matrix, &centroids);
        labels = assigned;
        let mut dists = dists;
        fill_empty_clusters(matrix, &mut centroids, &mut labels, &mut dists);
        history.push(dists.iter().sum::<f64>());

        if iterations == params.max_iter {
            break;
        }
        iterations += 1;
        let updated = means(matrix, &labels, &centroids);
        let shift = (0..k)
            .map(|j| sq_dist_f64(centroids.row(j), updated.row(j)).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < params.tol {
            // One final assignment against the settled centroids.
            let (assigned, mut dists) = assign(matrix, &centroids);
            labels = assigned;
            fill_empty_clusters(matrix, &mut centroids, &mut labels, &mut dists);
            history.push(dists.iter().sum::<f64>());
            break;
        }
    }

    let (canonical, map) = canonicalize(&labels, k);
    debug_assert!(map.iter().all(|&m| m != usize::MAX));
    let mut reordered = vec![0f64; k * dim];
    for (old, &new) in map.iter().enumerate() {
        reordered[new * dim..(new + 1) * dim].copy_from_slice(centroids.row(old));
    }
    let inertia = *history.last().expect("at least one assignment");
    Ok(KMeansFit {
        labels: ClusterLabels {
            labels: canonical,
            k,
            method: Method::Kmeans,
            inertia: Some(inertia),
            seed: Some(params.seed),
        },
        centroids: Centroids::new(k, dim, reordered)?,
        inertia_history: history,
        iterations,
    })
}

fn sq_dist_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn row_f64(row: &[f32]) -> impl Iterator<Item = f64> + '_ {
    row.iter().map(|&v| v as f64)
}

/// D²-weighted seeding. When every remaining point coincides with a chosen
/// center, the lowest unchosen row index is taken instead.
fn plus_plus_init(matrix: &PixelMatrix, k: usize, rng: &mut ChaCha8Rng) -> Centroids {
    let n = matrix.rows();
    let dim = matrix.cols();
    let mut chosen = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k * dim);

    let first = rng.random_range(0..n);
    chosen.push(first);
    values.extend(row_f64(matrix.row(first)));
    let mut d2: Vec<f64> = matrix
        .values()
        .par_chunks(dim)
        .map(|row| sq_dist(row, &values[..dim]))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just past the final sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        let start = values.len();
        values.extend(row_f64(matrix.row(next)));
        let center = &values[start..];
        d2.par_iter_mut()
            .zip(matrix.values().par_chunks(dim))
            .for_each(|(d, row)| *d = d.min(sq_dist(row, center)));
    }
    Centroids::new(k, dim, values).expect("k x dim by construction")
}

fn assign(matrix: &PixelMatrix, centroids: &Centroids) -> (Vec<usize>, Vec<f64>) {
    matrix
        .values()
        .par_chunks(matrix.cols())
        .map(|row| nearest(row, centroids))
        .unzip()
}

/// Gives each empty cluster the row farthest from its current centroid (taken
/// from a cluster with more than one member; lowest index on ties).
fn fill_empty_clusters(
    matrix: &PixelMatrix,
    centroids: &mut Centroids,
    labels: &mut [usize],
    dists: &mut [f64],
) {
    let k = centroids.k;
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] > 1 && donor.is_none_or(|d| dists[i] > dists[d]) {
                donor = Some(i);
            }
        }
        let i = donor.expect("k <= n guarantees a cluster with spare members");
        sizes[labels[i]] -= 1;
        sizes[j] = 1;
        labels[i] = j;
        dists[i] = 0.0;
        let dim = centroids.dim;
        for (c, v) in centroids.values[j * dim..(j + 1) * dim]
            .iter_mut()
            .zip(matrix.row(i))
        {
            *c = *v as f64;
        }
    }
}

/// Cluster means in row order; clusters without members keep their old centroid.
fn means(matrix: &PixelMatrix, labels: &[usize], prev: &Centroids) -> Centroids {
    let (k, dim) = (prev.k, prev.dim);
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (row, &l) in matrix.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    for j in 0..k {
        let dst = &mut sums[j * dim..(j + 1) * dim];
        if counts[j] == 0 {
            dst.copy_from_slice(prev.row(j));
        } else {
            dst.iter_mut().for_each(|s| *s /= counts[j] as f64);
        }
    }
    Centroids::new(k, dim, sums).expect("k x dim by construction")
}
