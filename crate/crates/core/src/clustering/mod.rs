//! Pixel clustering: seeded k-means and agglomerative hierarchical clustering,
//! plus the subsample-then-extend path used when the grid is too large for
//! an `O(N²)` dendrogram.

mod hierarchical;
mod kmeans;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_prep::PixelMatrix;

pub use hierarchical::{hierarchical, Linkage};
pub use kmeans::{kmeans, kmeans_fit, KMeansFit, KMeansParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kmeans,
    Hierarchical,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Kmeans, Method::Hierarchical];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::Hierarchical => "hierarchical",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" | "k-means" => Ok(Method::Kmeans),
            "hierarchical" | "ward" => Ok(Method::Hierarchical),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// One label per matrix row, each `< k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabels {
    pub labels: Vec<usize>,
    pub k: usize,
    pub method: Method,
    /// Sum of squared distances to the assigned centroid (k-means only).
    pub inertia: Option<f64>,
    pub seed: Option<u64>,
}

impl ClusterLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Members per cluster id.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn n_distinct(&self) -> usize {
        self.sizes().iter().filter(|&&s| s > 0).count()
    }
}

/// Renumbers labels by first appearance in row order. Returns the new labels and
/// `old -> new` mapping (`usize::MAX` for ids that never appear).
pub(crate) fn canonicalize(labels: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    let relabeled = labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect();
    (relabeled, map)
}

/// `k x dim` centroid table.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub k: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Centroids {
    pub fn new(k: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || values.len() != k * dim {
            return Err(Error::InvalidConfig(format!(
                "centroid table of {} values is not {k}x{dim}",
                values.len()
            )));
        }
        Ok(Self { k, dim, values })
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lower index.
#[inline]
pub(crate) fn nearest(row: &[f32], centroids: &Centroids) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..centroids.k {
        let d = sq_dist(row, centroids.row(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Labels every row with its nearest centroid (Euclidean, ties to the smallest index).
pub fn assign_nearest(matrix: &PixelMatrix, centroids: &Centroids) -> Result<Vec<usize>> {
    if centroids.dim != matrix.cols() {
        return Err(Error::DimMismatch(format!(
            "centroids have {} dims, matrix has {}",
            centroids.dim,
            matrix.cols()
        )));
    }
    Ok(matrix
        .values()
        .par_chunks(matrix.cols())
        .map(|row| nearest(row, centroids).0)
        .collect())
}

/// Per-cluster means, summed in row order.
pub fn cluster_means(matrix: &PixelMatrix, labels: &[usize], k: usize) -> Result<Centroids> {
    let dim = matrix.cols();
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (row, &l) in matrix.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCluster(empty));
    }
    for (j, &count) in counts.iter().enumerate() {
        sums[j * dim..(j + 1) * dim]
            .iter_mut()
            .for_each(|s| *s /= count as f64);
    }
    Centroids::new(k, dim, sums)
}

/// Strided spatial subsample to at most `n_max` rows. Uses the smallest uniform
/// stride `s` with `ceil(H/s) * ceil(W/s) <= n_max`; returns the subsample and the
/// original row index of every kept row.
pub fn downsample_rows(matrix: &PixelMatrix, n_max: usize) -> (PixelMatrix, Vec<usize>) {
    let n_max = n_max.max(1);
    let (h, w) = (matrix.grid_h(), matrix.grid_w());
    if matrix.rows() <= n_max {
        return (matrix.clone(), (0..matrix.rows()).collect());
    }
    let stride = subsample_stride(h, w, n_max);
    let (sh, sw) = (h.div_ceil(stride), w.div_ceil(stride));
    let index: Vec<usize> = (0..sh)
        .flat_map(|y| (0..sw).map(move |x| y * stride * w + x * stride))
        .collect();
    let sub = matrix.select_rows(&index).with_grid(sh, sw);
    (sub, index)
}

/// Smallest stride `s >= 1` with `ceil(h/s) * ceil(w/s) <= n_max`.
pub(crate) fn subsample_stride(h: usize, w: usize, n_max: usize) -> usize {
    let kept = |s: usize| h.div_ceil(s) * w.div_ceil(s);
    let mut stride = 1;
    while kept(stride) > n_max {
        stride += 1;
    }
    stride
}

/// Knobs shared by [`cluster`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOptions {
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub linkage: Linkage,
    pub n_hier_max: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 300,
            tol: 1e-4,
            linkage: Linkage::Ward,
            n_hier_max: 4096,
        }
    }
}

/// Clusters every row into `k` groups. Hierarchical clustering above
/// `n_hier_max` rows runs on a strided subsample and extends to the full grid
/// through the subsample cluster means.
pub fn cluster(
    matrix: &PixelMatrix,
    k: usize,
    method: Method,
    opts: &ClusterOptions,
) -> Result<ClusterLabels> {
    match method {
        Method::Kmeans => kmeans(matrix, k, opts.seed, opts.max_iter, opts.tol),
        Method::Hierarchical if matrix.rows() <= opts.n_hier_max => {
            hierarchical(matrix, k, opts.linkage, opts.n_hier_max)
        }
        Method::Hierarchical => {
            if k > matrix.rows() {
                return Err(Error::KExceedsPoints {
                    k,
                    n: matrix.rows(),
                });
            }
            let (sub, _) = downsample_rows(matrix, opts.n_hier_max);
            let sub_labels = hierarchical(&sub, k, opts.linkage, opts.n_hier_max)?;
            let centroids = cluster_means(&sub, &sub_labels.labels, k)?;
            let labels = assign_nearest(matrix, &centroids)?;
            let (labels, map) = canonicalize(&labels, k);
            if let Some(missing) = map.iter().position(|&m| m == usize::MAX) {
                return Err(Error::EmptyCluster(missing));
            }
            Ok(ClusterLabels {
                labels,
                k,
                method,
                inertia: None,
                seed: None,
            })
        }
    }
}
