//! Silhouette scores and the silhouette rate: the share of points whose
//! silhouette is strictly above a threshold.

use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::ClusterLabels;
use crate::error::{Error, Result};
use crate::feature_prep::PixelMatrix;

/// Default silhouette threshold.
pub const DEFAULT_T_SIL: f64 = 0.3;

/// Default cap on points used for silhouette evaluation.
pub const DEFAULT_N_MAX_SILHOUETTE: usize = 8192;

#[derive(Debug, Clone, Serialize)]
pub struct SilhouetteReport {
    /// Rows of the input matrix that were scored, ascending.
    pub rows: Vec<usize>,
    pub scores: Vec<f64>,
    pub t_sil: f64,
    pub sr: f64,
}

#[inline]
fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Per-point silhouette `(b - a) / max(a, b)` with Euclidean distances.
/// Members of singleton clusters score 0.
pub fn silhouette_scores(matrix: &PixelMatrix, labels: &ClusterLabels) -> Result<Vec<f64>> {
    if labels.len() != matrix.rows() {
        return Err(Error::DimMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            matrix.rows()
        )));
    }
    silhouette_of(matrix, &labels.labels, labels.k)
}

fn silhouette_of(matrix: &PixelMatrix, labels: &[usize], k: usize) -> Result<Vec<f64>> {
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::SingleCluster);
    }

    let n = labels.len();
    Ok((0..n)
        .into_par_iter()
        .map_init(
            || vec![0f64; k],
            |sums, i| {
                let own = labels[i];
                if sizes[own] == 1 {
                    return 0.0;
                }
                sums.iter_mut().for_each(|s| *s = 0.0);
                let xi = matrix.row(i);
                for j in 0..n {
                    if j != i {
                        sums[labels[j]] += euclidean(xi, matrix.row(j));
                    }
                }
                let a = sums[own] / (sizes[own] - 1) as f64;
                let b = (0..k)
                    .filter(|&c| c != own && sizes[c] > 0)
                    .map(|c| sums[c] / sizes[c] as f64)
                    .fold(f64::INFINITY, f64::min);
                let denom = a.max(b);
                if denom > 0.0 {
                    (b - a) / denom
                } else {
                    0.0
                }
            },
        )
        .collect())
}

/// Fraction of scores strictly greater than `t_sil`.
pub fn silhouette_rate(scores: &[f64], t_sil: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::DegenerateInput("no silhouette scores".into()));
    }
    let above = scores.iter().filter(|&&s| s > t_sil).count();
    Ok(above as f64 / scores.len() as f64)
}

/// Deterministic per-cluster stratified subsample of at most `n_max` rows.
/// Each cluster gets `floor(size * n_max / n)` rows (at least one), taken at a fixed
/// stride through its members in row order.
pub fn stratified_rows(labels: &[usize], k: usize, n_max: usize) -> Vec<usize> {
    let n = labels.len();
    if n <= n_max {
        return (0..n).collect();
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut quota: Vec<usize> = members
        .iter()
        .map(|m| {
            if m.is_empty() {
                0
            } else {
                (m.len() * n_max / n).max(1)
            }
        })
        .collect();
    // The minimum of one per cluster can overshoot the cap; trim the largest quotas.
    while quota.iter().sum::<usize>() > n_max {
        let largest = (0..k)
            .max_by_key(|&c| (quota[c], std::cmp::Reverse(c)))
            .unwrap();
        if quota[largest] <= 1 {
            break;
        }
        quota[largest] -= 1;
    }
    let mut rows: Vec<usize> = members
        .iter()
        .zip(&quota)
        .flat_map(|(m, &q)| (0..q).map(move |t| m[t * m.len() / q]))
        .collect();
    rows.sort_unstable();
    rows
}

/// Silhouette scores and rate for a clustering, on a stratified subsample when
/// the matrix has more than `n_max` rows.
pub fn sr_for_clustering(
    matrix: &PixelMatrix,
    labels: &ClusterLabels,
    t_sil: f64,
    n_max: usize,
) -> Result<SilhouetteReport> {
    if labels.len() != matrix.rows() {
        return Err(Error::DimMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            matrix.rows()
        )));
    }
    let rows = stratified_rows(&labels.labels, labels.k, n_max.max(1));
    let scores = if rows.len() == matrix.rows() {
        silhouette_of(matrix, &labels.labels, labels.k)?
    } else {
        let sub = matrix.select_rows(&rows);
        let sub_labels: Vec<usize> = rows.iter().map(|&i| labels.labels[i]).collect();
        silhouette_of(&sub, &sub_labels, labels.k)?
    };
    let sr = silhouette_rate(&scores, t_sil)?;
    Ok(SilhouetteReport {
        rows,
        scores,
        t_sil,
        sr,
    })
}
