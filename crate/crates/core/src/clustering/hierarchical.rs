//! Agglomerative clustering over a condensed distance matrix with Lance–Williams
//! updates and a per-row nearest-neighbor cache.
//!
//! Every step merges the globally closest active pair; among equal distances the
//! pair with the lexicographically smallest `(i, j)` wins. The merged cluster keeps
//! index `i`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{canonicalize, ClusterLabels, Method};
use crate::error::{Error, Result};
use crate::feature_prep::PixelMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Ward,
    Single,
    Complete,
    Average,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ward" => Ok(Linkage::Ward),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(Error::InvalidConfig(format!("unknown linkage `{other}`"))),
        }
    }
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

/// Ward works on squared Euclidean distances; the other linkages on plain ones.
fn pairwise(matrix: &PixelMatrix, squared: bool) -> Condensed {
    let n = matrix.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        let a = matrix.row(i);
        for j in i + 1..n {
            let s: f64 = a
                .iter()
                .zip(matrix.row(j))
                .map(|(&x, &y)| {
                    let t = x as f64 - y as f64;
                    t * t
                })
                .sum();
            d.push(if squared { s } else { s.sqrt() });
        }
    }
    Condensed { n, d }
}

/// Cuts the dendrogram at `k` clusters. Rejects inputs above `n_max` rows; use
/// [`super::downsample_rows`] first.
pub fn hierarchical(
    matrix: &PixelMatrix,
    k: usize,
    linkage: Linkage,
    n_max: usize,
) -> Result<ClusterLabels> {
    let n = matrix.rows();
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::KExceedsPoints { k, n });
    }
    if n > n_max {
        return Err(Error::TooManyPoints { n, max: n_max });
    }

    let mut dist = pairwise(matrix, linkage == Linkage::Ward);
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    // Union-find style parent pointers: each row points at the cluster it merged into.
    let mut parent: Vec<usize> = (0..n).collect();

    // nn[i]: nearest active j > i (smallest j on ties).
    let mut nn = vec![usize::MAX; n];
    let mut nn_d = vec![f64::INFINITY; n];
    let rescan = |i: usize, dist: &Condensed, active: &[bool]| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (j, _) in active.iter().enumerate().skip(i + 1).filter(|(_, &a)| a) {
            let d = dist.get(i, j);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    };
    for i in 0..n {
        (nn[i], nn_d[i]) = rescan(i, &dist, &active);
    }

    let mut clusters = n;
    while clusters > k {
        let mut i = usize::MAX;
        for r in 0..n {
            if active[r] && nn[r] != usize::MAX && (i == usize::MAX || nn_d[r] < nn_d[i]) {
                i = r;
            }
        }
        let j = nn[i];
        let d_ij = nn_d[i];
        let (ni, nj) = (size[i] as f64, size[j] as f64);

        for m in 0..n {
            if !active[m] || m == i || m == j {
                continue;
            }
            let (d_im, d_jm) = (dist.get(i, m), dist.get(j, m));
            let nm = size[m] as f64;
            let updated = match linkage {
                Linkage::Ward => ((ni + nm) * d_im + (nj + nm) * d_jm - nm * d_ij) / (ni + nj + nm),
                Linkage::Single => d_im.min(d_jm),
                Linkage::Complete => d_im.max(d_jm),
                Linkage::Average => (ni * d_im + nj * d_jm) / (ni + nj),
            };
            dist.set(i, m, updated);
        }
        active[j] = false;
        size[i] += size[j];
        parent[j] = i;
        clusters -= 1;

        (nn[i], nn_d[i]) = rescan(i, &dist, &active);
        for r in 0..n {
            if !active[r] || r == i {
                continue;
            }
            if nn[r] == i || nn[r] == j {
                (nn[r], nn_d[r]) = rescan(r, &dist, &active);
            } else if r < i {
                let d = dist.get(r, i);
                if d < nn_d[r] || (d == nn_d[r] && i < nn[r]) {
                    (nn[r], nn_d[r]) = (i, d);
                }
            }
        }
    }

    let root = |mut r: usize| {
        while parent[r] != r {
            r = parent[r];
        }
        r
    };
    let roots: Vec<usize> = (0..n).map(root).collect();
    let (labels, _) = canonicalize(&roots, n);
    Ok(ClusterLabels {
        labels,
        k,
        method: Method::Hierarchical,
        inertia: None,
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f32]) -> PixelMatrix {
        PixelMatrix::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn duplicated_points_k2() {
        let m = line(&[1.0, 1.0]);
        let l = hierarchical(&m, 2, Linkage::Ward, 4096).unwrap();
        assert_eq!(l.labels, vec![0, 1]);
    }

    #[test]
    fn full_cut_is_all_singletons() {
        let m = line(&[0.0, 3.0, 1.0, 7.0, 1.0]);
        let l = hierarchical(&m, 5, Linkage::Ward, 4096).unwrap();
        assert_eq!(l.labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn k1_is_one_cluster() {
        let m = line(&[0.0, 3.0, 1.0, 7.0, 1.0]);
        for linkage in [
            Linkage::Ward,
            Linkage::Single,
            Linkage::Complete,
            Linkage::Average,
        ] {
            let l = hierarchical(&m, 1, linkage, 4096).unwrap();
            assert!(l.labels.iter().all(|&x| x == 0));
        }
    }

    #[test]
    fn ties_merge_lowest_pair_first() {
        // d(0,1) == d(1,2) == 1: (0,1) merges first, leaving {0,1} {2}.
        let m = line(&[0.0, 1.0, 2.0]);
        let l = hierarchical(&m, 2, Linkage::Single, 16).unwrap();
        assert_eq!(l.labels, vec![0, 0, 1]);
    }

    #[test]
    fn two_groups_on_a_line() {
        let m = line(&[0.0, 0.2, 9.0, 0.1, 9.3, 9.1]);
        for linkage in [
            Linkage::Ward,
            Linkage::Single,
            Linkage::Complete,
            Linkage::Average,
        ] {
            let l = hierarchical(&m, 2, linkage, 4096).unwrap();
            assert_eq!(l.labels, vec![0, 0, 1, 0, 1, 1], "{linkage:?}");
        }
    }

    #[test]
    fn limits_are_enforced() {
        let m = line(&[0.0, 1.0, 2.0]);
        assert!(matches!(
            hierarchical(&m, 4, Linkage::Ward, 10),
            Err(Error::KExceedsPoints { .. })
        ));
        assert!(matches!(
            hierarchical(&m, 2, Linkage::Ward, 2),
            Err(Error::TooManyPoints { n: 3, max: 2 })
        ));
    }

    /// Naive O(n³) Ward: recompute the merge cost from cluster centroids each step.
    fn naive_ward(points: &[f32], k: usize) -> Vec<usize> {
        let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
        while clusters.len() > k {
            let mut best = (f64::INFINITY, 0, 0);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let mean = |c: &Vec<usize>| {
                        c.iter().map(|&i| points[i] as f64).sum::<f64>() / c.len() as f64
                    };
                    let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
                    let cost =
                        na * nb / (na + nb) * (mean(&clusters[a]) - mean(&clusters[b])).powi(2);
                    if cost < best.0 - 1e-12 {
                        best = (cost, a, b);
                    }
                }
            }
            let merged = clusters.remove(best.2);
            clusters[best.1].extend(merged);
        }
        let mut labels = vec![0; points.len()];
        for (c, members) in clusters.iter().enumerate() {
            for &i in members {
                labels[i] = c;
            }
        }
        canonicalize(&labels, clusters.len()).0
    }

    #[test]
    fn ward_agrees_with_naive_centroid_form() {
        let pts: Vec<f32> = (0..40)
            .map(|i| ((i * 7919) % 101) as f32 * 0.37 + (i % 4) as f32 * 11.0)
            .collect();
        let m = line(&pts);
        for k in 1..8 {
            let fast = hierarchical(&m, k, Linkage::Ward, 4096).unwrap();
            assert_eq!(fast.labels, naive_ward(&pts, k), "k = {k}");
        }
    }
}
