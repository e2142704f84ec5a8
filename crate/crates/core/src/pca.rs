//! Principal components of pixel features and the eigenvalue-ratio rule for K.
//!
//! The covariance is `C x C` (never the `N x N` Gram matrix) and is accumulated in
//! fixed-size row blocks that are summed in block order, so the result does not
//! depend on the number of worker threads.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feature_prep::PixelMatrix;

/// Default eigenvalue-ratio threshold.
pub const DEFAULT_T_EIG: f64 = 0.3;

const COV_BLOCK_ROWS: usize = 1024;

#[derive(Debug, Clone, Serialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Column-major `C x C`; column `j` pairs with `eigenvalues[j]`.
    #[serde(skip)]
    pub eigenvectors: DMatrix<f64>,
    pub t_eig: f64,
    pub k_selected: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `λ_j / λ_0` for every component (all zeros when `λ_0 == 0`).
    pub fn ratios(&self) -> Vec<f64> {
        let top = self.eigenvalues[0];
        self.eigenvalues
            .iter()
            .map(|&l| if top > 0.0 { l / top } else { 0.0 })
            .collect()
    }
}

/// Column means and the sample covariance `Xcᵀ Xc / (N - 1)`.
pub fn sample_covariance(matrix: &PixelMatrix) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (n, c) = (matrix.rows(), matrix.cols());
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "PCA needs at least two rows, got {n}"
        )));
    }
    let values = matrix.values();
    let block_len = COV_BLOCK_ROWS * c;

    let partial_means: Vec<Vec<f64>> = values
        .par_chunks(block_len)
        .map(|block| {
            let mut acc = vec![0f64; c];
            for row in block.chunks_exact(c) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v as f64;
                }
            }
            acc
        })
        .collect();
    let mut mean = vec![0f64; c];
    for part in &partial_means {
        for (m, p) in mean.iter_mut().zip(part) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    // Upper triangle, row-major packed into a full c*c buffer.
    let partial_cov: Vec<Vec<f64>> = values
        .par_chunks(block_len)
        .map(|block| {
            let mut acc = vec![0f64; c * c];
            let mut centered = vec![0f64; c];
            for row in block.chunks_exact(c) {
                for ((dst, &v), m) in centered.iter_mut().zip(row).zip(&mean) {
                    *dst = v as f64 - m;
                }
                for i in 0..c {
                    let xi = centered[i];
                    let dst = &mut acc[i * c..(i + 1) * c];
                    for j in i..c {
                        dst[j] += xi * centered[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(c, c);
    for part in &partial_cov {
        for i in 0..c {
            for j in i..c {
                cov[(i, j)] += part[i * c + j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..c {
        for j in i..c {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

/// Eigendecomposition of the pixel-feature covariance, with `k_selected` chosen by
/// [`select_k`] at `t_eig`.
pub fn fit_pca(matrix: &PixelMatrix, t_eig: f64) -> Result<PcaModel> {
    let (mean, cov) = sample_covariance(matrix)?;
    let c = mean.len();
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut eigenvalues = Vec::with_capacity(c);
    let mut eigenvectors = DMatrix::<f64>::zeros(c, c);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[src].max(0.0));
        let mut col = eig.eigenvectors.column(src).into_owned();
        // Sign convention: the largest-magnitude entry is positive (first on ties).
        let mut pivot = 0;
        for i in 1..c {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }

    let k_selected = select_k(&eigenvalues, t_eig);
    Ok(PcaModel {
        mean,
        eigenvalues,
        eigenvectors,
        t_eig,
        k_selected,
    })
}

/// Number of eigenvalues whose ratio to the largest strictly exceeds `t_eig`.
/// Returns 1 for an all-zero (or empty) spectrum.
pub fn select_k(eigenvalues: &[f64], t_eig: f64) -> usize {
    let Some(&top) = eigenvalues.first() else {
        return 1;
    };
    if top <= 0.0 {
        return 1;
    }
    eigenvalues
        .iter()
        .filter(|&&l| l / top > t_eig)
        .count()
        .max(1)
}

/// The first `k` principal-component maps, `N x k`, on the source grid.
#[derive(Debug, Clone)]
pub struct PcMaps {
    scores: PixelMatrix,
}

impl PcMaps {
    pub fn k(&self) -> usize {
        self.scores.cols()
    }

    pub fn grid_h(&self) -> usize {
        self.scores.grid_h()
    }

    pub fn grid_w(&self) -> usize {
        self.scores.grid_w()
    }

    /// Projection scores as a pixel matrix, ready for clustering.
    pub fn as_matrix(&self) -> &PixelMatrix {
        &self.scores
    }

    /// Values of map `j` in row order.
    pub fn map(&self, j: usize) -> Vec<f32> {
        self.scores.iter_rows().map(|r| r[j]).collect()
    }

    /// Map `j` min-max scaled to `0..=255` (all zeros for a flat map).
    pub fn map_to_u8(&self, j: usize) -> Vec<u8> {
        let values = self.map(j);
        let lo = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let span = hi - lo;
        values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v as f64 - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect()
    }
}

/// `(X - mean) · V[:, ..k]`.
pub fn project_pc_maps(matrix: &PixelMatrix, model: &PcaModel, k: usize) -> Result<PcMaps> {
    let c = matrix.cols();
    if c != model.dim() {
        return Err(Error::DimMismatch(format!(
            "matrix has {c} columns, model expects {}",
            model.dim()
        )));
    }
    if k == 0 || k > c {
        return Err(Error::KTooLarge { k, available: c });
    }
    let basis: Vec<Vec<f64>> = (0..k)
        .map(|j| model.eigenvectors.column(j).iter().copied().collect())
        .collect();

    let mut out = vec![0f32; matrix.rows() * k];
    out.par_chunks_mut(k)
        .zip(matrix.values().par_chunks(c))
        .for_each_init(
            || vec![0f64; c],
            |centered, (dst, row)| {
                for ((x, &v), m) in centered.iter_mut().zip(row).zip(&model.mean) {
                    *x = v as f64 - m;
                }
                for (d, vec) in dst.iter_mut().zip(&basis) {
                    *d = centered.iter().zip(vec).map(|(a, b)| a * b).sum::<f64>() as f32;
                }
            },
        );
    let scores = PixelMatrix::new(matrix.grid_h(), matrix.grid_w(), k, out)?;
    Ok(PcMaps { scores })
}
