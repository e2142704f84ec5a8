//! Aligning, standardizing and concatenating feature tensors into a pixel matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::FeatureTensor;

/// `N x C` row-major pixel features; row `h * grid_w + w` is grid cell `(h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatrix {
    rows: usize,
    cols: usize,
    grid_h: usize,
    grid_w: usize,
    values: Vec<f32>,
}

impl PixelMatrix {
    pub fn new(grid_h: usize, grid_w: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        let rows = grid_h * grid_w;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidTensor(format!(
                "pixel matrix needs rows and columns, got {grid_h}x{grid_w}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidTensor(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            rows,
            cols,
            grid_h,
            grid_w,
            values,
        })
    }

    /// Builds an `N x 1` grid matrix from explicit rows. Handy for small point sets.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTensor("ragged rows".into()));
        }
        Self::new(rows.len(), 1, cols, rows.concat())
    }

    /// Flattens a tensor without copying its layout (HWC is already row-major).
    pub fn from_tensor(tensor: &FeatureTensor) -> Self {
        Self {
            rows: tensor.height() * tensor.width(),
            cols: tensor.channels(),
            grid_h: tensor.height(),
            grid_w: tensor.width(),
            values: tensor.data().to_vec(),
        }
    }

    /// Reshapes back into a grid tensor.
    pub fn to_tensor(&self) -> FeatureTensor {
        FeatureTensor::new(self.grid_h, self.grid_w, self.cols, self.values.clone())
            .expect("pixel matrix invariants imply a valid tensor")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.cols)
    }

    /// Keeps the listed rows, in order, as a `len x 1` grid.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            grid_h: indices.len(),
            grid_w: 1,
            values,
        }
    }

    pub(crate) fn with_grid(mut self, grid_h: usize, grid_w: usize) -> Self {
        debug_assert_eq!(grid_h * grid_w, self.rows);
        self.grid_h = grid_h;
        self.grid_w = grid_w;
        self
    }
}

/// How to pick the common grid before concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPolicy {
    /// Largest `H * W` among the inputs (first wins on ties).
    #[default]
    Largest,
    /// Smallest `H * W` among the inputs.
    Smallest,
    Explicit {
        height: usize,
        width: usize,
    },
}

/// A named feature representation: which tensors to concatenate and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub id: String,
    pub sources: Vec<String>,
    #[serde(default)]
    pub target_grid: GridPolicy,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl FeatureRecipe {
    pub fn new(id: impl Into<String>, sources: Vec<String>) -> Self {
        Self {
            id: id.into(),
            sources,
            target_grid: GridPolicy::Largest,
            standardize: true,
        }
    }
}

/// Bilinear resampling with half-pixel centers: output cell `i` samples the input
/// at `(i + 0.5) * in / out - 0.5`, clamped to the valid range.
pub fn resample_bilinear(
    tensor: &FeatureTensor,
    target_h: usize,
    target_w: usize,
) -> Result<FeatureTensor> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidTensor(format!(
            "target grid must be non-empty, got {target_h}x{target_w}"
        )));
    }
    if target_h == tensor.height() && target_w == tensor.width() {
        return Ok(tensor.clone());
    }
    let ys = axis_weights(tensor.height(), target_h);
    let xs = axis_weights(tensor.width(), target_w);
    let c = tensor.channels();

    let mut out = vec![0f32; target_h * target_w * c];
    out.par_chunks_mut(target_w * c)
        .zip(ys.par_iter())
        .for_each(|(row, &(y0, y1, fy))| {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let (p00, p01) = (tensor.pixel(y0, x0), tensor.pixel(y0, x1));
                let (p10, p11) = (tensor.pixel(y1, x0), tensor.pixel(y1, x1));
                for ch in 0..c {
                    let top = p00[ch] as f64 * (1.0 - fx) + p01[ch] as f64 * fx;
                    let bottom = p10[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
                    row[ox * c + ch] = (top * (1.0 - fy) + bottom * fy) as f32;
                }
            }
        });

    let mut resampled = FeatureTensor::new(target_h, target_w, c, out)?;
    resampled.meta = tensor.meta.clone();
    Ok(resampled)
}

/// For each output index: (lower source index, upper source index, upper weight).
fn axis_weights(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    let last = (input - 1) as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Per-channel z-score over the grid (population std). Channels whose spread is
/// below f32 resolution of their mean become all zeros.
pub fn standardize_channels(tensor: &FeatureTensor) -> FeatureTensor {
    let c = tensor.channels();
    let n = tensor.height() * tensor.width();
    let data = tensor.data();

    let stats: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mean = (0..n).map(|i| data[i * c + ch] as f64).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|i| {
                    let d = data[i * c + ch] as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n as f64;
            (mean, var.sqrt())
        })
        .collect();

    let out: Vec<f32> = data
        .chunks_exact(c)
        .flat_map(|px| {
            px.iter().zip(&stats).map(|(&v, &(mean, std))| {
                if std <= f32::EPSILON as f64 * mean.abs() || std == 0.0 {
                    0.0
                } else {
                    ((v as f64 - mean) / std) as f32
                }
            })
        })
        .collect();

    let mut standardized = FeatureTensor::new(tensor.height(), tensor.width(), c, out)
        .expect("standardization preserves shape and finiteness");
    standardized.meta = tensor.meta.clone();
    standardized
}

fn target_grid(policy: GridPolicy, tensors: &[&FeatureTensor]) -> (usize, usize) {
    let area = |t: &&&FeatureTensor| t.height() * t.width();
    let pick = match policy {
        GridPolicy::Explicit { height, width } => return (height, width),
        // max_by_key returns the last maximum; reverse to keep the first.
        GridPolicy::Largest => tensors.iter().rev().max_by_key(area),
        GridPolicy::Smallest => tensors.iter().min_by_key(area),
    };
    let t = pick.expect("caller checked non-empty");
    (t.height(), t.width())
}

/// Resamples every tensor to the recipe's grid, optionally standardizes, and
/// concatenates along channels in recipe order.
pub fn concat_features(recipe: &FeatureRecipe, tensors: &[&FeatureTensor]) -> Result<PixelMatrix> {
    if tensors.is_empty() {
        return Err(Error::EmptyRecipe);
    }
    let (gh, gw) = target_grid(recipe.target_grid, tensors);
    let aligned = tensors
        .iter()
        .map(|t| {
            let t = resample_bilinear(t, gh, gw)?;
            Ok(if recipe.standardize {
                standardize_channels(&t)
            } else {
                t
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let cols: usize = aligned.iter().map(FeatureTensor::channels).sum();
    let mut values = Vec::with_capacity(gh * gw * cols);
    for h in 0..gh {
        for w in 0..gw {
            for t in &aligned {
                values.extend_from_slice(t.pixel(h, w));
            }
        }
    }
    PixelMatrix::new(gh, gw, cols, values)
}
