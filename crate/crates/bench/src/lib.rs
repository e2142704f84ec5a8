//! Synthetic inputs shared by the benchmarks.

use pcaseg_core::{FeatureTensor, PixelMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `k` blobs in `dim` dimensions, `n` rows, unit spread around centers on a
/// scaled one-hot layout.
pub fn blobs(n: usize, dim: usize, k: usize, seed: u64) -> PixelMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|i| {
            let c = i % k;
            (0..dim)
                .map(|d| {
                    let center = if d % k == c { 8.0 } else { 0.0 };
                    center + rng.random_range(-1.0f32..1.0)
                })
                .collect()
        })
        .collect();
    PixelMatrix::from_rows(&rows).unwrap()
}

/// Feature tensor with `regions` vertical bands, each lighting its own channel.
pub fn banded_tensor(h: usize, w: usize, c: usize, regions: usize, seed: u64) -> FeatureTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(h * w * c);
    for _ in 0..h {
        for x in 0..w {
            let band = x * regions / w;
            for ch in 0..c {
                let base = if ch % regions == band { 1.0 } else { 0.0 };
                data.push(base + rng.random_range(-0.05f32..0.05));
            }
        }
    }
    FeatureTensor::new(h, w, c, data).unwrap()
}
