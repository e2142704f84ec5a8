#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcaseg_core::{write_ftz, FeatureTensor, LabelMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 6;

/// Top half is region 0, bottom-left quadrant region 1, bottom-right region 2.
pub fn planted_region(h: usize, w: usize) -> u8 {
    if h < SIDE / 2 {
        0
    } else if w < SIDE / 2 {
        1
    } else {
        2
    }
}

pub fn planted_map() -> LabelMap {
    let labels = (0..SIDE * SIDE)
        .map(|i| planted_region(i / SIDE, i % SIDE))
        .collect();
    LabelMap::new(SIDE, SIDE, labels).unwrap()
}

/// 32x32x6 tensor: region `r` lights channels `2r` and `2r + 1`, plus N(0, 0.01)
/// noise. Region 0 also carries a vertical ramp of opposite sign on its two
/// channels. Without it three flat regions only span two centered directions and
/// the spectrum rule would see two components.
pub fn three_region_tensor(seed: u64) -> FeatureTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.01).unwrap();
    let mut data = Vec::with_capacity(SIDE * SIDE * CHANNELS);
    for h in 0..SIDE {
        let ramp = 1.5 * (2.0 * h as f32 / (SIDE - 1) as f32 - 1.0);
        for w in 0..SIDE {
            let r = planted_region(h, w) as usize;
            for c in 0..CHANNELS {
                let mut v = if c / 2 == r { 1.0 } else { 0.0 };
                if r == 0 && c == 0 {
                    v += ramp;
                } else if r == 0 && c == 1 {
                    v -= ramp;
                }
                data.push(v + noise.sample(&mut rng));
            }
        }
    }
    FeatureTensor::new(SIDE, SIDE, CHANNELS, data).unwrap()
}

pub fn constant_tensor(h: usize, w: usize, c: usize) -> FeatureTensor {
    FeatureTensor::new(h, w, c, vec![0.25; h * w * c]).unwrap()
}

pub fn save(dir: &Path, name: &str, tensor: &FeatureTensor) -> PathBuf {
    let path = dir.join(name);
    write_ftz(tensor, &path).unwrap();
    path
}

pub fn pcaseg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pcaseg"))
}

pub fn run(args: &[&str]) -> Output {
    pcaseg().args(args).output().expect("spawn pcaseg")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}
