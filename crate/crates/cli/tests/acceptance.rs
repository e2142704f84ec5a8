//! Acceptance gate. Every criterion runs against an oracle written here, prints one
//! PASS/FAIL line, and any failure makes the target exit non-zero.
//!
//! Run with `cargo test -p pcaseg-cli --test acceptance`.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use pcaseg_core::tensor_io::{decode_ftz, encode_ftz};
use pcaseg_core::{
    evaluate, fit_pca, hierarchical, kmeans, kmeans_fit, project_pc_maps, read_ftz, read_label_png,
    select_k, silhouette_scores, write_ftz, ClusterLabels, EvalConfig, FeatureTensor, KMeansParams,
    LabelMap, Linkage, Method, NMode, PixelMatrix,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn matrix_from(rows: &[Vec<f32>]) -> PixelMatrix {
    PixelMatrix::from_rows(rows).unwrap()
}

fn euclid(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn brute_silhouette(rows: &[Vec<f32>], labels: &[usize], k: usize) -> Vec<f64> {
    let n = rows.len();
    (0..n)
        .map(|i| {
            let mut sum = vec![0f64; k];
            let mut cnt = vec![0usize; k];
            for j in 0..n {
                if j != i {
                    sum[labels[j]] += euclid(&rows[i], &rows[j]);
                    cnt[labels[j]] += 1;
                }
            }
            let own = labels[i];
            if cnt[own] == 0 {
                return 0.0;
            }
            let a = sum[own] / cnt[own] as f64;
            let b = (0..k)
                .filter(|&c| c != own && cnt[c] > 0)
                .map(|c| sum[c] / cnt[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let d = a.max(b);
            if d == 0.0 {
                0.0
            } else {
                (b - a) / d
            }
        })
        .collect()
}

fn silhouette_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut worst = 0f64;
    let mut points = 0;
    for case in 0..50 {
        let n = rng.random_range(10..=500);
        let c = rng.random_range(1..=8);
        let k = rng.random_range(2..=5);
        let centers: Vec<Vec<f32>> = (0..k)
            .map(|_| (0..c).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut labels = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let l = if i < k { i } else { rng.random_range(0..k) };
            let row = centers[l]
                .iter()
                .map(|&m| m + rng.sample::<f32, _>(StandardNormal))
                .collect();
            labels.push(l);
            rows.push(row);
        }
        let cl = ClusterLabels {
            labels: labels.clone(),
            k,
            method: Method::Kmeans,
            inertia: None,
            seed: None,
        };
        let got = silhouette_scores(&matrix_from(&rows), &cl).map_err(|e| e.to_string())?;
        let want = brute_silhouette(&rows, &labels, k);
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            let d = (g - w).abs();
            worst = worst.max(d);
            check(d <= 1e-6, || format!("case {case} point {i}: {g} vs {w}"))?;
        }
        points += n;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "50 datasets, {points} points, max |diff| {worst:.1e}, {elapsed:.2?}"
    ))
}

fn pca_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut worst_orth, mut worst_trace, mut worst_var) = (0f64, 0f64, 0f64);
    for case in 0..50 {
        let n = rng.random_range(40..=400);
        let c = rng.random_range(2..=10);
        let mix: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let scale: Vec<f64> = (0..c).map(|_| rng.random_range(0.3..3.0)).collect();
        let offset: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..5.0)).collect();
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..c)
                    .map(|j| scale[j] * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (0..c)
                    .map(|j| (offset[j] + (0..c).map(|i| z[i] * mix[i][j]).sum::<f64>()) as f32)
                    .collect()
            })
            .collect();
        let m = matrix_from(&rows);
        let model = fit_pca(&m, 0.3).map_err(|e| e.to_string())?;
        let v = &model.eigenvectors;

        for a in 0..c {
            for b in 0..c {
                let dot: f64 = (0..c).map(|i| v[(i, a)] * v[(i, b)]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                worst_orth = worst_orth.max((dot - want).abs());
            }
        }
        check(worst_orth <= 1e-6, || {
            format!("case {case}: VᵀV off by {worst_orth:e}")
        })?;

        let trace: f64 = (0..c)
            .map(|j| {
                let mean = rows.iter().map(|r| r[j] as f64).sum::<f64>() / n as f64;
                rows.iter()
                    .map(|r| (r[j] as f64 - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1) as f64
            })
            .sum();
        let spectral: f64 = model.eigenvalues.iter().sum();
        let rel = (spectral - trace).abs() / trace;
        worst_trace = worst_trace.max(rel);
        check(rel <= 1e-6, || {
            format!("case {case}: Σλ {spectral} vs trace {trace}")
        })?;

        let maps = project_pc_maps(&m, &model, c).map_err(|e| e.to_string())?;
        for j in 0..c {
            let col: Vec<f64> = maps.map(j).iter().map(|&x| x as f64).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let lambda = model.eigenvalues[j];
            let rel = (var - lambda).abs() / lambda;
            worst_var = worst_var.max(rel);
            check(rel <= 1e-4, || {
                format!("case {case} PC {j}: variance {var} vs λ {lambda}")
            })?;
        }
    }
    Ok(format!(
        "50 matrices, orth {worst_orth:.1e}, trace rel {worst_trace:.1e}, variance rel {worst_var:.1e}"
    ))
}

fn select_k_exactness() -> Outcome {
    let k = select_k(&[1.0, 0.5, 0.31, 0.29], 0.3);
    check(k == 3, || format!("example gave {k}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..100 {
        let len = rng.random_range(1..=12);
        let mut spectrum: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..10.0)).collect();
        spectrum.sort_by(|a, b| b.total_cmp(a));
        let base = select_k(&spectrum, 0.3);
        for c in [1e-3, 1.0, 1e3] {
            let scaled: Vec<f64> = spectrum.iter().map(|l| l * c).collect();
            let got = select_k(&scaled, 0.3);
            check(got == base, || {
                format!("case {case}: c={c} gives {got}, base {base}")
            })?;
        }
        let mut prev = usize::MAX;
        for step in 1..100 {
            let t = step as f64 / 100.0;
            let k = select_k(&spectrum, t);
            check(k <= prev, || format!("case {case}: K rose to {k} at t={t}"))?;
            prev = k;
        }
    }
    Ok("example → 3, 100 spectra scale-invariant and monotone".into())
}

fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&n| pairs(n)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb)
        .map(|j| pairs(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = pairs(a.len() as u64);
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn clustering_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let noise = Normal::new(0.0f32, 0.01).unwrap();
    let centers = [
        [0.0f32, 0.0, 0.0],
        [10.0, 0.0, 0.0],
        [0.0, 10.0, 0.0],
        [0.0, 0.0, 10.0],
    ];
    let mut data: Vec<(usize, Vec<f32>)> = (0..400)
        .map(|i| {
            let l = i % 4;
            let row = centers[l]
                .iter()
                .map(|&m| m + noise.sample(&mut rng))
                .collect();
            (l, row)
        })
        .collect();
    data.shuffle(&mut rng);
    let planted: Vec<usize> = data.iter().map(|(l, _)| *l).collect();
    let rows: Vec<Vec<f32>> = data.into_iter().map(|(_, r)| r).collect();
    let m = matrix_from(&rows);

    for seed in 0..10 {
        let km = kmeans(&m, 4, seed, 300, 1e-4).map_err(|e| e.to_string())?;
        let ari = adjusted_rand_index(&km.labels, &planted);
        check(ari == 1.0, || format!("kmeans seed {seed}: ARI {ari}"))?;
        let fit = kmeans_fit(&m, KMeansParams::new(4, seed)).map_err(|e| e.to_string())?;
        for w in fit.inertia_history.windows(2) {
            check(w[1] <= w[0], || {
                format!("seed {seed}: inertia rose {} → {}", w[0], w[1])
            })?;
        }
    }
    let ward = hierarchical(&m, 4, Linkage::Ward, 4096).map_err(|e| e.to_string())?;
    let ari = adjusted_rand_index(&ward.labels, &planted);
    check(ari == 1.0, || format!("ward: ARI {ari}"))?;
    Ok("kmeans (10 seeds) and Ward ARI 1.0, inertia non-increasing".into())
}

/// Exact non-negative fraction.
#[derive(Clone, Copy, Debug)]
struct Frac(u128, u128);

impl Frac {
    fn add(self, o: Frac) -> Frac {
        let (n, d) = (self.0 * o.1 + o.0 * self.1, self.1 * o.1);
        let g = gcd(n, d);
        Frac(n / g, d / g)
    }
    fn cmp(self, o: Frac) -> std::cmp::Ordering {
        (self.0 * o.1).cmp(&(o.0 * self.1))
    }
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

struct BruteScore {
    best: Frac,
    /// Matched-pixel counts reachable by some optimal assignment.
    tp_options: Vec<u64>,
}

/// Enumerates every injective partial assignment pred → gt.
fn brute_force(pred: &LabelMap, gt: &LabelMap) -> (BruteScore, usize, usize) {
    let mut pl: Vec<u8> = pred.labels().to_vec();
    pl.sort();
    pl.dedup();
    let mut gl: Vec<u8> = gt.labels().to_vec();
    gl.sort();
    gl.dedup();
    let count = |p: u8, g: u8| {
        pred.labels()
            .iter()
            .zip(gt.labels())
            .filter(|(&a, &b)| a == p && b == g)
            .count() as u64
    };
    let size = |m: &LabelMap, l: u8| m.labels().iter().filter(|&&x| x == l).count() as u64;

    let mut score = BruteScore {
        best: Frac(0, 1),
        tp_options: vec![0],
    };
    fn walk(
        i: usize,
        used: &mut Vec<bool>,
        acc: Frac,
        tp: u64,
        iou: &dyn Fn(usize, usize) -> (Frac, u64),
        np: usize,
        score: &mut BruteScore,
    ) {
        if i == np {
            match acc.cmp(score.best) {
                std::cmp::Ordering::Greater => {
                    score.best = acc;
                    score.tp_options = vec![tp];
                }
                std::cmp::Ordering::Equal => score.tp_options.push(tp),
                std::cmp::Ordering::Less => {}
            }
            return;
        }
        walk(i + 1, used, acc, tp, iou, np, score);
        for g in 0..used.len() {
            if !used[g] {
                let (f, t) = iou(i, g);
                if t == 0 {
                    continue;
                }
                used[g] = true;
                walk(i + 1, used, acc.add(f), tp + t, iou, np, score);
                used[g] = false;
            }
        }
    }
    let iou = |i: usize, g: usize| {
        let tp = count(pl[i], gl[g]);
        let union = size(pred, pl[i]) + size(gt, gl[g]) - tp;
        (Frac(tp as u128, union as u128), tp)
    };
    let mut used = vec![false; gl.len()];
    walk(0, &mut used, Frac(0, 1), 0, &iou, pl.len(), &mut score);
    (score, pl.len(), gl.len())
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, max_labels: usize) -> LabelMap {
    let n_labels = rng.random_range(1..=max_labels);
    let mut pool: Vec<u8> = (0..=254).collect();
    pool.shuffle(rng);
    let ids = &pool[..n_labels];
    let labels = (0..h * w)
        .map(|_| ids[rng.random_range(0..n_labels)])
        .collect();
    LabelMap::new(h, w, labels).unwrap()
}

fn eval_oracle() -> Outcome {
    let pred = LabelMap::new(2, 2, vec![0, 0, 0, 1]).unwrap();
    let gt = LabelMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
    let r = evaluate(&pred, &gt, EvalConfig::default()).map_err(|e| e.to_string())?;
    check(r.p_acc == 0.75, || format!("fixture p_acc {}", r.p_acc))?;
    check(r.m_iou == 7.0 / 12.0, || {
        format!("fixture m_iou {}", r.m_iou)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut tied = 0;
    for case in 0..100 {
        let pred = random_map(&mut rng, 8, 8, 4);
        let gt = random_map(&mut rng, 8, 8, 4);
        let (brute, np, ng) = brute_force(&pred, &gt);
        let total = (pred.labels().len()) as f64;
        let want_clusters = brute.best.0 as f64 / (brute.best.1 * np as u128) as f64;
        let want_gt = brute.best.0 as f64 / (brute.best.1 * ng as u128) as f64;
        for (mode, want) in [(NMode::Clusters, want_clusters), (NMode::Gt, want_gt)] {
            let r = evaluate(&pred, &gt, EvalConfig { n_mode: mode }).map_err(|e| e.to_string())?;
            check(r.m_iou == want, || {
                format!("case {case} {mode}: m_iou {} vs {want}", r.m_iou)
            })?;
            let tp: u64 = r.matching.pairs.iter().map(|p| p.tp).sum();
            check(r.p_acc == tp as f64 / total, || {
                format!("case {case}: p_acc inconsistent")
            })?;
            check(brute.tp_options.contains(&tp), || {
                format!("case {case}: {tp} matched pixels is not an optimal assignment")
            })?;
        }
        let mut opts = brute.tp_options.clone();
        opts.sort();
        opts.dedup();
        if opts.len() > 1 {
            tied += 1;
        }
    }
    Ok(format!(
        "fixture 0.75 / 7/12 exact; 100 random 8x8 pairs match enumeration ({tied} with tied optima)"
    ))
}

fn relabel(map: &LabelMap, rng: &mut ChaCha8Rng) -> LabelMap {
    let mut perm: Vec<u8> = (0..=254).collect();
    perm.shuffle(rng);
    let labels = map.labels().iter().map(|&l| perm[l as usize]).collect();
    LabelMap::new(map.height(), map.width(), labels).unwrap()
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for case in 0..400 {
        let (side, labels) = if case % 2 == 0 { (4, 4) } else { (16, 6) };
        let pred = random_map(&mut rng, side, side, labels);
        let gt = random_map(&mut rng, side, side, labels);
        let pred2 = relabel(&pred, &mut rng);
        let gt2 = relabel(&gt, &mut rng);
        for mode in [NMode::Clusters, NMode::Gt] {
            let cfg = EvalConfig { n_mode: mode };
            let a = evaluate(&pred, &gt, cfg).map_err(|e| e.to_string())?;
            let b = evaluate(&pred2, &gt2, cfg).map_err(|e| e.to_string())?;
            check(a.p_acc == b.p_acc && a.m_iou == b.m_iou, || {
                format!(
                    "case {case} {mode}: ({}, {}) vs ({}, {})",
                    a.p_acc, a.m_iou, b.p_acc, b.m_iou
                )
            })?;
        }
    }
    Ok("400 random pairs (4x4 and 16x16), both n_mode values".into())
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ftz = common::save(dir.path(), "synth.ftz", &common::three_region_tensor(7));
    let out = dir.path().join("out");
    let recipe = format!("synth={}", ftz.display());
    let start = Instant::now();
    let run = common::run(&[
        "segment",
        "--recipe",
        &recipe,
        "--out",
        out.to_str().unwrap(),
        "--json",
    ]);
    let elapsed = start.elapsed();
    check(run.status.success(), || {
        format!(
            "exit {:?}: {}",
            run.status.code(),
            String::from_utf8_lossy(&run.stderr)
        )
    })?;
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap())
            .map_err(|e| e.to_string())?;
    let k = report["winner"]["k"].as_u64().unwrap_or(0);
    let sr = report["winner"]["sr"].as_f64().unwrap_or(0.0);
    check(k == 3, || format!("K = {k}"))?;
    let labels = read_label_png(out.join("labelmap.png")).map_err(|e| e.to_string())?;
    let r = evaluate(&labels, &common::planted_map(), EvalConfig::default())
        .map_err(|e| e.to_string())?;
    check(r.p_acc >= 0.99, || format!("pAcc {}", r.p_acc))?;
    check(sr >= 0.95, || format!("SR {sr}"))?;
    for j in 0..3 {
        check(out.join(format!("pcmap_{j}.png")).exists(), || {
            format!("pcmap_{j}.png missing")
        })?;
    }
    check(elapsed < Duration::from_secs(5), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "K = {k}, pAcc {:.4}, SR {sr:.4}, winner {}, {elapsed:.2?}",
        r.p_acc, report["winner"]["method"]
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ftz = common::save(dir.path(), "synth.ftz", &common::three_region_tensor(8));
    let recipe = format!("synth={}", ftz.display());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let run = common::run(&[
            "segment",
            "--recipe",
            &recipe,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        check(run.status.success(), || {
            String::from_utf8_lossy(&run.stderr).into_owned()
        })?;
        outputs.push(out);
    }
    let mut files = vec!["labelmap.png".to_string(), "report.json".to_string()];
    files.extend((0..3).map(|j| format!("pcmap_{j}.png")));
    for f in &files {
        let a = fs::read(outputs[0].join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = fs::read(outputs[1].join(f)).map_err(|e| format!("{f}: {e}"))?;
        check(a == b, || format!("{f} differs between runs"))?;
    }
    Ok(format!(
        "{} files byte-identical across two runs",
        files.len()
    ))
}

fn random_f32(rng: &mut ChaCha8Rng) -> f32 {
    match rng.random_range(0..8) {
        0 => f32::from_bits(rng.random_range(1..0x0080_0000)),
        1 => -0.0,
        2 => f32::MAX * rng.random_range(-1.0f32..1.0),
        _ => loop {
            let v = f32::from_bits(rng.random());
            if v.is_finite() {
                break v;
            }
        },
    }
}

fn ftz_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for case in 0..200 {
        let (h, w, c) = (
            rng.random_range(1..=12),
            rng.random_range(1..=12),
            rng.random_range(1..=16),
        );
        let data: Vec<f32> = (0..h * w * c).map(|_| random_f32(&mut rng)).collect();
        let mut t = FeatureTensor::new(h, w, c, data).map_err(|e| e.to_string())?;
        if case % 2 == 0 {
            t = t
                .with_meta("backbone", "vgg16")
                .with_meta("layer", format!("conv{case}"));
        }
        let bytes = encode_ftz(&t).map_err(|e| e.to_string())?;
        let back = decode_ftz(&bytes).map_err(|e| e.to_string())?;
        let path = dir.path().join("t.ftz");
        write_ftz(&t, &path).map_err(|e| e.to_string())?;
        let from_disk = read_ftz(&path).map_err(|e| e.to_string())?;
        for r in [&back, &from_disk] {
            check(
                (r.height(), r.width(), r.channels()) == (h, w, c) && r.meta == t.meta,
                || format!("case {case}: header changed"),
            )?;
            let same = r
                .data()
                .iter()
                .zip(t.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            check(same, || format!("case {case}: payload bits changed"))?;
        }
        check(encode_ftz(&back).unwrap() == bytes, || {
            format!("case {case}: re-encode differs")
        })?;
    }
    Ok("200 random shapes, bit-exact in memory and on disk".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("silhouette oracle", silhouette_oracle),
        ("PCA invariants", pca_invariants),
        ("select_k exactness", select_k_exactness),
        ("clustering recovery", clustering_recovery),
        ("eval oracle", eval_oracle),
        ("permutation invariance", permutation_invariance),
        ("end-to-end synthetic", end_to_end),
        ("determinism", determinism),
        ("FTZ round trip", ftz_round_trip),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
