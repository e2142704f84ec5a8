//! Class-agnostic evaluation: optimal cluster↔class matching by IoU, then pixel
//! accuracy and mean IoU.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::LabelMap;

/// Divisor used by [`mean_iou`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NMode {
    /// Number of predicted clusters. Unmatched clusters add IoU 0; unmatched gt
    /// classes are not counted.
    #[default]
    Clusters,
    /// Number of ground-truth classes.
    Gt,
}

impl FromStr for NMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clusters" => Ok(NMode::Clusters),
            "gt" => Ok(NMode::Gt),
            other => Err(Error::InvalidConfig(format!("unknown n-mode `{other}`"))),
        }
    }
}

impl fmt::Display for NMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NMode::Clusters => "clusters",
            NMode::Gt => "gt",
        })
    }
}

/// Pixel co-occurrence counts between predicted and gt labels.
#[derive(Debug, Clone)]
pub struct Contingency {
    pub pred_labels: Vec<u8>,
    pub gt_labels: Vec<u8>,
    /// `counts[p][g]`, indexed by position in `pred_labels` / `gt_labels`.
    pub counts: Vec<Vec<u64>>,
    pub pred_sizes: Vec<u64>,
    pub gt_sizes: Vec<u64>,
    pub total: u64,
}

impl Contingency {
    pub fn new(pred: &LabelMap, gt: &LabelMap) -> Result<Self> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::DimMismatch(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let pred_labels = pred.distinct();
        let gt_labels = gt.distinct();
        let mut p_pos = [usize::MAX; 256];
        let mut g_pos = [usize::MAX; 256];
        pred_labels
            .iter()
            .enumerate()
            .for_each(|(i, &l)| p_pos[l as usize] = i);
        gt_labels
            .iter()
            .enumerate()
            .for_each(|(i, &l)| g_pos[l as usize] = i);

        let mut counts = vec![vec![0u64; gt_labels.len()]; pred_labels.len()];
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            counts[p_pos[p as usize]][g_pos[g as usize]] += 1;
        }
        let pred_sizes = counts.iter().map(|r| r.iter().sum()).collect();
        let gt_sizes = (0..gt_labels.len())
            .map(|g| counts.iter().map(|r| r[g]).sum())
            .collect();
        Ok(Self {
            pred_labels,
            gt_labels,
            counts,
            pred_sizes,
            gt_sizes,
            total: pred.labels().len() as u64,
        })
    }

    /// Intersection over union of the labels at positions `p` and `g`.
    pub fn iou(&self, p: usize, g: usize) -> f64 {
        let inter = self.counts[p][g];
        let union = self.pred_sizes[p] + self.gt_sizes[g] - inter;
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub pred: u8,
    pub gt: u8,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou: f64,
}

/// An injective pred→gt correspondence. Pairs with zero overlap are left unmatched.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matching {
    /// Sorted by predicted label.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: Vec<u8>,
    pub unmatched_gt: Vec<u8>,
    pub n_pred: usize,
    pub n_gt: usize,
    pub total_pixels: u64,
}

impl Matching {
    /// Summed matched IoU, correctly rounded when the exact fraction fits in `f64`.
    pub fn total_iou(&self) -> f64 {
        self.iou_ratio(1).unwrap_or_else(|| self.float_total_iou())
    }

    fn float_total_iou(&self) -> f64 {
        let mut ious: Vec<f64> = self.pairs.iter().map(|p| p.iou).collect();
        ious.sort_by(f64::total_cmp);
        ious.iter().sum()
    }

    /// `Σ tp/union` divided by `n`, as one rounding of the exact fraction.
    fn iou_ratio(&self, n: u64) -> Option<f64> {
        let (num, den) = exact_iou_sum(&self.pairs)?;
        let den = den.checked_mul(n as u128)?;
        const EXACT: u128 = 1 << 53;
        (num <= EXACT && den <= EXACT).then(|| num as f64 / den as f64)
    }

    pub fn gt_for(&self, pred: u8) -> Option<u8> {
        self.pairs.iter().find(|p| p.pred == pred).map(|p| p.gt)
    }
}

/// 1-based column → row map (`p[0]` unused) and the dual potentials.
struct Solved {
    p: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Square min-cost assignment (Kuhn–Munkres with potentials, `O(n³)`).
fn min_cost_square(n: usize, cost: impl Fn(usize, usize) -> f64) -> Solved {
    let mut u = vec![0f64; n + 1];
    let mut v = vec![0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    Solved { p, u, v }
}

fn rows_of(solved: &Solved, rows: usize, cols: usize) -> Vec<Option<usize>> {
    let mut assignment = vec![None; rows];
    for (j, &i) in solved.p.iter().enumerate().skip(1) {
        if i >= 1 && i <= rows && j <= cols {
            assignment[i - 1] = Some(j - 1);
        }
    }
    assignment
}

/// Maximum-weight assignment on a dense `rows x cols` matrix. Returns, for each
/// row, the assigned column if any.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let solved = min_cost_square(n, |i, j| {
        if i < rows && j < cols {
            -weights[i][j]
        } else {
            0.0
        }
    });
    rows_of(&solved, rows, cols)
}

/// Reduced costs up to this are treated as zero when collecting optimal edges.
const TIGHT_TOL: f64 = 1e-9;

/// Among the assignments maximizing summed IoU, one with the most matched pixels.
/// The second pass only sees edges that are tight under the first pass's
/// potentials.
fn optimal_assignment(table: &Contingency) -> Vec<Option<usize>> {
    let (rows, cols) = (table.pred_labels.len(), table.gt_labels.len());
    let n = rows.max(cols);
    let iou_cost = |i: usize, j: usize| {
        if i < rows && j < cols {
            -table.iou(i, j)
        } else {
            0.0
        }
    };
    let first = min_cost_square(n, iou_cost);
    let penalty = table.total as f64 + 1.0;
    let second = min_cost_square(n, |i, j| {
        let reduced = iou_cost(i, j) - first.u[i + 1] - first.v[j + 1];
        if reduced > TIGHT_TOL {
            penalty
        } else if i < rows && j < cols {
            -(table.counts[i][j] as f64)
        } else {
            0.0
        }
    });
    rows_of(&second, rows, cols)
}

/// Optimal injective matching maximizing summed IoU.
pub fn match_labels(pred: &LabelMap, gt: &LabelMap) -> Result<Matching> {
    let table = Contingency::new(pred, gt)?;
    Ok(matching_from(&table))
}

fn matching_from(table: &Contingency) -> Matching {
    let assignment = optimal_assignment(table);

    let mut pairs = Vec::new();
    let mut gt_used = vec![false; table.gt_labels.len()];
    let mut unmatched_pred = Vec::new();
    for (p, slot) in assignment.iter().enumerate() {
        match *slot {
            Some(g) if table.counts[p][g] > 0 => {
                gt_used[g] = true;
                let tp = table.counts[p][g];
                pairs.push(MatchedPair {
                    pred: table.pred_labels[p],
                    gt: table.gt_labels[g],
                    tp,
                    fp: table.pred_sizes[p] - tp,
                    fn_: table.gt_sizes[g] - tp,
                    iou: table.iou(p, g),
                });
            }
            _ => unmatched_pred.push(table.pred_labels[p]),
        }
    }
    let unmatched_gt = table
        .gt_labels
        .iter()
        .zip(&gt_used)
        .filter(|(_, &used)| !used)
        .map(|(&l, _)| l)
        .collect();
    Matching {
        pairs,
        unmatched_pred,
        unmatched_gt,
        n_pred: table.pred_labels.len(),
        n_gt: table.gt_labels.len(),
        total_pixels: table.total,
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Reduced `Σ tp / (tp + fp + fn)`; `None` once the fraction outgrows `u128`.
fn exact_iou_sum(pairs: &[MatchedPair]) -> Option<(u128, u128)> {
    let (mut num, mut den) = (0u128, 1u128);
    for p in pairs {
        let a = p.tp as u128;
        let b = (p.tp + p.fp + p.fn_) as u128;
        let lcm = (den / gcd(den, b)).checked_mul(b)?;
        num = num
            .checked_mul(lcm / den)?
            .checked_add(a.checked_mul(lcm / b)?)?;
        den = lcm;
        let g = gcd(num, den);
        if g > 1 {
            num /= g;
            den /= g;
        }
    }
    Some((num, den))
}

fn check_dims(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::DimMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Share of pixels whose predicted label maps to their gt label.
pub fn pixel_accuracy(pred: &LabelMap, gt: &LabelMap, matching: &Matching) -> Result<f64> {
    check_dims(pred, gt)?;
    let mut lut = [None; 256];
    for pair in &matching.pairs {
        lut[pair.pred as usize] = Some(pair.gt);
    }
    let correct = pred
        .labels()
        .iter()
        .zip(gt.labels())
        .filter(|(&p, &g)| lut[p as usize] == Some(g))
        .count();
    Ok(correct as f64 / pred.labels().len() as f64)
}

/// Sum of matched-pair IoUs divided by the `n_mode` count.
pub fn mean_iou(pred: &LabelMap, gt: &LabelMap, matching: &Matching, n_mode: NMode) -> Result<f64> {
    check_dims(pred, gt)?;
    Ok(miou_from(matching, n_mode))
}

fn miou_from(matching: &Matching, n_mode: NMode) -> f64 {
    let n = match n_mode {
        NMode::Clusters => matching.n_pred,
        NMode::Gt => matching.n_gt,
    };
    if n == 0 {
        return 0.0;
    }
    matching
        .iou_ratio(n as u64)
        .unwrap_or_else(|| matching.float_total_iou() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_mode: NMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub matching: Matching,
    pub p_acc: f64,
    /// mIoU under `n_mode`.
    pub m_iou: f64,
    pub n_mode: NMode,
    pub m_iou_clusters: f64,
    pub m_iou_gt: f64,
    pub n_classes_used: usize,
}

pub fn evaluate(pred: &LabelMap, gt: &LabelMap, config: EvalConfig) -> Result<EvalReport> {
    let table = Contingency::new(pred, gt)?;
    let matching = matching_from(&table);
    let correct: u64 = matching.pairs.iter().map(|p| p.tp).sum();
    let p_acc = correct as f64 / table.total as f64;
    let m_iou_clusters = miou_from(&matching, NMode::Clusters);
    let m_iou_gt = miou_from(&matching, NMode::Gt);
    let (m_iou, n_classes_used) = match config.n_mode {
        NMode::Clusters => (m_iou_clusters, matching.n_pred),
        NMode::Gt => (m_iou_gt, matching.n_gt),
    };
    Ok(EvalReport {
        matching,
        p_acc,
        m_iou,
        n_mode: config.n_mode,
        m_iou_clusters,
        m_iou_gt,
        n_classes_used,
    })
}

/// Arithmetic means over a batch of per-image reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub images: usize,
    pub p_acc: f64,
    pub m_iou: f64,
    pub m_iou_clusters: f64,
    pub m_iou_gt: f64,
}

pub fn aggregate(reports: &[EvalReport]) -> Option<Aggregate> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(Aggregate {
        images: reports.len(),
        p_acc: mean(|r| r.p_acc),
        m_iou: mean(|r| r.m_iou),
        m_iou_clusters: mean(|r| r.m_iou_clusters),
        m_iou_gt: mean(|r| r.m_iou_gt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, l: &[u8]) -> LabelMap {
        LabelMap::new(h, w, l.to_vec()).unwrap()
    }

    #[test]
    fn identical_maps() {
        let m = map(2, 3, &[0, 0, 1, 2, 2, 1]);
        let matching = match_labels(&m, &m).unwrap();
        assert_eq!(matching.total_iou(), 3.0);
        assert!(matching.pairs.iter().all(|p| p.pred == p.gt));
        let r = evaluate(&m, &m, EvalConfig::default()).unwrap();
        assert_eq!((r.p_acc, r.m_iou), (1.0, 1.0));
    }

    #[test]
    fn permutation_is_recovered() {
        let gt = map(2, 3, &[0, 0, 1, 2, 2, 1]);
        let pred = map(2, 3, &[5, 5, 9, 3, 3, 9]);
        let matching = match_labels(&pred, &gt).unwrap();
        assert_eq!(matching.gt_for(5), Some(0));
        assert_eq!(matching.gt_for(9), Some(1));
        assert_eq!(matching.gt_for(3), Some(2));
        assert_eq!(pixel_accuracy(&pred, &gt, &matching).unwrap(), 1.0);
    }

    #[test]
    fn two_by_two_fixture() {
        let pred = map(2, 2, &[0, 0, 0, 1]);
        let gt = map(2, 2, &[0, 0, 1, 1]);
        let matching = match_labels(&pred, &gt).unwrap();
        assert_eq!(matching.gt_for(0), Some(0));
        assert_eq!(matching.gt_for(1), Some(1));
        assert_eq!(matching.pairs[0].iou, 2.0 / 3.0);
        assert_eq!(matching.pairs[1].iou, 0.5);
        assert_eq!(pixel_accuracy(&pred, &gt, &matching).unwrap(), 0.75);
        let m = mean_iou(&pred, &gt, &matching, NMode::Clusters).unwrap();
        assert_eq!(m, 7.0 / 12.0);
    }

    #[test]
    fn exact_fraction_sum() {
        let pred = map(2, 2, &[0, 0, 0, 1]);
        let gt = map(2, 2, &[0, 0, 1, 1]);
        let m = match_labels(&pred, &gt).unwrap();
        assert_eq!(exact_iou_sum(&m.pairs), Some((7, 6)));
        assert_eq!(m.total_iou(), 7.0 / 6.0);
        assert_eq!(gcd(12, 18), 6);
    }

    #[test]
    fn one_cluster_against_two_classes() {
        let pred = map(2, 2, &[4, 4, 4, 4]);
        let gt = map(2, 2, &[0, 0, 1, 1]);
        let r = evaluate(&pred, &gt, EvalConfig::default()).unwrap();
        assert_eq!(r.m_iou, 0.5);
        assert_eq!(r.m_iou_gt, 0.25);
        assert_eq!(r.matching.unmatched_gt.len(), 1);
    }

    #[test]
    fn unmatched_clusters_count_as_zero() {
        let pred = map(1, 4, &[0, 1, 2, 2]);
        let gt = map(1, 4, &[0, 0, 1, 1]);
        let r = evaluate(&pred, &gt, EvalConfig::default()).unwrap();
        // Clusters 0 and 2 match; cluster 1 is left over.
        assert_eq!(r.matching.unmatched_pred, vec![1]);
        assert_eq!(r.p_acc, 0.75);
        assert!((r.m_iou - (0.5 + 1.0) / 3.0).abs() < 1e-15);
        assert!((r.m_iou_gt - (0.5 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let a = map(2, 2, &[0; 4]);
        let b = map(1, 4, &[0; 4]);
        assert!(matches!(match_labels(&a, &b), Err(Error::DimMismatch(_))));
        assert!(matches!(
            evaluate(&a, &b, EvalConfig::default()),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn hungarian_prefers_global_optimum() {
        // Greedy would take (0,0)=0.9 and then (1,1)=0.1; optimal is 0.8 + 0.8.
        let w = vec![vec![0.9, 0.8], vec![0.8, 0.1]];
        assert_eq!(max_weight_assignment(&w), vec![Some(1), Some(0)]);
        let rect = vec![vec![0.1, 0.5, 0.2]];
        assert_eq!(max_weight_assignment(&rect), vec![Some(1)]);
        let tall = vec![vec![0.1], vec![0.7], vec![0.3]];
        assert_eq!(max_weight_assignment(&tall), vec![None, Some(0), None]);
    }

    #[test]
    fn counts_are_consistent() {
        let pred = map(3, 3, &[0, 1, 1, 2, 2, 2, 0, 1, 3]);
        let gt = map(3, 3, &[0, 0, 1, 1, 1, 2, 2, 2, 2]);
        let r = evaluate(&pred, &gt, EvalConfig::default()).unwrap();
        let count = |m: &LabelMap, l: u8| m.labels().iter().filter(|&&x| x == l).count() as u64;
        for p in &r.matching.pairs {
            assert_eq!(p.tp + p.fp, count(&pred, p.pred));
            assert_eq!(p.tp + p.fn_, count(&gt, p.gt));
            assert_eq!(p.iou, p.tp as f64 / (p.tp + p.fp + p.fn_) as f64);
        }
    }

    #[test]
    fn aggregate_is_mean() {
        let a = map(1, 2, &[0, 1]);
        let b = map(1, 2, &[0, 0]);
        let r1 = evaluate(&a, &a, EvalConfig::default()).unwrap();
        let r2 = evaluate(&b, &a, EvalConfig::default()).unwrap();
        let agg = aggregate(&[r1.clone(), r2.clone()]).unwrap();
        assert_eq!(agg.p_acc, (r1.p_acc + r2.p_acc) / 2.0);
        assert_eq!(agg.m_iou, (r1.m_iou + r2.m_iou) / 2.0);
        assert!(aggregate(&[]).is_none());
    }
}
