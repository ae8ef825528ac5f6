//! Resolving the per-frequency source permutation by correlating mask
//! activity sequences with global centroids.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

/// Aligned or unaligned soft masks, `gamma[(n, t, f)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor {
    pub gamma: Array3<f64>,
    pub valid: Array2<bool>,
}

impl MaskTensor {
    pub fn new(gamma: Array3<f64>, valid: Array2<bool>) -> Result<Self> {
        let (_, t, f) = gamma.dim();
        if valid.dim() != (t, f) {
            return Err(Error::ShapeMismatch(format!(
                "valid mask {:?} vs masks {:?}",
                valid.dim(),
                gamma.dim()
            )));
        }
        Ok(Self { gamma, valid })
    }

    pub fn sources(&self) -> usize {
        self.gamma.dim().0
    }

    pub fn frames(&self) -> usize {
        self.gamma.dim().1
    }

    pub fn bins(&self) -> usize {
        self.gamma.dim().2
    }

    /// Largest deviation of `sum_n gamma` from one.
    pub fn partition_defect(&self) -> f64 {
        self.gamma
            .sum_axis(Axis(0))
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `perm[f][k]` is the input source shown as output source `k` at frequency `f`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationMap {
    pub perm: Vec<Vec<usize>>,
}

impl PermutationMap {
    pub fn identity(bins: usize, n: usize) -> Self {
        Self {
            perm: vec![(0..n).collect(); bins],
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            perm: self
                .perm
                .iter()
                .map(|p| {
                    let mut inv = vec![0; p.len()];
                    for (k, &src) in p.iter().enumerate() {
                        inv[src] = k;
                    }
                    inv
                })
                .collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().all(|p| p.iter().enumerate().all(|(k, &s)| k == s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    /// Weight of the neighbour-frequency correlation during refinement.
    pub neighbor_weight: f64,
    pub refine_sweeps: usize,
    /// Cap on all sweeps (centroid passes plus refinement).
    pub max_sweeps: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            neighbor_weight: 0.3,
            refine_sweeps: 3,
            max_sweeps: 20,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AlignReport {
    pub sweeps: usize,
    /// Refinement objective after each refinement sweep (first entry: before).
    pub refine_objective: Vec<f64>,
}

pub fn apply_permutations(masks: &MaskTensor, map: &PermutationMap) -> Result<MaskTensor> {
    let (n, t, f) = masks.gamma.dim();
    if map.perm.len() != f || map.perm.iter().any(|p| p.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "permutation map for {} bins vs masks with {f} bins and {n} sources",
            map.perm.len()
        )));
    }
    let mut out = Array3::zeros((n, t, f));
    for (fi, p) in map.perm.iter().enumerate() {
        for (k, &src) in p.iter().enumerate() {
            for ti in 0..t {
                out[(k, ti, fi)] = masks.gamma[(src, ti, fi)];
            }
        }
    }
    MaskTensor::new(out, masks.valid.clone())
}

/// All permutations of `0..n` in lexicographic order (identity first).
pub(crate) fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

/// Pearson correlation over the frames where `valid` holds; zero when either side is flat.
fn pearson(a: &[f64], b: &[f64], valid: &[bool]) -> f64 {
    let mut n = 0.0;
    let (mut sa, mut sb) = (0.0, 0.0);
    for ((x, y), v) in a.iter().zip(b).zip(valid) {
        if *v {
            n += 1.0;
            sa += x;
            sb += y;
        }
    }
    if n < 2.0 {
        return 0.0;
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
    for ((x, y), v) in a.iter().zip(b).zip(valid) {
        if *v {
            let (dx, dy) = (x - ma, y - mb);
            cab += dx * dy;
            caa += dx * dx;
            cbb += dy * dy;
        }
    }
    if caa <= 1e-300 || cbb <= 1e-300 {
        0.0
    } else {
        cab / (caa * cbb).sqrt()
    }
}

struct Problem {
    /// `act[f][n]`: activity of input source `n` over frames.
    act: Vec<Vec<Vec<f64>>>,
    valid: Vec<Vec<bool>>,
    usable: Vec<bool>,
    n: usize,
    t: usize,
}

impl Problem {
    fn centroid_score(&self, f: usize, p: &[usize], cent: &[Vec<f64>]) -> f64 {
        p.iter()
            .enumerate()
            .map(|(k, &src)| pearson(&self.act[f][src], &cent[k], &self.valid[f]))
            .sum()
    }

    fn pair_score(&self, f: usize, p: &[usize], g: usize, q: &[usize]) -> f64 {
        let both: Vec<bool> = self.valid[f].iter().zip(&self.valid[g]).map(|(a, b)| *a && *b).collect();
        p.iter()
            .zip(q)
            .map(|(&a, &b)| pearson(&self.act[f][a], &self.act[g][b], &both))
            .sum()
    }

    fn centroids(&self, perm: &[Vec<usize>]) -> Vec<Vec<f64>> {
        let mut cent = vec![vec![0.0; self.t]; self.n];
        let mut count = vec![0.0; self.t];
        for (f, p) in perm.iter().enumerate() {
            if !self.usable[f] {
                continue;
            }
            for ti in 0..self.t {
                if self.valid[f][ti] {
                    count[ti] += 1.0;
                    for (k, &src) in p.iter().enumerate() {
                        cent[k][ti] += self.act[f][src][ti];
                    }
                }
            }
        }
        for c in cent.iter_mut() {
            for (x, n) in c.iter_mut().zip(&count) {
                *x = if *n > 0.0 { *x / n } else { 1.0 / self.n as f64 };
            }
        }
        cent
    }

    /// Best candidate; ties go to the identity, then to `current`.
    fn best(&self, cands: &[Vec<usize>], current: &[usize], score: impl Fn(&[usize]) -> f64) -> Vec<usize> {
        let tol = 1e-12;
        let mut best = current.to_vec();
        let mut best_s = score(current);
        for c in cands {
            let s = score(c);
            let is_id = c.iter().enumerate().all(|(k, &v)| k == v);
            if s > best_s + tol || (is_id && s >= best_s - tol && c.as_slice() != current) {
                best = c.clone();
                best_s = s;
            }
        }
        best
    }
}

/// Greedy candidate set for large N: the greedy matching plus all single swaps of the current.
fn large_n_candidates(score_pair: impl Fn(usize, usize) -> f64, current: &[usize], n: usize) -> Vec<Vec<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for k in 0..n {
        for s in 0..n {
            pairs.push((score_pair(k, s), k, s));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut greedy = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (_, k, s) in pairs {
        if greedy[k] == usize::MAX && !used[s] {
            greedy[k] = s;
            used[s] = true;
        }
    }
    let mut out = vec![(0..n).collect(), greedy];
    for i in 0..n {
        for j in i + 1..n {
            let mut p = current.to_vec();
            p.swap(i, j);
            out.push(p);
        }
    }
    out
}

pub fn align_permutations(masks: &MaskTensor) -> PermutationMap {
    align_permutations_with(masks, &AlignConfig::default()).0
}

pub fn align_permutations_with(masks: &MaskTensor, config: &AlignConfig) -> (PermutationMap, AlignReport) {
    let (n, t, f) = masks.gamma.dim();
    let mut report = AlignReport::default();
    if n < 2 || f == 0 {
        return (PermutationMap::identity(f, n), report);
    }
    let valid: Vec<Vec<bool>> = (0..f).map(|fi| (0..t).map(|ti| masks.valid[(ti, fi)]).collect()).collect();
    let act: Vec<Vec<Vec<f64>>> = (0..f)
        .map(|fi| (0..n).map(|k| (0..t).map(|ti| masks.gamma[(k, ti, fi)]).collect()).collect())
        .collect();
    let usable: Vec<bool> = valid.iter().map(|v| v.iter().filter(|x| **x).count() >= 2).collect();
    let pb = Problem { act, valid, usable, n, t };
    let all = if n <= 6 { Some(permutations(n)) } else { None };
    let mut perm: Vec<Vec<usize>> = vec![(0..n).collect(); f];

    // Seed centroids with the most active frequency so that the result does
    // not depend on per-frequency input labelling.
    let spread = |fi: usize| -> f64 {
        let v = &pb.valid[fi];
        (0..n)
            .map(|k| {
                let x = &pb.act[fi][k];
                let cnt = v.iter().filter(|b| **b).count().max(1) as f64;
                let mean = x.iter().zip(v).filter(|(_, b)| **b).map(|(a, _)| a).sum::<f64>() / cnt;
                x.iter().zip(v).filter(|(_, b)| **b).map(|(a, _)| (a - mean).powi(2)).sum::<f64>()
            })
            .sum()
    };
    let Some(seed) = (0..f).filter(|&fi| pb.usable[fi]).max_by(|&a, &b| spread(a).total_cmp(&spread(b))) else {
        return (PermutationMap::identity(f, n), report);
    };
    let mut cent: Vec<Vec<f64>> = pb.act[seed].clone();

    let passes = config.max_sweeps.saturating_sub(config.refine_sweeps).max(1);
    for _ in 0..passes {
        report.sweeps += 1;
        let mut changed = false;
        for fi in 0..f {
            if !pb.usable[fi] {
                continue;
            }
            let score = |p: &[usize]| pb.centroid_score(fi, p, &cent);
            let cands = match &all {
                Some(a) => a.clone(),
                None => large_n_candidates(
                    |k, s| pearson(&pb.act[fi][s], &cent[k], &pb.valid[fi]),
                    &perm[fi],
                    n,
                ),
            };
            let next = pb.best(&cands, &perm[fi], score);
            if next != perm[fi] {
                perm[fi] = next;
                changed = true;
            }
        }
        cent = pb.centroids(&perm);
        if !changed {
            break;
        }
    }

    // Refinement with neighbour consistency; centroids held fixed so that
    // every coordinate update is an ascent step on one objective.
    let w = config.neighbor_weight;
    let neighbours = |fi: usize| -> Vec<usize> {
        let mut v = Vec::new();
        if fi > 0 {
            v.push(fi - 1);
        }
        if fi + 1 < f {
            v.push(fi + 1);
        }
        v.into_iter().filter(|&g| pb.usable[g]).collect()
    };
    let objective = |perm: &[Vec<usize>]| -> f64 {
        let mut total = 0.0;
        for fi in 0..f {
            if !pb.usable[fi] {
                continue;
            }
            total += pb.centroid_score(fi, &perm[fi], &cent);
            if fi + 1 < f && pb.usable[fi + 1] {
                total += w * pb.pair_score(fi, &perm[fi], fi + 1, &perm[fi + 1]);
            }
        }
        total
    };
    report.refine_objective.push(objective(&perm));
    for _ in 0..config.refine_sweeps.min(config.max_sweeps.saturating_sub(report.sweeps)) {
        report.sweeps += 1;
        let mut changed = false;
        for fi in 0..f {
            if !pb.usable[fi] {
                continue;
            }
            let nb = neighbours(fi);
            let score = |p: &[usize]| {
                pb.centroid_score(fi, p, &cent)
                    + w * nb.iter().map(|&g| pb.pair_score(fi, p, g, &perm[g])).sum::<f64>()
            };
            let cands = match &all {
                Some(a) => a.clone(),
                None => large_n_candidates(
                    |k, s| pearson(&pb.act[fi][s], &cent[k], &pb.valid[fi]),
                    &perm[fi],
                    n,
                ),
            };
            let next = pb.best(&cands, &perm[fi], score);
            if next != perm[fi] {
                perm[fi] = next;
                changed = true;
            }
        }
        report.refine_objective.push(objective(&perm));
        if !changed {
            break;
        }
    }
    (PermutationMap { perm }, report)
}
