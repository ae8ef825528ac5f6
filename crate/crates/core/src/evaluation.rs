//! Separation metrics and paired statistics.

use crate::error::{Error, Result};
use crate::perm_align::permutations;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::path::Path;
use statrs::function::erf::erfc;

/// Reported SDR for numerically perfect reconstruction.
pub const SDR_CAP_DB: f64 = 100.0;
pub const DEFAULT_FILTER_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrResult {
    /// SDR of each reference against its paired estimate.
    pub sdr: Vec<f64>,
    /// `pairing[i]` is the estimate paired with reference `i`.
    pub pairing: Vec<usize>,
    /// Full matrix, `matrix[i][j]` = SDR of estimate `j` against reference `i`.
    pub matrix: Vec<Vec<f64>>,
}

fn correlate_fft(a: &[f64], b: &[f64], lags: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    // c[k] = sum_t a[t] b[t-k] for k in 0..lags
    let size = (a.len().max(b.len()) + lags).next_power_of_two();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let load = |x: &[f64]| {
        let mut v = vec![Complex64::new(0.0, 0.0); size];
        for (d, s) in v.iter_mut().zip(x) {
            d.re = *s;
        }
        v
    };
    let mut fa = load(a);
    let mut fb = load(b);
    fft.process(&mut fa);
    fft.process(&mut fb);
    let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
    ifft.process(&mut prod);
    prod[..lags].iter().map(|c| c.re / size as f64).collect()
}

/// Distortion-filter projection onto one reference: `L` delayed copies.
struct Projector {
    reference: Vec<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    lags: usize,
}

impl Projector {
    fn new(reference: &[f64], lags: usize, index: usize, planner: &mut FftPlanner<f64>) -> Result<Self> {
        let energy: f64 = reference.iter().map(|x| x * x).sum();
        if !(energy > 0.0) {
            return Err(Error::ZeroEnergyReference(index));
        }
        let r = correlate_fft(reference, reference, lags, planner);
        let mut gram = DMatrix::from_fn(lags, lags, |i, j| r[i.abs_diff(j)]);
        let chol = match gram.clone().cholesky() {
            Some(c) => c,
            None => {
                for i in 0..lags {
                    gram[(i, i)] += 1e-10 * r[0];
                }
                gram.cholesky().ok_or(Error::ZeroEnergyReference(index))?
            }
        };
        Ok(Self {
            reference: reference.to_vec(),
            chol,
            lags,
        })
    }

    /// SDR of `estimate` against this reference.
    fn sdr(&self, estimate: &[f64], planner: &mut FftPlanner<f64>) -> f64 {
        let c = DVector::from_vec(correlate_fft(estimate, &self.reference, self.lags, planner));
        let a = self.chol.solve(&c);
        let target = a.dot(&c).max(0.0);
        let total: f64 = estimate.iter().map(|x| x * x).sum();
        let err = total - target;
        sdr_db(target, err)
    }
}

fn sdr_db(target: f64, err: f64) -> f64 {
    if !(target > 0.0) {
        return -SDR_CAP_DB;
    }
    if err <= target * 10f64.powf(-SDR_CAP_DB / 10.0) {
        return SDR_CAP_DB;
    }
    (10.0 * (target / err).log10()).clamp(-SDR_CAP_DB, SDR_CAP_DB)
}

fn check_lengths(estimates: &[Vec<f64>], references: &[Vec<f64>]) -> Result<usize> {
    let len = references.first().map(Vec::len).unwrap_or(0);
    if estimates.is_empty() || references.is_empty() {
        return Err(Error::InvalidArgument("need at least one estimate and reference".into()));
    }
    if estimates.len() != references.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates vs {} references",
            estimates.len(),
            references.len()
        )));
    }
    if estimates.iter().chain(references).any(|x| x.len() != len) {
        return Err(Error::ShapeMismatch("signals differ in length".into()));
    }
    Ok(len)
}

/// Projection SDR with a `filter_len`-tap distortion filter per reference,
/// paired by the permutation with the best mean SDR.
pub fn compute_sdr(estimates: &[Vec<f64>], references: &[Vec<f64>], filter_len: usize) -> Result<SdrResult> {
    check_lengths(estimates, references)?;
    let lags = filter_len.max(1);
    let mut planner = FftPlanner::new();
    let projectors = references
        .iter()
        .enumerate()
        .map(|(i, r)| Projector::new(r, lags, i, &mut planner))
        .collect::<Result<Vec<_>>>()?;
    let matrix: Vec<Vec<f64>> = projectors
        .iter()
        .map(|p| estimates.iter().map(|e| p.sdr(e, &mut planner)).collect())
        .collect();
    let pairing = best_pairing(&matrix);
    let sdr = pairing.iter().enumerate().map(|(i, &j)| matrix[i][j]).collect();
    Ok(SdrResult { sdr, pairing, matrix })
}

/// Exhaustive search over pairings; ties keep the earliest (identity first).
pub fn best_pairing(matrix: &[Vec<f64>]) -> Vec<usize> {
    let n = matrix.len();
    let mut best = (f64::NEG_INFINITY, (0..n).collect::<Vec<_>>());
    for p in permutations(n) {
        let s: f64 = p.iter().enumerate().map(|(i, &j)| matrix[i][j]).sum();
        if s > best.0 {
            best = (s, p);
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdriResult {
    pub sdri: Vec<f64>,
    pub sdr: Vec<f64>,
    pub input_sdr: Vec<f64>,
    pub pairing: Vec<usize>,
}

impl SdriResult {
    pub fn mean(&self) -> f64 {
        self.sdri.iter().sum::<f64>() / self.sdri.len() as f64
    }
}

/// Output SDR minus the SDR of the unprocessed mixture channel, per reference.
pub fn sdri(
    estimates: &[Vec<f64>],
    references: &[Vec<f64>],
    mixture_channel: &[f64],
    filter_len: usize,
) -> Result<SdriResult> {
    let out = compute_sdr(estimates, references, filter_len)?;
    check_lengths(&[mixture_channel.to_vec()], &references[..1])?;
    let lags = filter_len.max(1);
    let mut planner = FftPlanner::new();
    let input_sdr = references
        .iter()
        .enumerate()
        .map(|(i, r)| Ok(Projector::new(r, lags, i, &mut planner)?.sdr(mixture_channel, &mut planner)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(SdriResult {
        sdri: out.sdr.iter().zip(&input_sdr).map(|(a, b)| a - b).collect(),
        sdr: out.sdr,
        input_sdr,
        pairing: out.pairing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p: f64,
    /// Sum of positive ranks.
    pub w_plus: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub zeros_dropped: usize,
    pub exact: bool,
    /// Every difference was zero; `p = 1` by convention.
    pub all_zero: bool,
}

pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Average ranks of `|d|`, doubled so that they are integers.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, times two
        let twice = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            ranks[k] = twice;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test; zeros are dropped.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> WilcoxonResult {
    let nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    let zeros = differences.len() - nonzero.len();
    let n = nonzero.len();
    if n == 0 {
        return WilcoxonResult {
            p: 1.0,
            w_plus: 0.0,
            n: 0,
            zeros_dropped: zeros,
            exact: true,
            all_zero: true,
        };
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = ranks.iter().zip(&nonzero).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let w_plus = w2 as f64 / 2.0;
    if n <= WILCOXON_EXACT_MAX_N {
        let total: u64 = ranks.iter().sum();
        let mut counts = vec![0f64; total as usize + 1];
        counts[0] = 1.0;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = 2f64.powi(n as i32);
        let w2 = w2 as usize;
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
        return WilcoxonResult {
            p: (2.0 * lower.min(upper)).min(1.0),
            w_plus,
            n,
            zeros_dropped: zeros,
            exact: true,
            all_zero: false,
        };
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    // tie correction
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    WilcoxonResult {
        p: erfc(z / std::f64::consts::SQRT_2).min(1.0),
        w_plus,
        n,
        zeros_dropped: zeros,
        exact: false,
        all_zero: false,
    }
}

/// Step-down Holm adjustment, returned in input order.
pub fn holm_correction(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in idx.iter().enumerate() {
        let adj = ((m - rank) as f64 * p[i]).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    out
}

mod sentinel {
    //! Serializes non-finite floats as the strings "inf", "-inf", "nan".
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedStats {
    pub n: usize,
    pub delta_mean: f64,
    pub se: f64,
    pub p_raw: f64,
    pub p_holm: f64,
    /// `delta_mean / sd`; `+-inf` (or 0 when `delta_mean = 0`) if the differences have zero spread.
    #[serde(with = "sentinel")]
    pub d_z: f64,
    pub d_z_degenerate: bool,
    pub wilcoxon_exact: bool,
    pub zeros_dropped: usize,
}

/// Paired statistics of `a - b`; Holm-adjusted p equals the raw p for a single comparison.
pub fn paired_stats(a: &[f64], b: &[f64]) -> Result<PairedStats> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} paired samples", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let degenerate = sd <= 1e-12 * mean.abs().max(1e-300) || sd == 0.0;
    let d_z = if !degenerate {
        mean / sd
    } else if mean == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(mean)
    };
    let w = wilcoxon_signed_rank(&d);
    Ok(PairedStats {
        n,
        delta_mean: mean,
        se: if degenerate { 0.0 } else { sd / nf.sqrt() },
        p_raw: w.p,
        p_holm: w.p,
        d_z,
        d_z_degenerate: degenerate,
        wilcoxon_exact: w.exact,
        zeros_dropped: w.zeros_dropped,
    })
}

/// Acoustic condition label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub m: usize,
    pub n: usize,
    pub rt60: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub condition: Condition,
    pub mean_a: f64,
    pub mean_b: f64,
    pub stats: PairedStats,
}

/// Paired statistics per condition with Holm correction across conditions.
pub fn paired_report(conditions: &[(Condition, Vec<f64>, Vec<f64>)]) -> Result<Vec<ConditionStats>> {
    let mut out = conditions
        .iter()
        .map(|(c, a, b)| {
            Ok(ConditionStats {
                condition: *c,
                mean_a: a.iter().sum::<f64>() / a.len() as f64,
                mean_b: b.iter().sum::<f64>() / b.len() as f64,
                stats: paired_stats(a, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<f64> = out.iter().map(|c| c.stats.p_raw).collect();
    for (c, p) in out.iter_mut().zip(holm_correction(&raw)) {
        c.stats.p_holm = p;
    }
    Ok(out)
}

/// One row of the condition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "RT60")]
    pub rt60: f64,
    pub system_a: String,
    pub mean_sdri_a: f64,
    pub system_b: String,
    pub mean_sdri_b: f64,
    pub delta: f64,
    pub se: f64,
    pub p_raw: f64,
    pub p_holm: f64,
    pub d_z: f64,
    pub n_pairs: usize,
}

impl ConditionRow {
    pub fn new(stats: &ConditionStats, system_a: &str, system_b: &str) -> Self {
        Self {
            m: stats.condition.m,
            n: stats.condition.n,
            rt60: stats.condition.rt60,
            system_a: system_a.into(),
            mean_sdri_a: stats.mean_a,
            system_b: system_b.into(),
            mean_sdri_b: stats.mean_b,
            delta: stats.stats.delta_mean,
            se: stats.stats.se,
            p_raw: stats.stats.p_raw,
            p_holm: stats.stats.p_holm,
            d_z: stats.stats.d_z,
            n_pairs: stats.stats.n,
        }
    }
}

/// Per-mixture, per-source metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRow {
    pub mixture: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "RT60")]
    pub rt60: f64,
    pub system: String,
    pub source: usize,
    pub sdr: f64,
    pub input_sdr: f64,
    pub sdri: f64,
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::InvalidArgument(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    /// Least squares over explicitly built delayed copies.
    fn brute_sdr(est: &[f64], reference: &[f64], lags: usize) -> f64 {
        let rows = est.len() + lags - 1;
        let a = DMatrix::from_fn(rows, lags, |t, k| if t >= k && t - k < reference.len() { reference[t - k] } else { 0.0 });
        let mut y = DVector::zeros(rows);
        for (i, v) in est.iter().enumerate() {
            y[i] = *v;
        }
        let coef = a.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        let target = &a * coef;
        let err = &y - &target;
        10.0 * (target.norm_squared() / err.norm_squared()).log10()
    }

    #[test]
    fn perfect_estimate_is_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = noise(&mut rng, 2000);
        let r = compute_sdr(&[s.clone()], &[s], 16).unwrap();
        assert_eq!(r.sdr, vec![SDR_CAP_DB]);
    }

    #[test]
    fn white_noise_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = noise(&mut rng, 100_000);
        let e: Vec<f64> = noise(&mut rng, 100_000).iter().zip(&s).map(|(n, x)| x + 0.1 * n).collect();
        let r = compute_sdr(&[e.clone()], &[s.clone()], 1).unwrap();
        assert!((r.sdr[0] - 20.0).abs() < 0.1, "{}", r.sdr[0]);
        // scale invariance with a single tap
        let half: Vec<f64> = e.iter().map(|x| 0.5 * x).collect();
        let r2 = compute_sdr(&[half], &[s], 1).unwrap();
        assert_relative_eq!(r.sdr[0], r2.sdr[0], max_relative = 1e-12);
    }

    #[test]
    fn projection_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for lags in [1, 4, 32] {
            let s = noise(&mut rng, 600);
            let other = noise(&mut rng, 600);
            // filtered reference plus interference
            let est: Vec<f64> = (0..600)
                .map(|t| s[t] + if t >= 2 { 0.5 * s[t - 2] } else { 0.0 } + 0.3 * other[t])
                .collect();
            let fast = compute_sdr(&[est.clone()], &[s.clone()], lags).unwrap().sdr[0];
            let slow = brute_sdr(&est, &s, lags);
            assert!((fast - slow).abs() < 1e-6, "lags {lags}: {fast} vs {slow}");
        }
    }

    #[test]
    fn two_source_sdri_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s1 = noise(&mut rng, 800);
        let s2 = noise(&mut rng, 800);
        let mix: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
        let e1: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + 0.1 * b).collect();
        let e2: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| 0.2 * a + b).collect();
        // estimates given in swapped order
        let r = sdri(&[e2.clone(), e1.clone()], &[s1.clone(), s2.clone()], &mix, 8).unwrap();
        assert_eq!(r.pairing, vec![1, 0]);
        let expect1 = brute_sdr(&e1, &s1, 8) - brute_sdr(&mix, &s1, 8);
        let expect2 = brute_sdr(&e2, &s2, 8) - brute_sdr(&mix, &s2, 8);
        assert!((r.sdri[0] - expect1).abs() < 1e-6);
        assert!((r.sdri[1] - expect2).abs() < 1e-6);
        // mixture as estimate -> zero improvement
        let z = sdri(&[mix.clone(), mix.clone()], &[s1.clone(), s2.clone()], &mix, 8).unwrap();
        assert!(z.sdri.iter().all(|x| x.abs() < 1e-9));
        // perfect estimates -> cap minus input SDR
        let p = sdri(&[s1.clone(), s2.clone()], &[s1.clone(), s2.clone()], &mix, 8).unwrap();
        assert_relative_eq!(p.sdri[0], SDR_CAP_DB - p.input_sdr[0]);
        assert!(matches!(
            compute_sdr(&[s1.clone()], &[vec![0.0; 800]], 8),
            Err(Error::ZeroEnergyReference(0))
        ));
    }

    #[test]
    fn pairing_is_exhaustive_best() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=4 {
            let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random::<f64>() * 20.0).collect()).collect();
            let p = best_pairing(&m);
            let score = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| m[i][j]).sum::<f64>();
            let best = permutations(n).iter().map(|q| score(q)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(score(&p), best);
        }
    }

    /// Direct enumeration of all 2^n sign patterns.
    fn brute_wilcoxon(d: &[f64]) -> f64 {
        let nz: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
        let ranks = doubled_ranks(&nz.iter().map(|x| x.abs()).collect::<Vec<_>>());
        let w: u64 = ranks.iter().zip(&nz).filter(|(_, x)| **x > 0.0).map(|(r, _)| r).sum();
        let n = nz.len();
        let (mut lo, mut hi) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let s: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s <= w {
                lo += 1;
            }
            if s >= w {
                hi += 1;
            }
        }
        let all = 2f64.powi(n as i32);
        (2.0 * (lo as f64 / all).min(hi as f64 / all)).min(1.0)
    }

    #[test]
    fn wilcoxon_examples() {
        assert_eq!(wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0]).p, 0.0625);
        assert_eq!(wilcoxon_signed_rank(&[-1.0, 1.0]).p, 1.0);
        let z = wilcoxon_signed_rank(&[0.0, 0.0]);
        assert!(z.all_zero && z.p == 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let n = rng.random_range(1..=12);
            // rounded values create ties and zeros
            let d: Vec<f64> = (0..n).map(|_| ((rng.random::<f64>() - 0.4) * 6.0).round() / 2.0).collect();
            if d.iter().all(|x| *x == 0.0) {
                continue;
            }
            assert_eq!(wilcoxon_signed_rank(&d).p, brute_wilcoxon(&d), "{d:?}");
        }
    }

    #[test]
    fn wilcoxon_normal_branch_is_close_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d: Vec<f64> = (0..25).map(|_| rng.random::<f64>() - 0.3).collect();
        let exact = wilcoxon_signed_rank(&d);
        let d26: Vec<f64> = d.iter().copied().chain([0.01]).collect();
        let approx = wilcoxon_signed_rank(&d26);
        assert!(exact.exact && !approx.exact);
        assert!((exact.p - approx.p).abs() < 0.05, "{} {}", exact.p, approx.p);
    }

    #[test]
    fn holm_examples() {
        assert_eq!(holm_correction(&[0.03]), vec![0.03]);
        assert_eq!(holm_correction(&[0.01, 0.04]), vec![0.02, 0.04]);
        assert_eq!(holm_correction(&[1.0, 1.0, 1.0]), vec![1.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 0.2).collect();
        let adj = holm_correction(&p);
        for i in 0..9 {
            assert!(adj[i] >= p[i]);
            for j in 0..9 {
                if p[i] < p[j] {
                    assert!(adj[i] <= adj[j]);
                }
            }
        }
    }

    #[test]
    fn paired_stats_edges_and_dual_path() {
        let a = [1.0, 2.0, 3.0];
        let s = paired_stats(&a, &a).unwrap();
        assert_eq!((s.delta_mean, s.d_z, s.p_raw), (0.0, 0.0, 1.0));
        let s = paired_stats(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((s.delta_mean, s.se), (1.0, 0.0));
        assert!(s.d_z.is_infinite() && s.d_z_degenerate);
        assert!(paired_stats(&[1.0], &[0.0]).is_err());

        // second path: Welford running moments
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 3.0).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 3.0 - 0.2).collect();
        let s = paired_stats(&x, &y).unwrap();
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, (a, b)) in x.iter().zip(&y).enumerate() {
            let d = a - b;
            let delta = d - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (d - mean);
        }
        let sd = (m2 / 39.0).sqrt();
        assert!((s.delta_mean - mean).abs() < 1e-10);
        assert!((s.se - sd / 40f64.sqrt()).abs() < 1e-10);
        assert!((s.d_z - mean / sd).abs() < 1e-10);
    }

    #[test]
    fn report_applies_holm_and_serializes_sentinels() {
        let c = |m| Condition { m, n: 2, rt60: 0.2 };
        let rep = paired_report(&[
            (c(3), vec![2.0, 3.0, 4.0, 5.0, 6.0], vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            (c(4), vec![1.0, 2.0, 1.0, 4.0, 2.0], vec![1.5, 1.0, 0.0, 3.0, 1.0]),
        ])
        .unwrap();
        let raw: Vec<f64> = rep.iter().map(|r| r.stats.p_raw).collect();
        let holm = holm_correction(&raw);
        assert_eq!(rep[0].stats.p_holm, holm[0]);
        let js = serde_json::to_string(&rep[0].stats).unwrap();
        assert!(js.contains("\"d_z\":\"inf\""), "{js}");
        let back: PairedStats = serde_json::from_str(&js).unwrap();
        assert!(back.d_z.is_infinite());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &rep.iter().map(|r| ConditionRow::new(r, "nu=1", "nu=M")).collect::<Vec<_>>()).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("M,N,RT60,system_a"));
        assert!(text.contains("inf"));
    }
}
