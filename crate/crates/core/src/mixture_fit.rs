//! Per-frequency mixture fitting: E-step, tangent-bound auxiliaries,
//! weighted scatter, component updates and k-means initialization.

use crate::dirstats::{
    bingham_moments, log_normalizer, squared_cosine, watson_tangent_moments, CanonicalHermitian,
    CstParams, Nu, RankOneParams, Shape, UnitSphereVector,
};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::signal_io::FrequencyData;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Upper bound on concentrations (rank-one `kappa`, and `-lambda_j` for full shapes).
pub const KAPPA_MAX: f64 = 1e8;
/// Relative diagonal loading applied to scatters before eigen-decomposition.
pub const SCATTER_DELTA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    #[default]
    Full,
    RankOne,
}

/// How eigenvalues / concentrations are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EigenUpdate {
    /// Exact where available (closed form at `nu = M`, exact Bingham/Watson
    /// minorizer at `nu = inf`), high-concentration approximation otherwise.
    #[default]
    Auto,
    /// Always the high-concentration approximation, including `nu = inf`.
    Hca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_sources: usize,
    pub nu: Nu,
    pub shape: ShapeKind,
    pub max_outer_iters: usize,
    pub kmeans_attempts: usize,
    pub warmstart_iters: usize,
    /// Silence gate; `None` uses the recording-relative default.
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub eigen_update: EigenUpdate,
    /// Stop once the relative log-likelihood change stays below 1e-10 for 3 iterations.
    pub early_stop: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_sources: 2,
            nu: Nu::Finite(3.0),
            shape: ShapeKind::Full,
            max_outer_iters: 20,
            kmeans_attempts: 4,
            warmstart_iters: 5,
            epsilon: None,
            seed: 0,
            eigen_update: EigenUpdate::Auto,
            early_stop: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 {
            return Err(Error::InvalidArgument("n_sources must be >= 1".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidArgument("max_outer_iters must be >= 1".into()));
        }
        if self.kmeans_attempts == 0 {
            return Err(Error::InvalidArgument("kmeans_attempts must be >= 1".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {e}")));
            }
        }
        Ok(())
    }
}

/// Soft masks of one frequency, `frames x N`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    gamma: Vec<f64>,
    n: usize,
}

impl Responsibilities {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("ragged responsibility rows".into()));
        }
        Ok(Self {
            gamma: rows.into_iter().flatten().collect(),
            n,
        })
    }

    pub fn uniform(frames: usize, n: usize) -> Self {
        Self {
            gamma: vec![1.0 / n as f64; frames * n],
            n,
        }
    }

    pub fn one_hot(labels: &[usize], n: usize) -> Self {
        let mut gamma = vec![0.0; labels.len() * n];
        for (t, &l) in labels.iter().enumerate() {
            gamma[t * n + l] = 1.0;
        }
        Self { gamma, n }
    }

    pub fn frames(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.gamma.len() / self.n
        }
    }

    pub fn n_sources(&self) -> usize {
        self.n
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.gamma[t * self.n..(t + 1) * self.n]
    }

    pub fn get(&self, t: usize, n: usize) -> f64 {
        self.gamma[t * self.n + n]
    }

    /// Column `n` across frames.
    pub fn column(&self, n: usize) -> Vec<f64> {
        (0..self.frames()).map(|t| self.get(t, n)).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.gamma
            .iter()
            .zip(&other.gamma)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedScatter {
    pub s: CMatrix,
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    /// No valid frames.
    Skipped,
    /// A numerical failure; masks were set uniform.
    Failed,
}

#[derive(Debug, Clone)]
pub struct MixtureState {
    pub weights: Vec<f64>,
    pub components: Vec<CstParams>,
    pub loglik_trace: Vec<f64>,
}

impl MixtureState {
    pub fn uniform(n: usize, m: usize, nu: Nu) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
            components: vec![CstParams::uniform(m, nu); n],
            loglik_trace: Vec::new(),
        }
    }

    pub fn n_sources(&self) -> usize {
        self.weights.len()
    }
}

/// Result of fitting one frequency.
#[derive(Debug, Clone)]
pub struct FrequencyFit {
    pub state: MixtureState,
    /// Posterior masks under the final parameters.
    pub masks: Responsibilities,
    pub status: FitStatus,
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let top = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + x.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// `log w_n + log C_n + log p~_n(z)` for every frame and component.
fn joint_log(data: &FrequencyData, state: &MixtureState) -> Result<Vec<Vec<f64>>> {
    let log_c: Vec<f64> = state
        .components
        .iter()
        .map(|c| log_normalizer(c).map(|l| l.value))
        .collect::<Result<_>>()?;
    Ok(data
        .iter()
        .map(|z| {
            state
                .components
                .iter()
                .zip(&state.weights)
                .zip(&log_c)
                .map(|((c, &w), &lc)| w.ln() + lc + crate::dirstats::log_unnormalized_density(z, c))
                .collect()
        })
        .collect())
}

fn masks_from_joint(joint: &[Vec<f64>]) -> Result<Responsibilities> {
    let rows = joint
        .iter()
        .map(|row| {
            let lse = log_sum_exp(row);
            row.iter().map(|v| (v - lse).exp()).collect()
        })
        .collect();
    Responsibilities::from_rows(rows)
}

/// E-step in the log domain.
pub fn posterior_masks(data: &FrequencyData, state: &MixtureState) -> Result<Responsibilities> {
    masks_from_joint(&joint_log(data, state)?)
}

pub fn log_likelihood(data: &FrequencyData, state: &MixtureState) -> Result<f64> {
    Ok(joint_log(data, state)?.iter().map(|r| log_sum_exp(r)).sum())
}

/// Tangent point `phi = (2/nu) z^H A z`; zero in the limit `nu = inf`.
pub fn update_phi(z: &[Complex64], component: &CstParams) -> f64 {
    match component.nu {
        Nu::Finite(v) => 2.0 * component.shape.quadratic(z) / v,
        Nu::Infinite => 0.0,
    }
}

/// Mean responsibilities; returns uniform weights and `true` when there are no frames.
pub fn update_weights(gamma: &Responsibilities) -> (Vec<f64>, bool) {
    let n = gamma.n_sources();
    let t = gamma.frames();
    if t == 0 {
        return (vec![1.0 / n as f64; n], true);
    }
    let mut w = vec![0.0; n];
    for i in 0..t {
        for (acc, g) in w.iter_mut().zip(gamma.row(i)) {
            *acc += g;
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    (w, false)
}

/// `S = ((nu+M)/nu) sum_t gamma_t / (1 - phi_t) z z^H`, `G = sum_t gamma_t`.
pub fn weighted_scatter(data: &FrequencyData, gamma_n: &[f64], phi_n: &[f64], nu: Nu) -> WeightedScatter {
    let m = data.dim();
    let lead = match nu {
        Nu::Finite(v) => (v + m as f64) / v,
        Nu::Infinite => 1.0,
    };
    let mut s = CMatrix::zeros(m, m);
    let mut g = 0.0;
    for ((z, &gm), &phi) in data.iter().zip(gamma_n).zip(phi_n) {
        if gm == 0.0 {
            continue;
        }
        g += gm;
        linalg::add_outer(&mut s, z, lead * gm / (1.0 - phi));
    }
    WeightedScatter { s, g }
}

fn regularized_eigen(scatter: &WeightedScatter) -> Result<linalg::HermitianEigen> {
    let m = scatter.s.nrows();
    let tr = linalg::trace_re(&scatter.s);
    if !(tr > 0.0) || !tr.is_finite() || !(scatter.g > 0.0) {
        return Err(Error::DegenerateScatter(format!("trace {tr}, G {}", scatter.g)));
    }
    let mut s = scatter.s.clone();
    let load = SCATTER_DELTA * tr / m as f64;
    for i in 0..m {
        s[(i, i)] += Complex64::new(load, 0.0);
    }
    let eig = linalg::hermitian_eigen(&s);
    if eig.values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateScatter(format!(
            "non-positive eigenvalues {:?} after loading",
            eig.values
        )));
    }
    Ok(eig)
}

fn monotone(mut l: Vec<f64>) -> Vec<f64> {
    l[0] = 0.0;
    for j in 1..l.len() {
        l[j] = l[j].min(l[j - 1]).min(0.0);
    }
    l
}

/// High-concentration update `lambda_j = -G / sigma_j`.
pub fn update_full_component(scatter: &WeightedScatter) -> Result<CanonicalHermitian> {
    let eig = regularized_eigen(scatter)?;
    let l = eig
        .values
        .iter()
        .enumerate()
        .map(|(j, s)| if j == 0 { 0.0 } else { (-scatter.g / s).max(-KAPPA_MAX) })
        .collect();
    CanonicalHermitian::from_parts(eig.vectors, monotone(l))
}

/// Exact minorizer maximizer at `nu = M`, where the normalizer is
/// `det(I - 2A/M)`: `lambda_j = (M/2) (1 - sigma_1 / sigma_j)`.
pub fn update_full_component_cacg(scatter: &WeightedScatter) -> Result<CanonicalHermitian> {
    let eig = regularized_eigen(scatter)?;
    let m = eig.values.len() as f64;
    let s1 = eig.values[0];
    let l = eig
        .values
        .iter()
        .map(|s| 0.5 * m * (1.0 - s1 / s))
        .collect();
    // No clamp: scatter loading already bounds sigma_1 / sigma_j by ~M / delta.
    CanonicalHermitian::from_parts(eig.vectors, monotone(l))
}

/// `kappa = G (M-1) / (tr S - sigma_1)`, clamped to [`KAPPA_MAX`].
pub fn update_rank_one_component(scatter: &WeightedScatter) -> Result<RankOneParams> {
    let eig = regularized_eigen(scatter)?;
    let m = eig.values.len();
    let a = UnitSphereVector::normalized(eig.vectors.column(0).iter().copied().collect())?;
    if m == 1 {
        return RankOneParams::new(a, 0.0);
    }
    let tail: f64 = eig.values[1..].iter().sum();
    let kappa = (scatter.g * (m as f64 - 1.0) / tail).min(KAPPA_MAX);
    RankOneParams::new(a, kappa)
}

/// Bingham update: eigenvalues maximize `sum_j lambda_j sigma_j + G log C(lambda)`,
/// i.e. solve `E_lambda[r_j] = sigma_j / G`, starting from the HCA point.
pub fn update_bingham_component(scatter: &WeightedScatter) -> Result<CanonicalHermitian> {
    let eig = regularized_eigen(scatter)?;
    let m = eig.values.len();
    let total: f64 = eig.values.iter().sum();
    let target: Vec<f64> = eig.values.iter().map(|s| s / total).collect();
    let mut lam: Vec<f64> = eig
        .values
        .iter()
        .enumerate()
        .map(|(j, s)| if j == 0 { 0.0 } else { (-total / s).max(-KAPPA_MAX) })
        .collect();
    if m > 1 {
        lam = bingham_moment_match(&target, lam)?;
    }
    CanonicalHermitian::from_parts(eig.vectors, monotone(lam))
}

fn bingham_objective(target: &[f64], lam: &[f64]) -> Result<f64> {
    let log_z = crate::dirstats::log_normalizer_full(
        &CanonicalHermitian::diagonal(monotone(lam.to_vec()))?,
        Nu::Infinite,
        Default::default(),
        1e-12,
    )?
    .value;
    Ok(target.iter().zip(lam).map(|(t, l)| t * l).sum::<f64>() + log_z)
}

/// Damped Newton on the concave moment-matching objective over `lambda_2..M`.
fn bingham_moment_match(target: &[f64], mut lam: Vec<f64>) -> Result<Vec<f64>> {
    let m = lam.len();
    let mut f = bingham_objective(target, &lam)?;
    for _ in 0..100 {
        let (mean, cov) = bingham_moments(&lam)?;
        let free: Vec<usize> = (1..m)
            .filter(|&j| !(lam[j] <= -KAPPA_MAX && target[j] < mean[j]))
            .collect();
        let grad: Vec<f64> = (1..m).map(|j| target[j] - mean[j]).collect();
        let converged = free
            .iter()
            .all(|&j| grad[j - 1].abs() <= 1e-12 * target[j].max(1e-300) || grad[j - 1] == 0.0);
        if converged || free.is_empty() {
            break;
        }
        // Jacobi-scaled covariance solve for the free coordinates.
        let d: Vec<f64> = free.iter().map(|&j| cov[j][j].max(1e-300).sqrt()).collect();
        let h = DMatrix::from_fn(free.len(), free.len(), |a, b| {
            cov[free[a]][free[b]] / (d[a] * d[b])
        });
        let rhs = nalgebra::DVector::from_fn(free.len(), |a, _| grad[free[a] - 1] / d[a]);
        let step: Vec<f64> = match h.clone().cholesky() {
            Some(ch) => ch.solve(&rhs).iter().zip(&d).map(|(x, s)| x / s).collect(),
            None => rhs.iter().zip(&d).map(|(x, s)| x / s).collect(),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = lam.clone();
            for (a, &j) in free.iter().enumerate() {
                trial[j] = (lam[j] + t * step[a]).clamp(-KAPPA_MAX, 0.0);
            }
            let ft = bingham_objective(target, &trial)?;
            if ft >= f - 1e-15 * f.abs() {
                let moved = trial.iter().zip(&lam).any(|(a, b)| a != b);
                lam = trial;
                f = ft;
                accepted = moved;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(lam)
}

/// Watson update: `a` is the principal eigenvector and `kappa` solves
/// `E_kappa[1 - |a^H z|^2] = (tr S - sigma_1) / G`.
pub fn update_watson_component(scatter: &WeightedScatter) -> Result<RankOneParams> {
    let eig = regularized_eigen(scatter)?;
    let m = eig.values.len();
    let a = UnitSphereVector::normalized(eig.vectors.column(0).iter().copied().collect())?;
    if m == 1 {
        return RankOneParams::new(a, 0.0);
    }
    let total: f64 = eig.values.iter().sum();
    let target = eig.values[1..].iter().sum::<f64>() / total;
    let mf = m as f64;
    if target >= (mf - 1.0) / mf {
        return RankOneParams::new(a, 0.0);
    }
    // Newton in log kappa with a bisection bracket; E[u] decreases in kappa.
    let g = |t: f64| -> Result<(f64, f64)> {
        let k = t.exp();
        let (mean, var) = watson_tangent_moments(k, m)?;
        Ok((mean - target, -k * var))
    };
    let mut t = ((mf - 1.0) / target).min(KAPPA_MAX).ln();
    let (mut lo, mut hi) = (-40.0f64, KAPPA_MAX.ln());
    let (ghi, _) = g(hi)?;
    if ghi >= 0.0 {
        return RankOneParams::new(a, KAPPA_MAX);
    }
    for _ in 0..200 {
        let (val, der) = g(t)?;
        if val > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if val.abs() <= 1e-13 * target || hi - lo < 1e-14 {
            break;
        }
        let newton = t - val / der;
        t = if der < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    RankOneParams::new(a, t.exp().min(KAPPA_MAX))
}

/// High-concentration surrogate of the full eigenvalue objective.
pub fn hca_surrogate_full(lambda: &[f64], sigma: &[f64], g: f64) -> f64 {
    lambda[1..]
        .iter()
        .zip(&sigma[1..])
        .map(|(l, s)| g * (-l).ln() + l * s)
        .sum()
}

/// High-concentration surrogate of the rank-one objective.
pub fn hca_surrogate_rank_one(kappa: f64, sigma: &[f64], g: f64) -> f64 {
    let m = sigma.len() as f64;
    g * (m - 1.0) * kappa.ln() - kappa * sigma[1..].iter().sum::<f64>()
}

fn update_component(
    scatter: &WeightedScatter,
    config: &FitConfig,
    m: usize,
    previous: &CstParams,
) -> Result<CstParams> {
    if !(scatter.g > 1e-12) {
        // Empty component: keep its parameters.
        return Ok(previous.clone());
    }
    let shape = match (config.shape, config.nu) {
        (ShapeKind::Full, Nu::Infinite) if config.eigen_update == EigenUpdate::Auto => {
            Shape::Full(update_bingham_component(scatter)?)
        }
        (ShapeKind::Full, Nu::Infinite) => Shape::Full(update_full_component(scatter)?),
        (ShapeKind::Full, Nu::Finite(v)) => {
            if config.eigen_update == EigenUpdate::Auto && v == m as f64 {
                Shape::Full(update_full_component_cacg(scatter)?)
            } else {
                Shape::Full(update_full_component(scatter)?)
            }
        }
        (ShapeKind::RankOne, Nu::Infinite) if config.eigen_update == EigenUpdate::Auto => {
            Shape::RankOne(update_watson_component(scatter)?)
        }
        (ShapeKind::RankOne, Nu::Infinite) => Shape::RankOne(update_rank_one_component(scatter)?),
        (ShapeKind::RankOne, Nu::Finite(_)) => Shape::RankOne(update_rank_one_component(scatter)?),
    };
    Ok(CstParams { shape, nu: config.nu })
}

/// One M-step given responsibilities: `phi`, weights, scatters, components.
fn m_step(
    data: &FrequencyData,
    gamma: &Responsibilities,
    state: &mut MixtureState,
    config: &FitConfig,
) -> Result<()> {
    let m = data.dim();
    let (w, _) = update_weights(gamma);
    let mut next = Vec::with_capacity(state.n_sources());
    for (n, comp) in state.components.iter().enumerate() {
        let phi: Vec<f64> = data.iter().map(|z| update_phi(z, comp)).collect();
        let sc = weighted_scatter(data, &gamma.column(n), &phi, config.nu);
        next.push(update_component(&sc, config, m, comp)?);
    }
    state.weights = w;
    state.components = next;
    Ok(())
}

/// Spherical k-means on the projective space with dissimilarity `1 - |c^H z|^2`.
pub fn kmeans_init<R: Rng + ?Sized>(
    data: &FrequencyData,
    n: usize,
    attempts: usize,
    rng: &mut R,
) -> Responsibilities {
    let t = data.len();
    if t < n {
        log::warn!("only {t} valid frames for {n} sources; using random hard masks");
        let labels: Vec<usize> = (0..t).map(|_| rng.random_range(0..n)).collect();
        return Responsibilities::one_hot(&labels, n);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..attempts.max(1) {
        let (cost, labels) = kmeans_once(data, n, rng);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, labels));
        }
    }
    Responsibilities::one_hot(&best.expect("at least one attempt").1, n)
}

fn kmeans_once<R: Rng + ?Sized>(data: &FrequencyData, n: usize, rng: &mut R) -> (f64, Vec<usize>) {
    let t = data.len();
    let dist = |c: &[Complex64], z: &[Complex64]| (1.0 - squared_cosine(c, z)).max(0.0);
    // k-means++ seeding
    let mut centroids: Vec<Vec<Complex64>> = vec![data.obs(rng.random_range(0..t)).to_vec()];
    while centroids.len() < n {
        let d: Vec<f64> = data
            .iter()
            .map(|z| centroids.iter().map(|c| dist(c, z)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut k = t - 1;
            for (i, di) in d.iter().enumerate() {
                if u < *di {
                    k = i;
                    break;
                }
                u -= di;
            }
            k
        } else {
            rng.random_range(0..t)
        };
        centroids.push(data.obs(pick).to_vec());
    }
    let mut labels = vec![usize::MAX; t];
    let mut cost = f64::INFINITY;
    for _ in 0..100 {
        let mut changed = false;
        cost = 0.0;
        for (i, z) in data.iter().enumerate() {
            let (k, d) = centroids
                .iter()
                .map(|c| dist(c, z))
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (k, d)| if d < acc.1 { (k, d) } else { acc });
            cost += d;
            if labels[i] != k {
                labels[i] = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        // Re-seed empty clusters with the worst-fitting observation.
        for k in 0..n {
            if labels.contains(&k) {
                continue;
            }
            let far = (0..t)
                .max_by(|&a, &b| {
                    let da = dist(&centroids[labels[a]], data.obs(a));
                    let db = dist(&centroids[labels[b]], data.obs(b));
                    da.total_cmp(&db)
                })
                .unwrap_or(0);
            labels[far] = k;
        }
        let m = data.dim();
        for (k, c) in centroids.iter_mut().enumerate() {
            let mut s = CMatrix::zeros(m, m);
            let mut count = 0;
            for (i, z) in data.iter().enumerate() {
                if labels[i] == k {
                    linalg::add_outer(&mut s, z, 1.0);
                    count += 1;
                }
            }
            if count > 0 {
                *c = linalg::hermitian_eigen(&s).vectors.column(0).iter().copied().collect();
            }
        }
    }
    (cost, labels)
}

/// Full per-frequency fit. Returns uniform masks with a status flag when
/// the frequency has no valid frames or a numerical failure occurs.
pub fn fit_frequency<R: Rng + ?Sized>(
    data: &FrequencyData,
    config: &FitConfig,
    rng: &mut R,
) -> Result<FrequencyFit> {
    config.validate()?;
    let n = config.n_sources;
    let m = data.dim().max(1);
    if data.is_empty() {
        return Ok(FrequencyFit {
            state: MixtureState::uniform(n, m, config.nu),
            masks: Responsibilities::uniform(0, n),
            status: FitStatus::Skipped,
        });
    }
    let init = kmeans_init(data, n, config.kmeans_attempts, rng);
    match fit_from_init(data, config, &init) {
        Ok(fit) => Ok(fit),
        Err(e) => {
            log::warn!("frequency fit failed: {e}");
            Ok(FrequencyFit {
                state: MixtureState::uniform(n, m, config.nu),
                masks: Responsibilities::uniform(data.len(), n),
                status: FitStatus::Failed,
            })
        }
    }
}

/// Warm start with frozen `init` masks followed by the outer EM loop.
pub fn fit_from_init(
    data: &FrequencyData,
    config: &FitConfig,
    init: &Responsibilities,
) -> Result<FrequencyFit> {
    let n = init.n_sources();
    let mut state = MixtureState::uniform(n, data.dim(), config.nu);
    for _ in 0..config.warmstart_iters {
        m_step(data, init, &mut state, config)?;
    }
    // The E-step of each iteration yields the log-likelihood of the previous
    // M-step, so the normalizers are evaluated once per iteration.
    let mut quiet = 0;
    let mut joint = joint_log(data, &state)?;
    for _ in 0..config.max_outer_iters {
        let gamma = masks_from_joint(&joint)?;
        m_step(data, &gamma, &mut state, config)?;
        joint = joint_log(data, &state)?;
        let ll: f64 = joint.iter().map(|r| log_sum_exp(r)).sum();
        if !ll.is_finite() {
            return Err(Error::Normalizer(format!("non-finite log-likelihood {ll}")));
        }
        if let Some(prev) = state.loglik_trace.last() {
            if ((ll - prev) / prev.abs().max(1e-300)).abs() < 1e-10 {
                quiet += 1;
            } else {
                quiet = 0;
            }
        }
        state.loglik_trace.push(ll);
        if config.early_stop && quiet >= 3 {
            break;
        }
    }
    let masks = masks_from_joint(&joint)?;
    Ok(FrequencyFit {
        state,
        masks,
        status: FitStatus::Ok,
    })
}

/// Output of [`cacg_reference_fit`].
#[derive(Debug, Clone)]
pub struct CacgFit {
    pub weights: Vec<f64>,
    /// Trace-normalized spatial matrices.
    pub p: Vec<CMatrix>,
    pub masks: Responsibilities,
}

/// Standard cACGMM EM written directly in terms of `P`:
/// `P <- M sum_t gamma_t z z^H / (z^H P^{-1} z) / sum_t gamma_t`, and
/// `p(z) = det(P)^{-1} (z^H P^{-1} z)^{-M}`. The first `warmstart_iters`
/// iterations keep `init` fixed, mirroring [`fit_from_init`].
pub fn cacg_reference_fit(
    data: &FrequencyData,
    n: usize,
    iters: usize,
    init: &Responsibilities,
    warmstart_iters: usize,
) -> Result<CacgFit> {
    let m = data.dim();
    let mut p: Vec<CMatrix> = vec![CMatrix::identity(m, m); n];
    let mut weights = vec![1.0 / n as f64; n];
    let mut gamma = init.clone();
    for it in 0..warmstart_iters + iters {
        if it >= warmstart_iters {
            gamma = cacg_posterior(data, &weights, &p)?;
        }
        let mut next = Vec::with_capacity(n);
        for (k, pk) in p.iter().enumerate() {
            let inv = cacg_inverse(pk)?;
            let mut acc = CMatrix::zeros(m, m);
            let mut g = 0.0;
            for (t, z) in data.iter().enumerate() {
                let gm = gamma.get(t, k);
                if gm == 0.0 {
                    continue;
                }
                g += gm;
                linalg::add_outer(&mut acc, z, gm / linalg::quadratic_form(&inv, z));
            }
            if !(g > 1e-12) {
                next.push(pk.clone());
                continue;
            }
            acc *= Complex64::new(m as f64 / g, 0.0);
            let tr = linalg::trace_re(&acc);
            acc /= Complex64::new(tr, 0.0);
            next.push(linalg::hermitian_part(&acc));
        }
        p = next;
        let frames = gamma.frames() as f64;
        weights = (0..n)
            .map(|k| (0..gamma.frames()).map(|t| gamma.get(t, k)).sum::<f64>() / frames)
            .collect();
    }
    let masks = cacg_posterior(data, &weights, &p)?;
    Ok(CacgFit { weights, p, masks })
}

/// Cholesky inverse of `P` loaded by the same trace-relative `SCATTER_DELTA`
/// as the cSTMM scatter; a still-singular `P` gets the `1e-10 tr(P)/M` ridge.
fn cacg_inverse(p: &CMatrix) -> Result<CMatrix> {
    let m = p.nrows();
    let tr = linalg::trace_re(p);
    for delta in [SCATTER_DELTA, 1e-10] {
        let mut reg = p.clone();
        for i in 0..m {
            reg[(i, i)] += Complex64::new(delta * tr / m as f64, 0.0);
        }
        if let Some(c) = reg.cholesky() {
            return Ok(c.inverse());
        }
    }
    Err(Error::DegenerateScatter("cACG matrix not positive definite".into()))
}

fn cacg_posterior(data: &FrequencyData, weights: &[f64], p: &[CMatrix]) -> Result<Responsibilities> {
    let m = data.dim() as f64;
    let mut parts = Vec::with_capacity(p.len());
    for pk in p {
        let inv = cacg_inverse(pk)?;
        let log_det = -inv
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DegenerateScatter("cACG inverse not positive definite".into()))?
            .l()
            .diagonal()
            .iter()
            .map(|d| 2.0 * d.re.ln())
            .sum::<f64>();
        parts.push((inv, log_det));
    }
    let rows = data
        .iter()
        .map(|z| {
            let lp: Vec<f64> = parts
                .iter()
                .zip(weights)
                .map(|((inv, ld), w)| w.ln() - ld - m * linalg::quadratic_form(inv, z).ln())
                .collect();
            let lse = log_sum_exp(&lp);
            lp.iter().map(|v| (v - lse).exp()).collect()
        })
        .collect();
    Responsibilities::from_rows(rows)
}
