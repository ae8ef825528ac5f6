//! Normalizing constants of the complex spherical t family and its limits.
//!
//! With `z` uniform on the sphere the squared moduli `r_j = |u_j^H z|^2` are
//! uniform on the probability simplex (density `(M-1)!`), so
//!
//! ```text
//! C(A, nu)^{-1} = (M-1)! * int_simplex (1 - (2/nu) sum_j lambda_j r_j)^{-(nu+M)/2} dr
//! ```
//!
//! and the Bingham limit replaces the integrand by `exp(sum_j lambda_j r_j)`.
//!
//! The default quadrature route evaluates this integral through exact
//! one-dimensional reductions (see `reduced`); the nested per-coordinate
//! Gauss–Kronrod evaluation is kept as an independent route.

use super::reduced::{
    exp_average, exp_divided_difference, power_average_carlson, power_average_spline,
};
use super::simplex::{
    exp_inner_factor, power_inner_factor, simplex_integral, Kernel, VarMap,
};
use super::{CanonicalHermitian, CstParams, Nu, Shape};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadOptions};

use serde::{Deserialize, Serialize};

/// Default relative accuracy of normalizer quadrature.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

const SERIES_STOP: f64 = 1e-12;
const SERIES_MAX_TERMS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerMethod {
    SimplexQuadrature,
    Series,
    ClosedForm,
    Limit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizerRequest {
    /// Closed form where one exists, otherwise quadrature with series fallback.
    #[default]
    Auto,
    /// Quadrature with series fallback, never a closed form.
    Quadrature,
    /// Nested per-coordinate quadrature over the simplex, series fallback.
    Nested,
    /// Series only.
    Series,
}

/// `log C` together with the route that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalizer {
    pub value: f64,
    pub method: NormalizerMethod,
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `log C` of a full canonical shape.
pub fn log_normalizer_full(
    shape: &CanonicalHermitian,
    nu: Nu,
    request: NormalizerRequest,
    tolerance: f64,
) -> Result<LogNormalizer> {
    let m = shape.dim();
    let lambdas = shape.eigvals();
    if m <= 1 || lambdas.iter().all(|&l| l == 0.0) {
        let method = if nu.is_infinite() {
            NormalizerMethod::Limit
        } else {
            NormalizerMethod::ClosedForm
        };
        return Ok(LogNormalizer { value: 0.0, method });
    }
    match nu {
        Nu::Finite(v) => {
            let q = 0.5 * (v + m as f64);
            if request == NormalizerRequest::Auto && v == m as f64 {
                // cACG case: C = det(I - 2A/M).
                let value = lambdas.iter().map(|l| (-2.0 * l / v).ln_1p()).sum();
                return Ok(LogNormalizer {
                    value,
                    method: NormalizerMethod::ClosedForm,
                });
            }
            let betas: Vec<f64> = lambdas[1..].iter().map(|l| -2.0 * l / v).collect();
            let quad = match request {
                NormalizerRequest::Series => None,
                NormalizerRequest::Nested => {
                    let r = simplex_integral(Kernel::Power { q }, &betas, None, tolerance);
                    r.converged.then(|| ln_factorial(m - 1) + r.value.ln())
                }
                _ => {
                    let mut b = vec![0.0];
                    b.extend_from_slice(&betas);
                    let z: Vec<f64> = b.iter().map(|x| 1.0 + x).collect();
                    let avg = if q < m as f64 {
                        power_average_carlson(&z, q, tolerance)
                    } else {
                        power_average_spline(&z, q, tolerance)
                    };
                    avg.map(f64::ln)
                }
            };
            if let Some(log_inv) = quad.filter(|x| x.is_finite()) {
                return Ok(LogNormalizer {
                    value: -log_inv,
                    method: NormalizerMethod::SimplexQuadrature,
                });
            }
            if request != NormalizerRequest::Series {
                log::debug!("simplex quadrature failed for {lambdas:?}, nu={v}; using series");
            }
            let mut all = vec![0.0];
            all.extend_from_slice(&betas);
            let log_inv = power_series_log(&all, q, m)?;
            Ok(LogNormalizer {
                value: -log_inv,
                method: NormalizerMethod::Series,
            })
        }
        Nu::Infinite => {
            let quad = match request {
                NormalizerRequest::Series => None,
                NormalizerRequest::Nested => {
                    let betas: Vec<f64> = lambdas[1..].iter().map(|l| -l).collect();
                    let r = simplex_integral(Kernel::Exp, &betas, None, tolerance);
                    r.converged.then(|| ln_factorial(m - 1) + r.value.ln())
                }
                _ => Some(exp_average(lambdas).ln()),
            };
            if let Some(log_inv) = quad.filter(|x| x.is_finite()) {
                return Ok(LogNormalizer {
                    value: -log_inv,
                    method: NormalizerMethod::Limit,
                });
            }
            let log_inv = exp_series_log(lambdas, m)?;
            Ok(LogNormalizer {
                value: -log_inv,
                method: NormalizerMethod::Series,
            })
        }
    }
}

/// `log C = -log Z(kappa, nu)` of the Watson-constrained shape, with
/// `Z = (M-1) int_0^1 u^{M-2} (1 + (2 kappa/nu) u)^{-(nu+M)/2} du`
/// (or `exp(-kappa u)` in the Watson limit).
pub fn log_normalizer_rank_one(kappa: f64, nu: Nu, m: usize) -> Result<LogNormalizer> {
    if !(kappa >= 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be >= 0, got {kappa}")));
    }
    if m <= 1 || kappa == 0.0 {
        let method = if nu.is_infinite() {
            NormalizerMethod::Limit
        } else {
            NormalizerMethod::ClosedForm
        };
        return Ok(LogNormalizer { value: 0.0, method });
    }
    let mf = m as f64;
    match nu {
        Nu::Finite(v) => {
            let q = 0.5 * (v + mf);
            let b = 2.0 * kappa / v;
            if m == 2 {
                return Ok(LogNormalizer {
                    value: -power_inner_factor(b, q).ln(),
                    method: NormalizerMethod::ClosedForm,
                });
            }
            let map = VarMap::power(b, q - (mf - 2.0), 1.0);
            let res = integrate(
                |t| {
                    let (u, jac) = map.eval(t);
                    jac * u.powi(m as i32 - 2) * (-q * (b * u).ln_1p()).exp()
                },
                0.0,
                1.0,
                QuadOptions {
                    rel_tol: 1e-13,
                    abs_tol: 0.0,
                    max_intervals: 200,
                },
            );
            if res.converged && res.value > 0.0 {
                return Ok(LogNormalizer {
                    value: -((mf - 1.0) * res.value).ln(),
                    method: NormalizerMethod::SimplexQuadrature,
                });
            }
            let mut all = vec![b; m];
            all[0] = 0.0;
            Ok(LogNormalizer {
                value: -power_series_log(&all, q, m)?,
                method: NormalizerMethod::Series,
            })
        }
        Nu::Infinite => Ok(LogNormalizer {
            value: -watson_log_z(kappa, m)?,
            method: NormalizerMethod::Limit,
        }),
    }
}

/// `int_0^1 u^k e^{-kappa u} du = k! P(k+1, kappa) / kappa^{k+1}`.
fn watson_tangent_integral(kappa: f64, power: usize) -> Result<f64> {
    let a = power as f64 + 1.0;
    if kappa < 1e-8 {
        return Ok(1.0 / a - kappa / (a + 1.0));
    }
    let p = statrs::function::gamma::gamma_lr(a, kappa);
    let log_val = statrs::function::gamma::ln_gamma(a) + p.ln() - a * kappa.ln();
    let v = log_val.exp();
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::Normalizer(format!(
            "Watson integral failed at kappa = {kappa}"
        )));
    }
    Ok(v)
}

fn watson_log_z(kappa: f64, m: usize) -> Result<f64> {
    if m == 2 {
        return Ok(exp_inner_factor(kappa).ln());
    }
    Ok(((m as f64 - 1.0) * watson_tangent_integral(kappa, m - 2)?).ln())
}

/// Mean of `1 - |a^H z|^2` under the complex Watson distribution.
pub fn watson_mean_tangent(kappa: f64, m: usize) -> Result<f64> {
    if m <= 1 {
        return Ok(0.0);
    }
    if kappa == 0.0 {
        return Ok((m as f64 - 1.0) / m as f64);
    }
    let num = watson_tangent_integral(kappa, m - 1)?;
    let den = watson_tangent_integral(kappa, m - 2)?;
    Ok(num / den)
}

/// `E[|u_j^H z|^2]` under the complex Bingham density with canonical
/// eigenvalues `eigvals` (`eigvals[0] = 0`).
///
/// This is `d log C^{-1} / d lambda_j`, a ratio of divided differences in
/// which node `j` appears twice in the numerator.
pub fn bingham_coordinate_moment(eigvals: &[f64], j: usize) -> Result<f64> {
    if j >= eigvals.len() {
        return Err(Error::InvalidArgument(format!("coordinate {j} out of range")));
    }
    let mut nodes = eigvals.to_vec();
    nodes.insert(j, eigvals[j]);
    let den = exp_divided_difference(eigvals);
    let num = exp_divided_difference(&nodes);
    let v = num / den;
    if !v.is_finite() || den <= 0.0 {
        return Err(Error::Normalizer(format!(
            "Bingham moment failed for {eigvals:?}"
        )));
    }
    Ok(v)
}

/// Mean vector and covariance matrix of `r_j = |u_j^H z|^2` under the
/// complex Bingham density with canonical eigenvalues `eigvals`.
///
/// Second derivatives of the divided difference are divided differences
/// with the differentiated nodes repeated, so both moments come out of the
/// same positive quantities.
pub fn bingham_moments(eigvals: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = eigvals.len();
    let den = exp_divided_difference(eigvals);
    if !(den > 0.0) || !den.is_finite() {
        return Err(Error::Normalizer(format!("Bingham moments failed for {eigvals:?}")));
    }
    let with = |extra: &[usize]| -> f64 {
        let mut nodes = eigvals.to_vec();
        nodes.extend(extra.iter().map(|&i| eigvals[i]));
        nodes.sort_by(|a, b| b.total_cmp(a));
        exp_divided_difference(&nodes) / den
    };
    let mean: Vec<f64> = (0..m).map(|i| with(&[i])).collect();
    let mut cov = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let second = if i == j { 2.0 * with(&[i, i]) } else { with(&[i, j]) };
            let c = second - mean[i] * mean[j];
            cov[i][j] = c;
            cov[j][i] = c;
        }
    }
    Ok((mean, cov))
}

/// Mean and variance of `u = 1 - |a^H z|^2` under the complex Watson
/// distribution with concentration `kappa`.
pub fn watson_tangent_moments(kappa: f64, m: usize) -> Result<(f64, f64)> {
    if m <= 1 {
        return Ok((0.0, 0.0));
    }
    let mf = m as f64;
    if kappa == 0.0 {
        // u ~ Beta(M-1, 1)
        let mean = (mf - 1.0) / mf;
        return Ok((mean, (mf - 1.0) / (mf * mf * (mf + 1.0))));
    }
    let i0 = watson_tangent_integral(kappa, m - 2)?;
    let i1 = watson_tangent_integral(kappa, m - 1)?;
    let i2 = watson_tangent_integral(kappa, m)?;
    let mean = i1 / i0;
    Ok((mean, (i2 / i0 - mean * mean).max(0.0)))
}

/// `log C` for any component, using the automatic route and default tolerance.
pub fn log_normalizer(params: &CstParams) -> Result<LogNormalizer> {
    match &params.shape {
        Shape::Full(c) => {
            log_normalizer_full(c, params.nu, NormalizerRequest::Auto, DEFAULT_TOLERANCE)
        }
        Shape::RankOne(r) => log_normalizer_rank_one(r.kappa, params.nu, r.dim()),
    }
}

/// Complete homogeneous symmetric polynomials are advanced in place:
/// on entry `h` holds `h_{k-1}` restricted to the first `i+1` variables,
/// on exit `h_k`.
fn advance_homogeneous(h: &mut [f64], y: &[f64]) {
    let mut prev = 0.0;
    for (i, slot) in h.iter_mut().enumerate() {
        let v = prev + y[i] * *slot;
        *slot = v;
        prev = v;
    }
}

/// `log C^{-1}` for the power kernel by the series
/// `(1+b_max)^{-q} sum_k (q)_k/(M)_k h_k(y)`, `y_j = (b_max - b_j)/(1 + b_max)`,
/// which is the Gauss hypergeometric function of matrix argument `2F1(q, 1; M; Y)`.
fn power_series_log(b: &[f64], q: f64, m: usize) -> Result<f64> {
    let b_max = b.iter().copied().fold(0.0, f64::max);
    let y: Vec<f64> = b.iter().map(|bj| (b_max - bj) / (1.0 + b_max)).collect();
    let mut h = vec![1.0; y.len()];
    let mut coef = 1.0;
    let mut sum = 1.0;
    let mut prev_term = 1.0;
    for k in 1..=SERIES_MAX_TERMS {
        advance_homogeneous(&mut h, &y);
        coef *= (q + k as f64 - 1.0) / (m as f64 + k as f64 - 1.0);
        let term = coef * h[h.len() - 1];
        sum += term;
        let ratio = term / prev_term;
        prev_term = term;
        if term == 0.0 || (ratio < 1.0 && term * ratio / (1.0 - ratio) < SERIES_STOP * sum) {
            return Ok(-q * b_max.ln_1p() + sum.ln());
        }
    }
    Err(Error::Normalizer(format!(
        "hypergeometric series did not converge in {SERIES_MAX_TERMS} terms (b_max = {b_max})"
    )))
}

/// `log C^{-1}` for the Bingham kernel by `e^{l_min} sum_k h_k(y)/(M)_k`,
/// `y_j = lambda_j - l_min` (confluent `1F1(1; M; .)`).
fn exp_series_log(lambdas: &[f64], m: usize) -> Result<f64> {
    let l_min = lambdas.iter().copied().fold(0.0, f64::min);
    let y: Vec<f64> = lambdas.iter().map(|l| l - l_min).collect();
    if y.iter().any(|&v| v > 600.0) {
        return Err(Error::Normalizer(
            "Bingham series would overflow for this eigenvalue spread".into(),
        ));
    }
    let mut h = vec![1.0; y.len()];
    let mut coef = 1.0;
    let mut sum = 1.0;
    let mut prev_term = 1.0;
    for k in 1..=SERIES_MAX_TERMS {
        advance_homogeneous(&mut h, &y);
        coef /= m as f64 + k as f64 - 1.0;
        let term = coef * h[h.len() - 1];
        sum += term;
        let ratio = term / prev_term;
        prev_term = term;
        if term == 0.0 || (ratio < 0.5 && term * ratio / (1.0 - ratio) < SERIES_STOP * sum) {
            return Ok(l_min + sum.ln());
        }
    }
    Err(Error::Normalizer(format!(
        "Bingham series did not converge in {SERIES_MAX_TERMS} terms"
    )))
}
