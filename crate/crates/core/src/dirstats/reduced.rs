//! One-dimensional reductions of the simplex integrals.
//!
//! For `r` uniform on the probability simplex in `R^M` and `z_j >= 1`:
//!
//! * `E[exp(sum_j x_j r_j)] = (M-1)! * exp[x_1, ..., x_M]` (Hermite–Genocchi),
//!   where the divided difference is read off the exponential of the
//!   bidiagonal Opitz matrix;
//! * `E[(sum_j z_j r_j)^{-q}] = B(q, M-q)^{-1} int_0^inf t^{M-q-1} prod_j (t + z_j)^{-1} dt`
//!   for `0 < q < M` (Carlson's Dirichlet average);
//! * `E[(sum_j z_j r_j)^{-q}] = int u^{-q} p(u) du` where `p` is the density of
//!   the linear form, a B-spline with knots `z_j` (Curry–Schoenberg);
//! * `E[(sum_j z_j r_j)^{-q}] = E_{s ~ Gamma(q)} E[exp(-s sum_j z_j r_j)]` for any
//!   `q > 0`, i.e. the t kernel is a Gamma scale mixture of Bingham kernels
//!   (used only as a cross-check).
//!
//! All integrands are positive, so there is no cancellation and the
//! results carry full relative accuracy even for very concentrated shapes.

use crate::quadrature::{integrate, QuadOptions};
use statrs::function::gamma::ln_gamma;

fn lower_mul(a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..n {
        let row = &a[i * n..i * n + i + 1];
        for j in 0..=i {
            let mut acc = 0.0;
            for k in j..=i {
                acc += row[k] * b[k * n + j];
            }
            out[i * n + j] = acc;
        }
    }
}

/// Divided difference `exp[x_1, ..., x_n]` (nodes may repeat), for nodes `<= 0`.
///
/// `exp` of the lower bidiagonal matrix with diagonal `x` and unit
/// subdiagonal holds the divided difference in its bottom-left entry. It is
/// evaluated by scaling and squaring; the scaled matrix is Metzler, so every
/// power is entrywise non-negative and squaring never cancels.
pub(crate) fn exp_divided_difference(x: &[f64]) -> f64 {
    let n = x.len();
    match n {
        0 => return 0.0,
        1 => return x[0].exp(),
        _ => {}
    }
    const STACK: usize = 8;
    if n <= STACK {
        let mut buf = [0.0; 4 * STACK * STACK];
        opitz(x, &mut buf[..4 * n * n])
    } else {
        opitz(x, &mut vec![0.0; 4 * n * n])
    }
}

fn opitz(x: &[f64], buf: &mut [f64]) -> f64 {
    let n = x.len();
    let (y, rest) = buf.split_at_mut(n * n);
    let (mut e, rest) = rest.split_at_mut(n * n);
    let (mut next, term) = rest.split_at_mut(n * n);
    let spread = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let squarings = (2.0 * spread).log2().ceil().max(1.0) as i32;
    let h = 0.5f64.powi(squarings);
    for i in 0..n {
        y[i * n + i] = x[i] * h;
        if i + 1 < n {
            y[(i + 1) * n + i] = h;
        }
        e[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    // The scaled nodes and subdiagonal are at most 1/2, so each entry's
    // Taylor series converges like that of e^{1/2}.
    for k in 1..60 {
        lower_mul(term, y, n, next);
        let inv = 1.0 / k as f64;
        let mut small = k + 1 >= n;
        for idx in 0..n * n {
            let t = next[idx] * inv;
            term[idx] = t;
            e[idx] += t;
            small &= t.abs() <= 1e-18 * e[idx].abs();
        }
        if small {
            break;
        }
    }
    for _ in 0..squarings {
        lower_mul(e, e, n, next);
        std::mem::swap(&mut e, &mut next);
    }
    e[(n - 1) * n]
}

/// `E[exp(sum_j x_j r_j)]` for the uniform simplex in `R^M`, `M = x.len()`.
pub(crate) fn exp_average(x: &[f64]) -> f64 {
    let m = x.len();
    let fact: f64 = (1..m).map(|k| k as f64).product();
    fact * exp_divided_difference(x)
}

fn opts(rel_tol: f64, abs_tol: f64) -> QuadOptions {
    QuadOptions {
        rel_tol,
        abs_tol,
        max_intervals: 150,
    }
}

/// `ln(e^a + e^b)`.
#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `int_{-inf}^{c} e^{a x} prod_j (1 + w_j e^x)^{-1} dx` for `e^c max_j w_j < 1`,
/// by expanding the product in complete homogeneous polynomials of `w`.
fn tail_series(w: &[f64], a: f64, c: f64) -> f64 {
    let t = c.exp();
    let mut h = vec![1.0; w.len()];
    let mut sum = 1.0 / a;
    let mut pow = 1.0;
    for k in 1..200 {
        let mut prev = 0.0;
        for (i, slot) in h.iter_mut().enumerate() {
            prev += w[i] * *slot;
            *slot = prev;
        }
        pow *= -t;
        let term = pow * h[h.len() - 1] / (a + k as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    (a * c).exp() * sum
}

/// Density of `u = sum_j t_j r_j` at `u in [t_m, t_{m+1})` for `r` uniform on
/// the simplex and ascending knots `t` (at least two distinct).
///
/// This is the Curry–Schoenberg B-spline of degree `M-2` on the knots; the
/// Cox–de Boor recursion only forms convex combinations, so the value is
/// accurate to rounding.
pub(crate) fn linear_form_density(t: &[f64], m: usize, u: f64) -> f64 {
    let k = t.len() - 1;
    let mut buf = [0.0; 16];
    let mut heap;
    let n: &mut [f64] = if k < 16 {
        &mut buf[..=k]
    } else {
        heap = vec![0.0; k + 1];
        &mut heap
    };
    n[m] = 1.0;
    for ord in 2..=k {
        for i in 0..=k - ord {
            let d1 = t[i + ord - 1] - t[i];
            let d2 = t[i + ord] - t[i + 1];
            let left = if d1 > 0.0 { (u - t[i]) / d1 * n[i] } else { 0.0 };
            let right = if d2 > 0.0 { (t[i + ord] - u) / d2 * n[i + 1] } else { 0.0 };
            n[i] = left + right;
        }
    }
    k as f64 / (t[k] - t[0]) * n[0]
}

/// `E[(sum_j z_j r_j)^{-q}]` for `q > 1` and `z_j >= 1`, as
/// `int u^{-q} p(u) du` over the knot intervals of the density `p`.
///
/// On `[t_m, t_{m+1}]` the substitution `v = (u/t_m)^{1-q}` removes the
/// power decay, leaving the smooth spline piece. Returns `None` on
/// quadrature failure.
pub(crate) fn power_average_spline(z: &[f64], q: f64, tol: f64) -> Option<f64> {
    debug_assert!(q > 1.0);
    let mut t = z.to_vec();
    t.sort_by(|a, b| a.total_cmp(b));
    if t[t.len() - 1] == t[0] {
        return Some(t[0].powf(-q));
    }
    let mut total = 0.0f64;
    let mut ok = true;
    // Pieces in increasing u carry decreasing mass; later pieces only need
    // accuracy relative to the running total.
    for m in 0..t.len() - 1 {
        let (lo, hi) = (t[m], t[m + 1]);
        if hi <= lo {
            continue;
        }
        // The piece is at most lo^{-q} times its probability mass.
        if total > 0.0 && -q * lo.ln() < (0.01 * tol * total).ln() {
            break;
        }
        let log_scale = (1.0 - q) * lo.ln() - (q - 1.0).ln();
        let v_end = ((1.0 - q) * (hi / lo).ln()).exp();
        let expo = 1.0 / (1.0 - q);
        let r = integrate(
            |v: f64| {
                let u = (lo * (expo * v.ln()).exp()).min(hi);
                linear_form_density(&t, m, u)
            },
            v_end,
            1.0,
            opts(tol, 0.1 * tol * total * (-log_scale).exp()),
        );
        ok &= r.converged;
        total += log_scale.exp() * r.value;
    }
    ok.then_some(total)
}

/// `E[(sum_j z_j r_j)^{-q}]` for `0 < q < M`, `z_j >= 1` and `min_j z_j = 1`.
/// Returns `None` when a quadrature panel fails to converge.
pub(crate) fn power_average_carlson(z: &[f64], q: f64, tol: f64) -> Option<f64> {
    let m = z.len() as f64;
    debug_assert!(q > 0.0 && q < m);
    // With t = e^x the integrand is e^{a x} prod_j (e^x + z_j)^{-1}.
    let a = m - q;
    let lz: Vec<f64> = z.iter().map(|v| v.ln()).collect();
    let mut breaks = lz.clone();
    breaks.sort_by(|x, y| x.total_cmp(y));
    breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    let lo = breaks[0] - 3.0;
    let hi = breaks[breaks.len() - 1] + 3.0;
    breaks.insert(0, lo);
    breaks.push(hi);
    let log_prod = |x: f64| -> f64 { lz.iter().map(|&l| log_add(x, l)).sum() };

    let mut total = 0.0;
    let mut ok = true;
    for w in breaks.windows(2) {
        let r = integrate(|x| (a * x - log_prod(x)).exp(), w[0], w[1], opts(tol, 0.0));
        ok &= r.converged;
        total += r.value;
    }
    // Left: prod_j z_j^{-1} (1 + e^x / z_j)^{-1}.
    let inv: Vec<f64> = z.iter().map(|v| 1.0 / v).collect();
    let log_det: f64 = lz.iter().sum();
    total += (-log_det).exp() * tail_series(&inv, a, lo);
    // Right, in y = -x: e^{-q y'} prod_j (1 + z_j e^{-y'})^{-1} over y' >= hi.
    total += tail_series(z, q, -hi);
    let log_beta = ln_gamma(q) + ln_gamma(a) - ln_gamma(m);
    ok.then(|| total * (-log_beta).exp())
}

/// `E[(sum_j z_j r_j)^{-q}]` for any `q > 0` from the Gamma scale mixture,
/// with `z_j = 1 + b_j`, `b_j >= 0`. Slow; kept as an independent check.
#[cfg(test)]
pub(crate) fn power_average_gamma_mixture(b: &[f64], q: f64, tol: f64) -> Option<f64> {
    let log_gq = ln_gamma(q);
    let mut nodes = vec![0.0; b.len()];
    // Integrand in x = ln s including the Gamma density.
    let mut f = |x: f64| -> f64 {
        let s = x.exp();
        for (n, bj) in nodes.iter_mut().zip(b) {
            *n = -s * bj;
        }
        (q * x - s - log_gq).exp() * exp_average(&nodes)
    };
    let center = q.ln();
    let width = 1.0 / q.sqrt();
    // Right cut where the Gamma density has dropped by e^{-45} from its mode.
    let mut s_hi = q + 10.0 * q.sqrt() + 50.0;
    let target = q - q * q.ln() + 45.0;
    for _ in 0..50 {
        let g = s_hi - q * s_hi.ln() - target;
        let step = g / (1.0 - q / s_hi);
        s_hi -= step;
        if step.abs() < 1e-10 * s_hi {
            break;
        }
    }
    let x_hi = s_hi.max(q * 1.01).ln();
    let c_lo = center - 6.0 * width;
    let c_hi = (center + 6.0 * width).min(x_hi);

    let mut ok = true;
    let mut total = 0.0;
    let step = (c_hi - c_lo) / 3.0;
    for i in 0..3 {
        let u = c_lo + step * i as f64;
        let r = integrate(&mut f, u, u + step, opts(tol, 0.0));
        ok &= r.converged;
        total += r.value;
    }
    if !(total > 0.0) {
        return None;
    }
    // The flanks only need accuracy relative to the bulk. Below x_lo the
    // integrand is at most e^{q x - ln Gamma(q)}.
    let floor = 0.1 * tol * total;
    let x_lo = ((floor * q).ln() + log_gq) / q;
    let mut breaks: Vec<f64> = b
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| -v.ln())
        .filter(|&v| v > x_lo && v < c_lo)
        .collect();
    breaks.push(x_lo.min(c_lo));
    breaks.push(c_lo);
    breaks.sort_by(|x, y| x.total_cmp(y));
    breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
    let mut pieces: Vec<(f64, f64)> = breaks.windows(2).map(|w| (w[0], w[1])).collect();
    pieces.push((c_hi, x_hi));
    for (u, v) in pieces {
        if v > u {
            let r = integrate(&mut f, u, v, opts(tol, floor));
            ok &= r.converged;
            total += r.value;
        }
    }
    ok.then_some(total)
}
