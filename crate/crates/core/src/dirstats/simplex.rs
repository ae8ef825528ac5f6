//! Nested adaptive quadrature over the standard simplex
//! `{x in R^d : x_i >= 0, sum x_i <= 1}` for the two kernels that appear in
//! the normalizers:
//!
//! * power: `(1 + sum_i beta_i x_i)^{-q}`  (finite `nu`)
//! * exp:   `exp(-sum_i beta_i x_i)`        (Bingham limit)
//!
//! with all `beta_i >= 0`. The innermost variable is integrated in closed
//! form; each outer level is a 1-D Gauss–Kronrod integral after a change of
//! variables that flattens the dominant decay in that coordinate.

use crate::quadrature::{integrate, QuadOptions};
use std::cell::Cell;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Kernel {
    Power { q: f64 },
    Exp,
}

/// `(1 - (1+t)^{1-q}) / ((q-1) t)`, the normalized closed-form integral of
/// `(1 + t u)^{-q}` over `u in [0, 1]`.
pub(crate) fn power_inner_factor(t: f64, q: f64) -> f64 {
    if t < 1e-10 {
        return 1.0 - 0.5 * q * t;
    }
    if (q - 1.0).abs() < 1e-12 {
        return t.ln_1p() / t;
    }
    -((1.0 - q) * t.ln_1p()).exp_m1() / ((q - 1.0) * t)
}

/// `(1 - e^{-y}) / y`.
pub(crate) fn exp_inner_factor(y: f64) -> f64 {
    if y < 1e-10 {
        return 1.0 - 0.5 * y;
    }
    -(-y).exp_m1() / y
}

/// `int_0^1 t e^{-y t} dt`.
pub(crate) fn exp_moment_factor(y: f64) -> f64 {
    if y < 1e-3 {
        return 0.5 - y / 3.0 + y * y / 8.0 - y * y * y / 30.0 + y.powi(4) / 144.0;
    }
    (1.0 - (-y).exp() * (1.0 + y)) / (y * y)
}

/// Change of variables `x = x(u)` on `[0, R]` with Jacobian.
#[derive(Debug, Clone, Copy)]
pub(crate) enum VarMap {
    Identity { r: f64 },
    /// Flattens `(1 + tau x)^{-p}` for `p != 1`; `end = (1 + tau R)^{1-p}`.
    Power { tau: f64, p: f64, end: f64, span: f64 },
    /// Flattens `(1 + tau x)^{-1}`.
    Log { tau: f64, l: f64 },
    /// Flattens `exp(-mu x)`; `tail = exp(-mu R)`, `b = 1 - tail`.
    Exp { mu: f64, tail: f64, b: f64 },
}

impl VarMap {
    pub(crate) fn power(tau: f64, p: f64, r: f64) -> Self {
        if tau * r <= 1.0 || p <= 0.05 {
            VarMap::Identity { r }
        } else if (p - 1.0).abs() < 1e-6 {
            VarMap::Log {
                tau,
                l: (tau * r).ln_1p(),
            }
        } else {
            let lg = (1.0 - p) * (tau * r).ln_1p();
            VarMap::Power {
                tau,
                p,
                end: lg.exp(),
                span: lg.exp_m1(),
            }
        }
    }

    pub(crate) fn exp(mu: f64, r: f64) -> Self {
        if mu * r <= 1.0 {
            VarMap::Identity { r }
        } else {
            VarMap::Exp {
                mu,
                tail: (-mu * r).exp(),
                b: -(-mu * r).exp_m1(),
            }
        }
    }

    /// Returns `(x, dx/du)`.
    #[inline]
    pub(crate) fn eval(&self, u: f64) -> (f64, f64) {
        match *self {
            VarMap::Identity { r } => (u * r, r),
            VarMap::Power { tau, p, end, span } => {
                let base = (1.0 - u) + u * end;
                let one_plus = base.powf(1.0 / (1.0 - p));
                let x = (one_plus - 1.0) / tau;
                (x, span / ((1.0 - p) * tau) * one_plus.powf(p))
            }
            VarMap::Log { tau, l } => {
                let e = (u * l).exp();
                ((e - 1.0) / tau, l * e / tau)
            }
            VarMap::Exp { mu, tail, b } => {
                let w = (1.0 - u) + u * tail;
                let x = if u * b < 0.5 { -(-u * b).ln_1p() } else { -w.ln() };
                (x / mu, b / (mu * w))
            }
        }
    }
}

pub(crate) struct SimplexIntegral {
    pub value: f64,
    pub converged: bool,
}

struct Ctx<'a> {
    kernel: Kernel,
    betas: &'a [f64],
    weighted_first: bool,
    opts: QuadOptions,
    failed: Cell<bool>,
}

impl Ctx<'_> {
    /// Integral over the variables `level..d` given the accumulated state
    /// (`alpha` for the power kernel, the exponent `s <= 0` for exp) and the
    /// remaining simplex budget `rem`.
    fn level(&self, level: usize, state: f64, rem: f64) -> f64 {
        if rem <= 0.0 {
            return 0.0;
        }
        let d = self.betas.len();
        let beta = self.betas[level];
        let weighted = self.weighted_first && level == 0;
        if level + 1 == d {
            return match self.kernel {
                Kernel::Power { q } => {
                    debug_assert!(!weighted, "moment weights are only supported for exp");
                    rem * state.powf(-q) * power_inner_factor(beta * rem / state, q)
                }
                Kernel::Exp => {
                    let y = beta * rem;
                    if weighted {
                        state.exp() * rem * rem * exp_moment_factor(y)
                    } else {
                        state.exp() * rem * exp_inner_factor(y)
                    }
                }
            };
        }
        let map = match self.kernel {
            Kernel::Power { q } => {
                let p_eff = q - (d - 1 - level) as f64;
                VarMap::power(beta / state, p_eff, rem)
            }
            Kernel::Exp => VarMap::exp(beta, rem),
        };
        let res = integrate(
            |u| {
                let (x, jac) = map.eval(u);
                let x = x.min(rem);
                let next = match self.kernel {
                    Kernel::Power { .. } => state + beta * x,
                    Kernel::Exp => state - beta * x,
                };
                let w = if weighted { x } else { 1.0 };
                jac * w * self.level(level + 1, next, rem - x)
            },
            0.0,
            1.0,
            self.opts,
        );
        if !res.converged {
            self.failed.set(true);
        }
        res.value
    }
}

/// Integral of the kernel over the `d = betas.len()` dimensional simplex
/// (Lebesgue measure, total volume `1/d!`).
///
/// With `weight = Some(i)` the integrand is multiplied by `x_i` (exp kernel
/// only). An empty `betas` denotes the zero-dimensional simplex (value 1).
pub(crate) fn simplex_integral(
    kernel: Kernel,
    betas: &[f64],
    weight: Option<usize>,
    rel_tol: f64,
) -> SimplexIntegral {
    if betas.is_empty() {
        return SimplexIntegral {
            value: 1.0,
            converged: true,
        };
    }
    // Slowest decay outermost: the sharpest feature is then integrated in
    // closed form. A weighted variable is always outermost.
    let mut order: Vec<f64> = Vec::with_capacity(betas.len());
    let mut rest: Vec<f64> = betas.to_vec();
    if let Some(i) = weight {
        order.push(rest.remove(i));
    }
    rest.sort_by(|a, b| a.total_cmp(b));
    order.extend(rest);

    let d = order.len();
    let ctx = Ctx {
        kernel,
        betas: &order,
        weighted_first: weight.is_some(),
        opts: QuadOptions {
            rel_tol: rel_tol / d as f64,
            abs_tol: 0.0,
            max_intervals: 120,
        },
        failed: Cell::new(false),
    };
    let start = match kernel {
        Kernel::Power { .. } => 1.0,
        Kernel::Exp => 0.0,
    };
    let value = ctx.level(0, start, 1.0);
    SimplexIntegral {
        value,
        converged: !ctx.failed.get() && value.is_finite(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_rates_give_simplex_volume() {
        let r = simplex_integral(Kernel::Power { q: 2.5 }, &[0.0, 0.0, 0.0], None, 1e-12);
        assert_relative_eq!(r.value, 1.0 / 6.0, max_relative = 1e-12);
        let r = simplex_integral(Kernel::Exp, &[0.0, 0.0], None, 1e-12);
        assert_relative_eq!(r.value, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn exp_kernel_matches_divided_difference() {
        // 2! * int exp(-b1 x1 - b2 x2) over the 2-simplex equals the
        // divided difference of exp at (0, -b1, -b2) times 2!.
        let (l1, l2) = (-1.5f64, -4.0f64);
        let dd = |a: f64, b: f64, c: f64| {
            a.exp() / ((a - b) * (a - c)) + b.exp() / ((b - a) * (b - c)) + c.exp() / ((c - a) * (c - b))
        };
        let r = simplex_integral(Kernel::Exp, &[-l1, -l2], None, 1e-12);
        assert_relative_eq!(r.value, dd(0.0, l1, l2), max_relative = 1e-11);
    }

    #[test]
    fn power_kernel_at_cacg_exponent_is_product() {
        // q = M = 3 (nu = 3): C^{-1} = prod_j (1 + b_j)^{-1}, so
        // int over the simplex = C^{-1} / 2!.
        let b = [3.0, 40.0];
        let r = simplex_integral(Kernel::Power { q: 3.0 }, &b, None, 1e-12);
        let expect = 0.5 / ((1.0 + b[0]) * (1.0 + b[1]));
        assert_relative_eq!(r.value, expect, max_relative = 1e-11);
        assert!(r.converged);
    }

    #[test]
    fn weighted_exp_moment() {
        // d = 1: int_0^1 x e^{-b x} dx
        let b = 7.0f64;
        let r = simplex_integral(Kernel::Exp, &[b], Some(0), 1e-12);
        let expect = (1.0 - (-b).exp() * (1.0 + b)) / (b * b);
        assert_relative_eq!(r.value, expect, max_relative = 1e-13);
    }

    #[test]
    fn maps_cover_the_interval() {
        for map in [
            VarMap::power(50.0, 2.5, 0.7),
            VarMap::power(50.0, 0.5, 0.7),
            VarMap::power(50.0, 1.0, 0.7),
            VarMap::exp(80.0, 0.7),
        ] {
            let (x0, _) = map.eval(0.0);
            let (x1, _) = map.eval(1.0);
            assert!(x0.abs() < 1e-14);
            assert_relative_eq!(x1, 0.7, max_relative = 1e-12);
            // Jacobian matches a finite difference.
            let u = 0.37;
            let h = 1e-6;
            let fd = (map.eval(u + h).0 - map.eval(u - h).0) / (2.0 * h);
            assert_relative_eq!(map.eval(u).1, fd, max_relative = 1e-6);
        }
    }
}
