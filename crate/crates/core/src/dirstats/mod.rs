//! Directional statistics on the complex unit sphere.
//!
//! All densities are taken with respect to the *normalized* uniform measure
//! on the sphere, so the uniform distribution has density one and every
//! normalizer below is dimensionless.
//!
//! The complex spherical Student's t component with Hermitian parameter `A`
//! and degrees of freedom `nu` has unnormalized density
//! `(1 - (2/nu) z^H A z)^{-(nu+M)/2}`. Because `z` has unit norm, `A` and
//! `(A - aI)/(1 - 2a/nu)` describe the same normalized density, and we always
//! store the representative whose largest eigenvalue is zero. `nu = inf`
//! selects the complex Bingham (full) or Watson (rank-one) limits.

mod normalizer;
mod sampling;
mod reduced;
mod simplex;

pub use normalizer::{
    bingham_coordinate_moment, bingham_moments, log_normalizer, log_normalizer_full, log_normalizer_rank_one,
    watson_mean_tangent, watson_tangent_moments, LogNormalizer, NormalizerMethod, NormalizerRequest,
};
pub use sampling::{mc_normalizer_oracle, sample_uniform_sphere, McEstimate};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Tolerance on unit norm for [`UnitSphereVector`].
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// A point on the complex unit sphere in `C^M`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSphereVector(Vec<Complex64>);

impl UnitSphereVector {
    /// Accepts `v` if its norm is one within [`UNIT_NORM_TOL`].
    pub fn new(v: Vec<Complex64>) -> Result<Self> {
        let n = norm(&v);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "vector norm {n} is not one"
            )));
        }
        Ok(Self(v))
    }

    /// Normalizes `v`; fails on the zero vector.
    pub fn normalized(mut v: Vec<Complex64>) -> Result<Self> {
        let n = norm(&v);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidArgument("cannot normalize zero vector".into()));
        }
        for x in v.iter_mut() {
            *x /= n;
        }
        Ok(Self(v))
    }

    /// The `k`-th standard basis vector of `C^m`.
    pub fn basis(m: usize, k: usize) -> Self {
        let mut v = vec![Complex64::new(0.0, 0.0); m];
        v[k] = Complex64::new(1.0, 0.0);
        Self(v)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }
}

pub(crate) fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `|a^H z|^2`.
pub fn squared_cosine(a: &[Complex64], z: &[Complex64]) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, y) in a.iter().zip(z) {
        acc += x.conj() * y;
    }
    acc.norm_sqr()
}

/// Degrees of freedom: finite and positive, or the `+inf` limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Nu {
    Finite(f64),
    Infinite,
}

impl Nu {
    pub fn new(value: f64) -> Result<Self> {
        if value == f64::INFINITY {
            Ok(Nu::Infinite)
        } else if value > 0.0 && value.is_finite() {
            Ok(Nu::Finite(value))
        } else {
            Err(Error::InvalidArgument(format!("nu must be positive, got {value}")))
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Nu::Finite(v) => Some(v),
            Nu::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Nu::Infinite)
    }

    /// Exponent `(nu + M) / 2` for finite `nu`.
    pub fn half_power(self, m: usize) -> Option<f64> {
        self.finite().map(|v| 0.5 * (v + m as f64))
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Nu::Finite(v) => v,
            Nu::Infinite => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Nu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Nu::Finite(v) => write!(f, "{v}"),
            Nu::Infinite => write!(f, "inf"),
        }
    }
}

/// Canonical Hermitian parameter `A = U diag(lambda) U^H` with
/// `lambda_1 = 0 >= lambda_2 >= ... >= lambda_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalHermitian {
    eigvecs: CMatrix,
    eigvals: Vec<f64>,
}

impl CanonicalHermitian {
    /// Builds a canonical shape from a unitary basis and eigenvalues.
    ///
    /// The eigenvalues must already be sorted descending with the first one
    /// equal to zero.
    pub fn from_parts(eigvecs: CMatrix, eigvals: Vec<f64>) -> Result<Self> {
        let m = eigvals.len();
        if eigvecs.nrows() != m || eigvecs.ncols() != m || m == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} basis for {} eigenvalues",
                eigvecs.nrows(),
                eigvecs.ncols(),
                m
            )));
        }
        if eigvals[0] != 0.0 || eigvals.iter().any(|&l| l > 0.0 || !l.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eigenvalues {eigvals:?} are not canonical"
            )));
        }
        if eigvals.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("eigenvalues must be descending".into()));
        }
        let gram = eigvecs.adjoint() * &eigvecs;
        let defect = (gram - CMatrix::identity(m, m)).norm();
        if defect > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "basis is not unitary (defect {defect:.3e})"
            )));
        }
        Ok(Self { eigvecs, eigvals })
    }

    /// The uniform shape `A = 0`.
    pub fn uniform(m: usize) -> Self {
        Self {
            eigvecs: CMatrix::identity(m, m),
            eigvals: vec![0.0; m],
        }
    }

    /// Diagonal canonical shape with the standard basis.
    pub fn diagonal(eigvals: Vec<f64>) -> Result<Self> {
        let m = eigvals.len();
        Self::from_parts(CMatrix::identity(m, m), eigvals)
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn eigvecs(&self) -> &CMatrix {
        &self.eigvecs
    }

    /// Dense `A`.
    pub fn matrix(&self) -> CMatrix {
        linalg::compose(&self.eigvecs, &self.eigvals)
    }

    /// `z^H A z = sum_j lambda_j |u_j^H z|^2` (always <= 0).
    pub fn quadratic(&self, z: &[Complex64]) -> f64 {
        self.eigvals
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, l)| **l != 0.0)
            .map(|(j, l)| l * linalg::projection_power(&self.eigvecs, j, z))
            .sum()
    }
}

/// Watson-constrained shape `A = -kappa (I - a a^H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneParams {
    pub a: UnitSphereVector,
    pub kappa: f64,
}

impl RankOneParams {
    pub fn new(a: UnitSphereVector, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(format!("kappa must be >= 0, got {kappa}")));
        }
        Ok(Self { a, kappa })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Equivalent full canonical shape with eigenvalues `(0, -kappa, ..., -kappa)`.
    pub fn to_canonical(&self) -> CanonicalHermitian {
        let m = self.dim();
        // Complete `a` to a unitary basis via the eigenvectors of a a^H.
        let a = nalgebra::DVector::from_column_slice(self.a.as_slice());
        let proj = &a * a.adjoint();
        let mut basis = linalg::hermitian_eigen(&proj).vectors;
        basis.set_column(0, &a);
        let mut eigvals = vec![-self.kappa; m];
        eigvals[0] = 0.0;
        if self.kappa == 0.0 {
            eigvals.iter_mut().for_each(|l| *l = 0.0);
        }
        CanonicalHermitian {
            eigvecs: basis,
            eigvals,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Full(CanonicalHermitian),
    RankOne(RankOneParams),
}

impl Shape {
    pub fn dim(&self) -> usize {
        match self {
            Shape::Full(c) => c.dim(),
            Shape::RankOne(r) => r.dim(),
        }
    }

    /// `z^H A z` for the canonical `A` of either shape.
    pub fn quadratic(&self, z: &[Complex64]) -> f64 {
        match self {
            Shape::Full(c) => c.quadratic(z),
            Shape::RankOne(r) => -r.kappa * (1.0 - squared_cosine(r.a.as_slice(), z)).max(0.0),
        }
    }
}

/// One mixture component: canonical shape plus degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct CstParams {
    pub shape: Shape,
    pub nu: Nu,
}

impl CstParams {
    pub fn uniform(m: usize, nu: Nu) -> Self {
        Self {
            shape: Shape::Full(CanonicalHermitian::uniform(m)),
            nu,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }
}

/// Maps a Hermitian matrix to the canonical representative of its density class.
pub fn canonicalize(matrix: &CMatrix, nu: Nu) -> Result<CanonicalHermitian> {
    let m = matrix.nrows();
    if matrix.ncols() != m || m == 0 {
        return Err(Error::ShapeMismatch(format!(
            "expected square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let scale = matrix.iter().map(|c| c.norm()).fold(1.0, f64::max);
    let defect = linalg::hermitian_defect(matrix);
    if defect > 1e-10 * scale {
        return Err(Error::NotHermitian(defect));
    }
    let eig = linalg::hermitian_eigen(matrix);
    let top = eig.values[0];
    let eigvals: Vec<f64> = match nu {
        Nu::Finite(v) => {
            if top >= 0.5 * v {
                return Err(Error::ConstraintViolation {
                    lambda_max: top,
                    half_nu: 0.5 * v,
                });
            }
            let denom = 1.0 - 2.0 * top / v;
            eig.values.iter().map(|l| ((l - top) / denom).min(0.0)).collect()
        }
        Nu::Infinite => eig.values.iter().map(|l| (l - top).min(0.0)).collect(),
    };
    let mut eigvals = eigvals;
    eigvals[0] = 0.0;
    Ok(CanonicalHermitian {
        eigvecs: eig.vectors,
        eigvals,
    })
}

/// Log of the unnormalized component density at `z`.
///
/// Finite `nu`: `-(nu+M)/2 * log(1 - (2/nu) z^H A z)`. Infinite `nu`:
/// `z^H A z`, which is the Bingham exponent for full shapes and
/// `-kappa (1 - |a^H z|^2)` for rank-one shapes.
pub fn log_unnormalized_density(z: &[Complex64], params: &CstParams) -> f64 {
    let x = params.shape.quadratic(z);
    match params.nu {
        Nu::Finite(v) => {
            let q = 0.5 * (v + z.len() as f64);
            -q * (-2.0 * x / v).ln_1p()
        }
        Nu::Infinite => x,
    }
}

/// Log of the normalized density w.r.t. the normalized uniform measure.
pub fn log_density(z: &[Complex64], params: &CstParams, log_c: f64) -> f64 {
    log_c + log_unnormalized_density(z, params)
}
