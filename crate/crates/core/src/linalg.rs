//! Small complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in descending order.
///
/// Each eigenvector is phase-normalized so that its first non-negligible
/// component is real and positive. Numerically tied eigenvalues are ordered
/// lexicographically (descending) by the real parts of those normalized
/// vectors, which makes the decomposition a deterministic function of the input.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Largest absolute entry of `m - m^H`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let d = m - m.adjoint();
    d.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn phase_normalize(v: &mut CVector) {
    let norm = v.norm();
    if norm == 0.0 {
        return;
    }
    if let Some(c) = v.iter().copied().find(|c| c.norm() > 1e-12 * norm) {
        let rot = c.conj() / c.norm();
        for x in v.iter_mut() {
            *x *= rot;
        }
    }
}

fn lex_desc(a: &CVector, b: &CVector) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match y.re.partial_cmp(&x.re) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

pub fn hermitian_eigen(m: &CMatrix) -> HermitianEigen {
    let n = m.nrows();
    let h = hermitian_part(m);
    let eig = h.symmetric_eigen();
    let mut pairs: Vec<(f64, CVector)> = (0..n)
        .map(|j| {
            let mut v: CVector = eig.eigenvectors.column(j).into_owned();
            let nv = v.norm();
            if nv > 0.0 {
                v /= Complex64::new(nv, 0.0);
            }
            phase_normalize(&mut v);
            (eig.eigenvalues[j], v)
        })
        .collect();
    let scale = pairs.iter().map(|p| p.0.abs()).fold(1.0, f64::max);
    let tie = 1e-12 * scale;
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Re-order runs of tied eigenvalues by the lexicographic key.
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (pairs[start].0 - pairs[end].0).abs() <= tie {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|a, b| lex_desc(&a.1, &b.1));
        }
        start = end;
    }
    let mut vectors = CMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (j, (val, v)) in pairs.into_iter().enumerate() {
        vectors.set_column(j, &v);
        values.push(val);
    }
    HermitianEigen { values, vectors }
}

/// Rebuilds `U diag(values) U^H`.
pub fn compose(vectors: &CMatrix, values: &[f64]) -> CMatrix {
    let n = vectors.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (j, &lam) in values.iter().enumerate() {
        let u = vectors.column(j);
        out += (&u * u.adjoint()) * Complex64::new(lam, 0.0);
    }
    out
}

/// Adds `scale * z z^H` to `acc` in place (lower and upper triangle).
pub fn add_outer(acc: &mut CMatrix, z: &[Complex64], scale: f64) {
    let m = z.len();
    for i in 0..m {
        for j in 0..m {
            acc[(i, j)] += z[i] * z[j].conj() * scale;
        }
    }
}

/// `|u^H z|^2` for a column `u` of `vectors`.
pub fn projection_power(vectors: &CMatrix, col: usize, z: &[Complex64]) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, zi) in z.iter().enumerate() {
        acc += vectors[(i, col)].conj() * zi;
    }
    acc.norm_sqr()
}

/// `z^H A z` for a Hermitian `A` given as a dense matrix.
pub fn quadratic_form(a: &CMatrix, z: &[Complex64]) -> f64 {
    let m = z.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..m {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..m {
            row += a[(i, j)] * z[j];
        }
        acc += z[i].conj() * row;
    }
    acc.re
}

pub fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}
