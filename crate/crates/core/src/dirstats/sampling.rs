use super::{CstParams, Nu, Shape, UnitSphereVector};
use crate::error::{Error, Result};
use crate::linalg;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Draws a point uniformly from the complex unit sphere in `C^m` by
/// normalizing a standard circular complex Gaussian vector.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(m: usize, rng: &mut R) -> UnitSphereVector {
    assert!(m >= 1, "dimension must be positive");
    loop {
        let v: Vec<Complex64> = (0..m)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im)
            })
            .collect();
        if let Ok(u) = UnitSphereVector::normalized(v) {
            return u;
        }
    }
}

/// Monte Carlo estimate of `C^{-1}` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

const CHUNK: usize = 50_000;

/// Averages the unnormalized density over uniform sphere draws.
///
/// This evaluates the density from the dense parameter matrix rather than
/// the eigen-coordinates, so it shares no code path with the simplex
/// quadrature it is used to check.
pub fn mc_normalizer_oracle<R: Rng + ?Sized>(
    params: &CstParams,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    let v = match params.nu {
        Nu::Finite(v) => v,
        Nu::Infinite => {
            return Err(Error::InvalidArgument(
                "Monte Carlo oracle requires finite nu".into(),
            ))
        }
    };
    if n_samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let m = params.dim();
    let a = match &params.shape {
        Shape::Full(c) => c.matrix(),
        Shape::RankOne(r) => r.to_canonical().matrix(),
    };
    let q = 0.5 * (v + m as f64);
    let n_chunks = n_samples.div_ceil(CHUNK);
    let seeds: Vec<u64> = (0..n_chunks).map(|_| rng.random()).collect();
    let partial: Vec<(f64, f64)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut local = ChaCha8Rng::seed_from_u64(seed);
            let count = CHUNK.min(n_samples - i * CHUNK);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for _ in 0..count {
                let z = sample_uniform_sphere(m, &mut local);
                let x = linalg::quadratic_form(&a, z.as_slice());
                let p = (1.0 - 2.0 * x / v).powf(-q);
                s1 += p;
                s2 += p * p;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = partial
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let n = n_samples as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples: n_samples,
    })
}
