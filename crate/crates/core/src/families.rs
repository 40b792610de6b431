//! Test matrix generators used by the verification harnesses and the CLI.
//!
//! `density` is the fraction of the d columns populated per row: each row
//! gets max(1, round(density * d)) distinct random columns. Generators
//! retry a few times until the result has full column rank (checked through
//! the d x d Gram matrix, never by densifying).

use rand::seq::index::sample as index_sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sparse::SparseMatrix;

fn per_row_count(d: usize, density: f64) -> Result<usize> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid("density", format!("{density} outside (0, 1]")));
    }
    Ok(((density * d as f64).round() as usize).clamp(1, d))
}

fn has_full_column_rank(a: &SparseMatrix) -> bool {
    let g = a.gram().to_na();
    match g.cholesky() {
        Some(c) => {
            let diag_min = (0..a.n_cols())
                .map(|i| c.l_dirty()[(i, i)])
                .fold(f64::INFINITY, f64::min);
            diag_min > 1e-10
        }
        None => false,
    }
}

fn random_rows(
    n: usize,
    d: usize,
    per_row: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize, f64)> {
    let mut triplets = Vec::with_capacity(n * per_row);
    for r in 0..n {
        for c in index_sample(rng, d, per_row) {
            let mut v: f64 = rng.random::<f64>() * 2.0 - 1.0;
            if v == 0.0 {
                v = 0.5;
            }
            triplets.push((r, c, v));
        }
    }
    triplets
}

/// Uniformly sparse random matrix with full column rank.
pub fn random_sparse(n: usize, d: usize, density: f64, seed: RngStream) -> Result<SparseMatrix> {
    let per_row = per_row_count(d, density)?;
    if n < d {
        return Err(Error::invalid("n", format!("{n} rows cannot span {d} columns")));
    }
    for attempt in 0..10 {
        let mut rng = seed.substream(attempt).rng();
        let a = SparseMatrix::from_triplets(n, d, &random_rows(n, d, per_row, &mut rng))?;
        if has_full_column_rank(&a) {
            return Ok(a);
        }
    }
    Err(Error::NonConvergence {
        what: "random_sparse full-rank generation",
        iterations: 10,
    })
}

/// Random matrix whose first ceil(d/2) rows are scaled by 1e3: a few rows
/// carry almost all the leverage, the worst case for uniform sampling.
pub fn spiky_leverage(n: usize, d: usize, density: f64, seed: RngStream) -> Result<SparseMatrix> {
    let per_row = per_row_count(d, density)?;
    if n < d {
        return Err(Error::invalid("n", format!("{n} rows cannot span {d} columns")));
    }
    let spikes = d.div_ceil(2);
    for attempt in 0..10 {
        let mut rng = seed.substream(attempt).rng();
        let mut triplets = random_rows(n, d, per_row, &mut rng);
        for t in triplets.iter_mut() {
            if t.0 < spikes {
                t.2 *= 1e3;
            }
        }
        let a = SparseMatrix::from_triplets(n, d, &triplets)?;
        if has_full_column_rank(&a) {
            return Ok(a);
        }
    }
    Err(Error::NonConvergence {
        what: "spiky_leverage full-rank generation",
        iterations: 10,
    })
}

/// Rows 0..d are the identity; the rest are zero. Leverage sits entirely on
/// the top block.
pub fn identity_top(n: usize, d: usize) -> Result<SparseMatrix> {
    if n < d {
        return Err(Error::invalid("n", format!("{n} rows cannot hold I_{d}")));
    }
    let triplets: Vec<_> = (0..d).map(|k| (k, k, 1.0)).collect();
    SparseMatrix::from_triplets(n, d, &triplets)
}

/// (A, b, x_true) with b = A x_true exactly.
pub fn consistent_pair(
    n: usize,
    d: usize,
    density: f64,
    seed: RngStream,
) -> Result<(SparseMatrix, Vec<f64>, Vec<f64>)> {
    let a = random_sparse(n, d, density, seed.substream(1))?;
    let mut rng = seed.substream(2).rng();
    let x_true: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let b = a.matvec(&x_true)?;
    Ok((a, b, x_true))
}

/// (A, b, x_true) with b = A x_true + noise, where a `outlier_frac` fraction
/// of entries get heavy additive noise of size `outlier_scale` and the rest
/// get small Gaussian noise. The natural input for robust regression tests.
pub fn noisy_pair(
    n: usize,
    d: usize,
    density: f64,
    outlier_frac: f64,
    outlier_scale: f64,
    seed: RngStream,
) -> Result<(SparseMatrix, Vec<f64>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&outlier_frac) {
        return Err(Error::invalid("outlier_frac", format!("{outlier_frac} outside [0, 1]")));
    }
    let (a, mut b, x_true) = consistent_pair(n, d, density, seed.substream(1))?;
    let mut rng = seed.substream(3).rng();
    for bi in b.iter_mut() {
        *bi += 0.01 * crate::rng::sample_gaussian(&mut rng);
        if rng.random::<f64>() < outlier_frac {
            *bi += outlier_scale * crate::rng::sample_gaussian(&mut rng);
        }
    }
    Ok((a, b, x_true))
}
