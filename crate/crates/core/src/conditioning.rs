//! Preconditioners that make a subspace basis well conditioned in lp.
//!
//! Two notions of condition number are tracked. The plain one is
//! kappa_p(A) = sigma_max / sigma_min with sigma_max = max_{||x||_2 <= 1}
//! ||Ax||_p and sigma_min the corresponding minimum. The elementwise one is
//! kappa_bar_p(A) = alpha * beta where |A|_p <= alpha (elementwise p-norm)
//! and ||z||_q <= beta ||Az||_p for all z, q the dual exponent. They
//! sandwich each other within poly(d) factors:
//!
//!   d^{-|1/2 - 1/p|} kappa_p <= kappa_bar_p <= d^{max(1/2, 1/p)} kappa_p.
//!
//! The default conditioner takes a QR factorization of a low-distortion
//! sketch B of A; A R^{-1} then inherits B R^{-1}'s conditioning up to the
//! sketch distortion. An iterative ellipsoid rounding pass can squeeze the
//! constant further on small matrices; it is opt-in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, RngStream};
use crate::sparse::{lp_norm, lp_norm_pow, max_abs, DenseMatrix, SparseMatrix};

/// Relative tolerance on QR diagonals below which a column counts as
/// numerically dependent.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMethod {
    Qr,
    Rounding,
}

/// An invertible d x d change of basis R; A R^{-1} is the conditioned view.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conditioner {
    r: DenseMatrix,
    r_inv: DenseMatrix,
    method: ConditionMethod,
    /// measured kappa_bar of B R^{-1} when the method computes one
    achieved_kappa_bar: Option<f64>,
    /// set when iterative rounding gave up and fell back to plain QR
    fell_back: bool,
}

impl Conditioner {
    /// Wrap an explicit invertible basis change R. Errors if R is not
    /// square or not invertible.
    pub fn from_r(r: DenseMatrix) -> Result<Self> {
        if r.n_rows() != r.n_cols() || r.n_rows() == 0 {
            return Err(Error::invalid(
                "r",
                format!("expected a nonempty square matrix, got {} x {}", r.n_rows(), r.n_cols()),
            ));
        }
        let r_inv = r
            .to_na()
            .try_inverse()
            .ok_or(Error::RankDeficient { column: 0 })?;
        Ok(Conditioner {
            r_inv: DenseMatrix::from_na(&r_inv),
            r,
            method: ConditionMethod::Qr,
            achieved_kappa_bar: None,
            fell_back: false,
        })
    }

    pub fn r(&self) -> &DenseMatrix {
        &self.r
    }

    pub fn r_inv(&self) -> &DenseMatrix {
        &self.r_inv
    }

    pub fn method(&self) -> ConditionMethod {
        self.method
    }

    pub fn achieved_kappa_bar(&self) -> Option<f64> {
        self.achieved_kappa_bar
    }

    pub fn fell_back(&self) -> bool {
        self.fell_back
    }

    pub fn d(&self) -> usize {
        self.r.n_rows()
    }

    /// R x.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.r.matvec(x)
    }

    /// R^{-1} x.
    pub fn apply_inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.r_inv.matvec(x)
    }

    /// M R^{-1} for a dense M.
    pub fn precondition_dense(&self, m: &DenseMatrix) -> DenseMatrix {
        m.matmul(&self.r_inv).expect("conditioner dimension agrees")
    }

    /// Lazy A R^{-1} view over a sparse A.
    pub fn preconditioned<'a>(&'a self, a: &'a SparseMatrix) -> Preconditioned<'a> {
        Preconditioned {
            a,
            r_inv: &self.r_inv,
        }
    }
}

/// Invert an upper triangular matrix by back substitution.
fn invert_upper_triangular(r: &DenseMatrix) -> DenseMatrix {
    let d = r.n_rows();
    let mut inv = DenseMatrix::zeros(d, d);
    for col in 0..d {
        // solve R x = e_col
        let mut x = vec![0.0; d];
        x[col] = 1.0;
        for i in (0..d).rev() {
            let mut acc = x[i];
            for k in (i + 1)..d {
                acc -= r.get(i, k) * x[k];
            }
            x[i] = acc / r.get(i, i);
        }
        for i in 0..d {
            inv.set(i, col, x[i]);
        }
    }
    inv
}

/// QR-based conditioner of a (typically sketched) matrix B. The returned R
/// has a positive diagonal; a diagonal entry below RANK_TOL times the
/// largest flags the offending column as rank deficient.
pub fn qr_condition(b: &DenseMatrix) -> Result<Conditioner> {
    if b.n_rows() < b.n_cols() {
        return Err(Error::dims(
            "qr_condition",
            format!(">= {} rows", b.n_cols()),
            format!("{}", b.n_rows()),
        ));
    }
    let d = b.n_cols();
    if d == 0 {
        return Err(Error::EmptyInput {
            what: "qr_condition",
            reason: "zero columns".into(),
        });
    }
    let qr = b.to_na().qr();
    let r_na = qr.r();
    let mut r = DenseMatrix::zeros(d, d);
    for i in 0..d {
        let flip = if r_na[(i, i)] < 0.0 { -1.0 } else { 1.0 };
        for j in i..d {
            r.set(i, j, flip * r_na[(i, j)]);
        }
    }
    let max_diag = (0..d).map(|i| r.get(i, i)).fold(0.0_f64, f64::max);
    for i in 0..d {
        if r.get(i, i) <= RANK_TOL * max_diag {
            return Err(Error::RankDeficient { column: i });
        }
    }
    let r_inv = invert_upper_triangular(&r);
    Ok(Conditioner {
        r,
        r_inv,
        method: ConditionMethod::Qr,
        achieved_kappa_bar: None,
        fell_back: false,
    })
}

/// Extreme singular values via the d x d Gram eigenvalues.
pub fn sigma_range(m: &DenseMatrix) -> (f64, f64) {
    let na = m.to_na();
    let gram = na.transpose() * &na;
    let eig = gram.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for &l in eig.eigenvalues.iter() {
        let s = l.max(0.0).sqrt();
        lo = lo.min(s);
        hi = hi.max(s);
    }
    (lo, hi)
}

/// Anything that can act as x -> Ax for condition estimation.
pub trait LinearMap {
    fn map_rows(&self) -> usize;
    fn map_cols(&self) -> usize;
    fn map_apply(&self, x: &[f64]) -> Vec<f64>;
    /// sum of |entry|^p over the materialized matrix
    fn elementwise_pow(&self, p: f64) -> f64;
}

impl LinearMap for SparseMatrix {
    fn map_rows(&self) -> usize {
        self.n_rows()
    }
    fn map_cols(&self) -> usize {
        self.n_cols()
    }
    fn map_apply(&self, x: &[f64]) -> Vec<f64> {
        self.matvec(x).expect("probe length matches")
    }
    fn elementwise_pow(&self, p: f64) -> f64 {
        self.row_lp_norms(p).iter().sum()
    }
}

impl LinearMap for DenseMatrix {
    fn map_rows(&self) -> usize {
        self.n_rows()
    }
    fn map_cols(&self) -> usize {
        self.n_cols()
    }
    fn map_apply(&self, x: &[f64]) -> Vec<f64> {
        self.matvec(x).expect("probe length matches")
    }
    fn elementwise_pow(&self, p: f64) -> f64 {
        self.row_lp_norms(p).iter().sum()
    }
}

/// A R^{-1} without materializing it.
pub struct Preconditioned<'a> {
    a: &'a SparseMatrix,
    r_inv: &'a DenseMatrix,
}

impl Preconditioned<'_> {
    /// Dense row j of A R^{-1}.
    pub fn row_dense(&self, j: usize, out: &mut [f64]) {
        out.fill(0.0);
        let (cols, vals) = self.a.row(j);
        for (&k, &v) in cols.iter().zip(vals) {
            let rrow = self.r_inv.row(k);
            for (o, &r) in out.iter_mut().zip(rrow) {
                *o += v * r;
            }
        }
    }
}

impl LinearMap for Preconditioned<'_> {
    fn map_rows(&self) -> usize {
        self.a.n_rows()
    }
    fn map_cols(&self) -> usize {
        self.r_inv.n_cols()
    }
    fn map_apply(&self, x: &[f64]) -> Vec<f64> {
        let t = self.r_inv.matvec(x).expect("probe length matches");
        self.a.matvec(&t).expect("conditioner dimension agrees")
    }
    fn elementwise_pow(&self, p: f64) -> f64 {
        let d = self.map_cols();
        let mut row = vec![0.0; d];
        let mut acc = 0.0;
        for j in 0..self.a.n_rows() {
            self.row_dense(j, &mut row);
            acc += lp_norm_pow(&row, p);
        }
        acc
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionEstimate {
    pub p: f64,
    pub d: usize,
    /// exact elementwise p-norm |A|_p
    pub alpha: f64,
    /// probe maximum of ||z||_q / ||Az||_p, q dual to p
    pub beta_hat: f64,
    pub kappa_bar_hat: f64,
    pub sigma_min_hat: f64,
    pub sigma_max_hat: f64,
}

impl ConditionEstimate {
    pub fn kappa_hat(&self) -> f64 {
        self.sigma_max_hat / self.sigma_min_hat
    }

    /// The two-sided poly(d) sandwich between kappa and kappa_bar, slackened
    /// by `tol` to absorb probe underestimation.
    pub fn sandwich_ok(&self, tol: f64) -> bool {
        let d = self.d as f64;
        let p = self.p;
        let kappa = self.kappa_hat();
        let lower = d.powf(-(0.5 - 1.0 / p).abs()) * kappa;
        let upper = d.powf((0.5_f64).max(1.0 / p)) * kappa;
        lower <= self.kappa_bar_hat * (1.0 + tol) && self.kappa_bar_hat <= upper * (1.0 + tol)
    }
}

/// Deterministic near-uniform unit directions: for d <= 3 an exhaustive
/// grid stands in for the sphere (at least `min_points` points).
fn sphere_grid(d: usize, min_points: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => {
            let g = min_points.max(4);
            (0..g)
                .map(|i| {
                    let t = 2.0 * std::f64::consts::PI * i as f64 / g as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect()
        }
        3 => {
            // Fibonacci spiral covering of the 2-sphere
            let g = min_points.max(4);
            let golden = std::f64::consts::PI * (3.0 - (5.0_f64).sqrt());
            (0..g)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / g as f64;
                    let rad = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * i as f64;
                    vec![rad * phi.cos(), rad * phi.sin(), z]
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Minimum grid size per sphere when d <= 3.
pub const SPHERE_GRID_POINTS: usize = 10_000;

/// Estimate both condition numbers of a map by probing: the 2d signed
/// coordinate directions, `probes` random unit directions, and for d <= 3
/// an exhaustive sphere grid. alpha is computed exactly; beta, sigma_min,
/// sigma_max are probe extrema (so kappa_bar_hat = alpha * beta_hat is a
/// lower estimate of kappa_bar).
pub fn estimate_condition<M: LinearMap + ?Sized>(
    a: &M,
    p: f64,
    probes: usize,
    seed: RngStream,
) -> Result<ConditionEstimate> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} outside [1, 2]")));
    }
    let d = a.map_cols();
    if d == 0 || a.map_rows() == 0 {
        return Err(Error::EmptyInput {
            what: "estimate_condition",
            reason: "empty map".into(),
        });
    }
    let q_dual = if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) };
    let mut sigma_min = f64::INFINITY;
    let mut sigma_max = 0.0_f64;
    let mut beta_hat = 0.0_f64;
    let mut consider = |x: &[f64]| {
        let y = a.map_apply(x);
        let np = lp_norm(&y, p);
        // normalize by the l2 length so callers may pass unnormalized probes
        let x2 = lp_norm(x, 2.0);
        if x2 == 0.0 {
            return;
        }
        sigma_min = sigma_min.min(np / x2);
        sigma_max = sigma_max.max(np / x2);
        let zq = if q_dual.is_infinite() {
            max_abs(x)
        } else {
            lp_norm(x, q_dual)
        };
        beta_hat = beta_hat.max(if np == 0.0 { f64::INFINITY } else { zq / np });
    };
    let mut x = vec![0.0; d];
    for k in 0..d {
        for sign in [1.0, -1.0] {
            x[k] = sign;
            consider(&x);
            x[k] = 0.0;
        }
    }
    let mut rng = seed.rng();
    for _ in 0..probes {
        for xi in x.iter_mut() {
            *xi = rng::sample_gaussian(&mut rng);
        }
        consider(&x);
    }
    for g in sphere_grid(d, SPHERE_GRID_POINTS) {
        consider(&g);
    }
    let alpha = a.elementwise_pow(p).powf(1.0 / p);
    Ok(ConditionEstimate {
        p,
        d,
        alpha,
        beta_hat,
        kappa_bar_hat: alpha * beta_hat,
        sigma_min_hat: sigma_min,
        sigma_max_hat: sigma_max,
    })
}

/// Iterative ellipsoid rounding of a small dense B: greedily equalizes the
/// probe ratios ||B T x||_p over unit x by rank-one updates of T, keeping
/// the best T seen. Returns a Conditioner with R = T^{-1} and the measured
/// kappa_bar of B R^{-1}; falls back to the plain QR conditioner (with
/// `fell_back` set) when max_iters is 0 or no update improved on QR.
/// Deterministic: probes come from a fixed internal stream.
pub fn ellipsoidal_round(b: &DenseMatrix, p: f64, max_iters: usize) -> Result<Conditioner> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} outside [1, 2]")));
    }
    let d = b.n_cols();
    let base = qr_condition(b)?;
    let probe_seed = RngStream::with_stream(0x454C_4C49_5053_4F49, 17);
    let spread_of = |t: &DenseMatrix| -> (f64, Vec<f64>, f64, Vec<f64>) {
        let bt = b.matmul(t).expect("square T");
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        let mut xlo = vec![0.0; d];
        let mut xhi = vec![0.0; d];
        let mut consider = |x: &[f64]| {
            let y = bt.matvec(x).expect("probe length");
            let r = lp_norm(&y, p) / lp_norm(x, 2.0);
            if r < lo {
                lo = r;
                xlo = x.to_vec();
            }
            if r > hi {
                hi = r;
                xhi = x.to_vec();
            }
        };
        let mut x = vec![0.0; d];
        for k in 0..d {
            x[k] = 1.0;
            consider(&x);
            x[k] = 0.0;
        }
        let mut rng = probe_seed.rng();
        for _ in 0..(200 * d) {
            for xi in x.iter_mut() {
                *xi = rng::sample_gaussian(&mut rng);
            }
            let n = lp_norm(&x, 2.0);
            if n > 1e-12 {
                for xi in x.iter_mut() {
                    *xi /= n;
                }
                consider(&x);
            }
        }
        for g in sphere_grid(d, 2000) {
            consider(&g);
        }
        (lo, xlo, hi, xhi)
    };

    let mut t = base.r_inv.clone();
    let mut best_t = t.clone();
    let (mut lo, mut xlo, mut hi, mut xhi) = spread_of(&t);
    let mut best_spread = hi / lo;
    let mut improved = false;
    for _ in 0..max_iters {
        if lo <= 0.0 || !lo.is_finite() || !hi.is_finite() {
            break;
        }
        let spread = hi / lo;
        if spread < 1.0 + 1e-9 {
            break;
        }
        // contract the loudest direction toward the geometric mean
        let g = (hi * lo).sqrt();
        let (x_star, c) = if hi / g >= g / lo {
            (xhi.clone(), hi / g)
        } else {
            (xlo.clone(), lo / g)
        };
        let u = t.matvec(&x_star).expect("square T");
        let coef = 1.0 / c - 1.0;
        for i in 0..d {
            for j in 0..d {
                t.set(i, j, t.get(i, j) + coef * u[i] * x_star[j]);
            }
        }
        let (nlo, nxlo, nhi, nxhi) = spread_of(&t);
        if !(nlo.is_finite() && nhi.is_finite()) || nlo <= 0.0 {
            break;
        }
        let new_spread = nhi / nlo;
        if new_spread < best_spread * (1.0 - 1e-9) {
            best_spread = new_spread;
            best_t = t.clone();
            improved = true;
        } else if new_spread > best_spread * 4.0 {
            break;
        }
        lo = nlo;
        xlo = nxlo;
        hi = nhi;
        xhi = nxhi;
    }

    if !improved {
        let bt = base.precondition_dense(b);
        let est = estimate_condition(&bt, p, 200, probe_seed.substream(1))?;
        return Ok(Conditioner {
            achieved_kappa_bar: Some(est.kappa_bar_hat),
            fell_back: true,
            ..base
        });
    }
    let r_na = best_t.to_na();
    let Some(r_inv_na) = r_na.clone().try_inverse() else {
        let bt = base.precondition_dense(b);
        let est = estimate_condition(&bt, p, 200, probe_seed.substream(1))?;
        return Ok(Conditioner {
            achieved_kappa_bar: Some(est.kappa_bar_hat),
            fell_back: true,
            ..base
        });
    };
    // T maps the conditioned frame back to the original: R = T^{-1}
    let r = DenseMatrix::from_na(&r_inv_na);
    let r_inv = best_t;
    let bt = b.matmul(&r_inv).expect("square T");
    let est = estimate_condition(&bt, p, 200, probe_seed.substream(1))?;
    Ok(Conditioner {
        r,
        r_inv,
        method: ConditionMethod::Rounding,
        achieved_kappa_bar: Some(est.kappa_bar_hat),
        fell_back: false,
    })
}
