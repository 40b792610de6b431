//! Sparse subspace embeddings applied in one pass over the nonzeros.
//!
//! A plan fixes the random map Pi = S D: row j of the input is hashed to
//! bucket `bucket_of[j]` and scaled by `diag[j]`. The diagonal law depends
//! on the target norm: random signs for l2, standard Cauchy for l1, and
//! symmetric p-stable for p in (1, 2). Applying the plan costs exactly one
//! multiply-add per stored nonzero.
//!
//! The guarantees behind the defaults: with s = (d^2 + d) / (eps^2 delta)
//! the sign sketch preserves every vector of an d-dimensional subspace to
//! (1 +- eps) in l2 with probability 1 - delta. The heavy-tailed sketches
//! give constant-factor-times-poly(d) distortion in lp once s grows like
//! d^5 log^5 d; they are used as preconditioner input, not for accuracy.

use serde::{Deserialize, Serialize};

use crate::conditioning::{self, Conditioner};
use crate::error::{Error, Result};
use crate::rng::{self, RngStream, StableParams};
use crate::sparse::{lp_norm, DenseMatrix, SparseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "p")]
pub enum SketchKind {
    /// +-1 diagonal, for p = 2.
    SignL2,
    /// Standard Cauchy diagonal, for p = 1.
    CauchyL1,
    /// Symmetric p-stable diagonal, for p in (1, 2).
    PStable(f64),
    /// Dense i.i.d. p-stable map (one dense column per input row); smaller
    /// target dimension, cost O(nnz * s) instead of O(nnz).
    DensePStable(f64),
}

impl SketchKind {
    /// The norm exponent this sketch targets.
    pub fn p(&self) -> f64 {
        match self {
            SketchKind::SignL2 => 2.0,
            SketchKind::CauchyL1 => 1.0,
            SketchKind::PStable(p) | SketchKind::DensePStable(p) => *p,
        }
    }

    /// Pick the hashed sketch kind for a norm exponent.
    pub fn for_p(p: f64) -> Result<SketchKind> {
        if p == 1.0 {
            Ok(SketchKind::CauchyL1)
        } else if p == 2.0 {
            Ok(SketchKind::SignL2)
        } else if (1.0..2.0).contains(&p) {
            Ok(SketchKind::PStable(p))
        } else {
            Err(Error::invalid("p", format!("{p} outside [1, 2]")))
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SketchKind::PStable(p) | SketchKind::DensePStable(p) => {
                StableParams::new(*p).map(|_| ())
            }
            _ => Ok(()),
        }
    }

    /// The growth law that sizes this sketch in theory, recorded in reports.
    pub fn theory_rows(&self) -> &'static str {
        match self {
            SketchKind::SignL2 => "(d^2 + d) / (eps^2 * delta)",
            SketchKind::CauchyL1 | SketchKind::PStable(_) => "omega * d^5 * log^5 d",
            SketchKind::DensePStable(_) => "omega * d * log d",
        }
    }
}

/// Rows needed by the sign sketch for (1 +- eps) l2 distortion with failure
/// probability delta.
pub fn l2_sketch_rows(d: usize, eps: f64, delta: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", format!("{eps} outside (0, 1)")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("{delta} outside (0, 1)")));
    }
    let d = d as f64;
    Ok(((d * d + d) / (eps * eps * delta)).ceil() as usize)
}

/// Desk-scale default for the heavy-tailed sketches: c * d^2 rows. The
/// theoretical law is far larger; c is a tunable knob.
pub fn lp_sketch_rows(d: usize, c: f64) -> usize {
    ((c * (d * d) as f64).ceil() as usize).max(1)
}

/// A materialized sketching map. Reconstructible from (kind, n, s, seed)
/// alone: draws are issued row by row, bucket before diagonal.
#[derive(Clone, Debug)]
pub struct SketchPlan {
    kind: SketchKind,
    n: usize,
    s: usize,
    seed: RngStream,
    bucket_of: Vec<usize>,
    diag: Vec<f64>,
}

impl SketchPlan {
    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn seed(&self) -> RngStream {
        self.seed
    }

    pub fn bucket_of(&self) -> &[usize] {
        &self.bucket_of
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }
}

pub fn plan_sketch(kind: SketchKind, n: usize, s: usize, seed: RngStream) -> Result<SketchPlan> {
    kind.validate()?;
    if let SketchKind::DensePStable(_) = kind {
        return Err(Error::invalid(
            "kind",
            "dense p-stable maps have no hashed plan; use apply_dense_pstable",
        ));
    }
    if n == 0 || s == 0 {
        return Err(Error::invalid("shape", format!("n = {n}, s = {s} must be positive")));
    }
    let mut rng = seed.rng();
    let mut bucket_of = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    let stable = match kind {
        SketchKind::PStable(p) => Some(StableParams::new(p)?),
        _ => None,
    };
    for _ in 0..n {
        bucket_of.push(rand::Rng::random_range(&mut rng, 0..s));
        let v = match kind {
            SketchKind::SignL2 => rng::sample_sign(&mut rng),
            SketchKind::CauchyL1 => rng::sample_cauchy(&mut rng),
            SketchKind::PStable(_) => rng::sample_pstable(stable.unwrap(), &mut rng),
            SketchKind::DensePStable(_) => unreachable!(),
        };
        diag.push(v);
    }
    Ok(SketchPlan {
        kind,
        n,
        s,
        seed,
        bucket_of,
        diag,
    })
}

fn apply_plan<'a, I>(plan: &SketchPlan, n_rows: usize, n_cols: usize, rows: I) -> (DenseMatrix, usize)
where
    I: Iterator<Item = (usize, &'a [usize], &'a [f64])>,
{
    debug_assert_eq!(n_rows, plan.n);
    let mut out = DenseMatrix::zeros(plan.s, n_cols);
    let mut ops = 0usize;
    for (j, cols, vals) in rows {
        let b = plan.bucket_of[j];
        let dj = plan.diag[j];
        let out_row = out.row_mut(b);
        for (&c, &v) in cols.iter().zip(vals) {
            out_row[c] += dj * v;
            ops += 1;
        }
    }
    (out, ops)
}

/// Pi * A for a sparse input, one multiply-add per stored nonzero. Also
/// returns the multiply-add count for instrumentation.
pub fn apply_sketch_counting(plan: &SketchPlan, a: &SparseMatrix) -> Result<(DenseMatrix, usize)> {
    if a.n_rows() != plan.n {
        return Err(Error::dims(
            "apply_sketch",
            format!("{} rows", plan.n),
            format!("{}", a.n_rows()),
        ));
    }
    Ok(apply_plan(plan, a.n_rows(), a.n_cols(), a.rows()))
}

pub fn apply_sketch(plan: &SketchPlan, a: &SparseMatrix) -> Result<DenseMatrix> {
    apply_sketch_counting(plan, a).map(|(m, _)| m)
}

/// Pi * U for a dense input (used to sketch orthonormal bases directly).
pub fn apply_sketch_dense(plan: &SketchPlan, u: &DenseMatrix) -> Result<DenseMatrix> {
    if u.n_rows() != plan.n {
        return Err(Error::dims(
            "apply_sketch_dense",
            format!("{} rows", plan.n),
            format!("{}", u.n_rows()),
        ));
    }
    let mut out = DenseMatrix::zeros(plan.s, u.n_cols());
    for j in 0..u.n_rows() {
        let b = plan.bucket_of[j];
        let dj = plan.diag[j];
        let row = u.row(j);
        let out_row = out.row_mut(b);
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                out_row[c] += dj * v;
            }
        }
    }
    Ok(out)
}

/// Pi * A where Pi is s x n with i.i.d. symmetric p-stable entries. Columns
/// of Pi are generated per input row from `seed.substream(j)`, and only for
/// rows that have nonzeros, so memory stays O(s * d + s).
pub fn apply_dense_pstable(
    params: StableParams,
    s: usize,
    a: &SparseMatrix,
    seed: RngStream,
) -> Result<DenseMatrix> {
    if s == 0 {
        return Err(Error::invalid("s", "must be positive"));
    }
    let mut out = DenseMatrix::zeros(s, a.n_cols());
    let mut col = vec![0.0; s];
    for (j, cols, vals) in a.rows() {
        if cols.is_empty() {
            continue;
        }
        let mut rng = seed.substream(j as u64).rng();
        for c in col.iter_mut() {
            *c = rng::sample_pstable(params, &mut rng);
        }
        for (&c, &v) in cols.iter().zip(vals) {
            for (i, &pi) in col.iter().enumerate() {
                out.set(i, c, out.get(i, c) + pi * v);
            }
        }
    }
    Ok(out)
}

/// Exact l2 distortion of B relative to A's column span, given a QR
/// conditioner of A: the extreme singular values of B R^{-1}.
pub fn exact_l2_distortion(b: &DenseMatrix, r_of_a: &Conditioner) -> (f64, f64) {
    let m = r_of_a.precondition_dense(b);
    conditioning::sigma_range(&m)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortionReport {
    pub kind: String,
    pub p: f64,
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub master_seed: u64,
    pub stream_id: u64,
    /// min and max of ||Bx||_p / ||Ax||_p over the probe directions
    pub probe_lower: f64,
    pub probe_upper: f64,
    /// extreme singular values of B R^{-1}; p = 2 with n small enough only
    pub exact: Option<(f64, f64)>,
    pub exact_skipped: Option<String>,
    pub probes_evaluated: usize,
    pub probes_skipped: usize,
    /// theoretical sizing law for this sketch family
    pub theory_rows: String,
}

/// Largest n for which the exact p = 2 path densifies A and takes a QR.
pub const EXACT_L2_MAX_ROWS: usize = 100_000;

/// Measure the distortion of B as an embedding of A's row space in lp:
/// ratios ||Bx||_p / ||Ax||_p over the 2d signed coordinate directions plus
/// `probes` random unit directions. Probes with ||Ax||_p = 0 are skipped and
/// counted. For p = 2 and n <= EXACT_L2_MAX_ROWS the exact extreme singular
/// values of B R^{-1} are computed as well (skipped with a note if A is
/// rank deficient).
pub fn measure_distortion(
    a: &SparseMatrix,
    b: &DenseMatrix,
    kind_label: &str,
    theory: &str,
    p: f64,
    probes: usize,
    seed: RngStream,
) -> Result<DistortionReport> {
    if a.n_cols() != b.n_cols() {
        return Err(Error::dims(
            "measure_distortion",
            format!("{} cols", a.n_cols()),
            format!("{}", b.n_cols()),
        ));
    }
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} outside [1, 2]")));
    }
    let d = a.n_cols();
    if d == 0 {
        return Err(Error::EmptyInput {
            what: "measure_distortion",
            reason: "zero columns".into(),
        });
    }

    // p = 2 ratio evaluation goes through the d x d Grams
    let grams = if p == 2.0 {
        Some((a.to_dense().gram(), b.gram()))
    } else {
        None
    };
    let ratio_of = |x: &[f64]| -> Result<Option<f64>> {
        let (na, nb) = match &grams {
            Some((ga, gb)) => {
                let qa = quad_form(ga, x).max(0.0).sqrt();
                let qb = quad_form(gb, x).max(0.0).sqrt();
                (qa, qb)
            }
            None => {
                let ax = a.matvec(x)?;
                let bx = b.matvec(x)?;
                (lp_norm(&ax, p), lp_norm(&bx, p))
            }
        };
        if na == 0.0 {
            return Ok(None);
        }
        Ok(Some(nb / na))
    };

    let mut lower = f64::INFINITY;
    let mut upper = 0.0_f64;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    let mut x = vec![0.0; d];
    let mut consider = |r: Option<f64>| {
        match r {
            Some(r) => {
                lower = lower.min(r);
                upper = upper.max(r);
                evaluated += 1;
            }
            None => skipped += 1,
        }
    };
    for k in 0..d {
        for sign in [1.0, -1.0] {
            x[k] = sign;
            let r = ratio_of(&x)?;
            consider(r);
            x[k] = 0.0;
        }
    }
    let mut rng = seed.rng();
    for _ in 0..probes {
        loop {
            let mut norm = 0.0;
            for xi in x.iter_mut() {
                *xi = rng::sample_gaussian(&mut rng);
                norm += *xi * *xi;
            }
            norm = norm.sqrt();
            if norm > 1e-12 {
                for xi in x.iter_mut() {
                    *xi /= norm;
                }
                break;
            }
        }
        let r = ratio_of(&x)?;
        consider(r);
    }
    if evaluated == 0 {
        return Err(Error::EmptyInput {
            what: "measure_distortion",
            reason: "every probe had ||Ax||_p = 0".into(),
        });
    }

    let mut exact = None;
    let mut exact_skipped = None;
    if p == 2.0 {
        if a.n_rows() <= EXACT_L2_MAX_ROWS {
            match conditioning::qr_condition(&a.to_dense()) {
                Ok(cond) => exact = Some(exact_l2_distortion(b, &cond)),
                Err(Error::RankDeficient { column }) => {
                    exact_skipped = Some(format!("rank deficient at column {column}"));
                }
                Err(e) => return Err(e),
            }
        } else {
            exact_skipped = Some(format!("n > {EXACT_L2_MAX_ROWS}"));
        }
    }

    Ok(DistortionReport {
        kind: kind_label.to_string(),
        p,
        n: a.n_rows(),
        d,
        s: b.n_rows(),
        master_seed: seed.master_seed(),
        stream_id: seed.stream_id(),
        probe_lower: lower,
        probe_upper: upper,
        exact,
        exact_skipped,
        probes_evaluated: evaluated,
        probes_skipped: skipped,
        theory_rows: theory.to_string(),
    })
}

/// Convenience wrapper: plan, apply, measure in one call.
pub fn sketch_and_measure(
    kind: SketchKind,
    a: &SparseMatrix,
    s: usize,
    probes: usize,
    seed: RngStream,
) -> Result<(DenseMatrix, DistortionReport)> {
    let b = match kind {
        SketchKind::DensePStable(p) => {
            apply_dense_pstable(StableParams::new(p)?, s, a, seed.substream(0))?
        }
        _ => {
            let plan = plan_sketch(kind, a.n_rows(), s, seed.substream(0))?;
            apply_sketch(&plan, a)?
        }
    };
    let label = match kind {
        SketchKind::SignL2 => "sign_l2",
        SketchKind::CauchyL1 => "cauchy_l1",
        SketchKind::PStable(_) => "p_stable",
        SketchKind::DensePStable(_) => "dense_p_stable",
    };
    let report = measure_distortion(
        a,
        &b,
        label,
        kind.theory_rows(),
        kind.p(),
        probes,
        seed.substream(1),
    )?;
    Ok((b, report))
}

fn quad_form(g: &DenseMatrix, x: &[f64]) -> f64 {
    let d = x.len();
    let mut acc = 0.0;
    for r in 0..d {
        if x[r] == 0.0 {
            continue;
        }
        let row = g.row(r);
        let mut inner = 0.0;
        for c in 0..d {
            inner += row[c] * x[c];
        }
        acc += x[r] * inner;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_critical, ks_statistic_cdf};
    use rand::Rng as _;

    fn random_sparse(n: usize, d: usize, per_row: usize, seed: u64) -> SparseMatrix {
        let mut rng = RngStream::new(seed).rng();
        let mut triplets = Vec::new();
        for r in 0..n {
            for _ in 0..per_row {
                let c = rng.random_range(0..d);
                let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        SparseMatrix::from_triplets(n, d, &triplets).unwrap()
    }

    /// Oracle: materialize Pi as a dense s x n matrix and multiply naively.
    fn dense_pi_multiply(plan: &SketchPlan, a: &SparseMatrix) -> DenseMatrix {
        let mut pi = DenseMatrix::zeros(plan.s(), plan.n());
        for j in 0..plan.n() {
            pi.set(plan.bucket_of()[j], j, plan.diag()[j]);
        }
        let ad = a.to_dense();
        let mut out = DenseMatrix::zeros(plan.s(), a.n_cols());
        for i in 0..plan.s() {
            for c in 0..a.n_cols() {
                let mut acc = 0.0;
                for j in 0..plan.n() {
                    acc += pi.get(i, j) * ad.get(j, c);
                }
                out.set(i, c, acc);
            }
        }
        out
    }

    #[test]
    fn apply_matches_dense_materialization() {
        let a = random_sparse(60, 5, 3, 1);
        for kind in [SketchKind::SignL2, SketchKind::CauchyL1, SketchKind::PStable(1.5)] {
            let plan = plan_sketch(kind, 60, 13, RngStream::new(2).substream(7)).unwrap();
            let fast = apply_sketch(&plan, &a).unwrap();
            let slow = dense_pi_multiply(&plan, &a);
            for i in 0..13 {
                for c in 0..5 {
                    assert!(
                        (fast.get(i, c) - slow.get(i, c)).abs() < 1e-12,
                        "mismatch at ({i}, {c})"
                    );
                }
            }
        }
    }

    #[test]
    fn apply_cost_is_one_op_per_nonzero() {
        let a = random_sparse(200, 8, 4, 3);
        let plan = plan_sketch(SketchKind::SignL2, 200, 50, RngStream::new(4)).unwrap();
        let (_, ops) = apply_sketch_counting(&plan, &a).unwrap();
        assert_eq!(ops, a.nnz());
    }

    #[test]
    fn plans_are_reconstructible_from_seed() {
        let seed = RngStream::new(99).substream(3);
        let p1 = plan_sketch(SketchKind::CauchyL1, 500, 20, seed).unwrap();
        let p2 = plan_sketch(SketchKind::CauchyL1, 500, 20, seed).unwrap();
        assert_eq!(p1.bucket_of(), p2.bucket_of());
        assert_eq!(p1.diag(), p2.diag());
        let p3 = plan_sketch(SketchKind::CauchyL1, 500, 20, RngStream::new(100)).unwrap();
        assert_ne!(p1.diag(), p3.diag());
    }

    #[test]
    fn plan_rejects_bad_input() {
        let seed = RngStream::new(1);
        assert!(plan_sketch(SketchKind::SignL2, 0, 5, seed).is_err());
        assert!(plan_sketch(SketchKind::SignL2, 5, 0, seed).is_err());
        assert!(plan_sketch(SketchKind::DensePStable(1.5), 5, 5, seed).is_err());
        assert!(plan_sketch(SketchKind::PStable(2.5), 5, 5, seed).is_err());
        assert!(SketchKind::for_p(0.5).is_err());
        assert_eq!(SketchKind::for_p(1.0).unwrap(), SketchKind::CauchyL1);
        assert_eq!(SketchKind::for_p(2.0).unwrap(), SketchKind::SignL2);
        assert_eq!(SketchKind::for_p(1.5).unwrap(), SketchKind::PStable(1.5));
    }

    #[test]
    fn plan_marginals_match_their_laws() {
        let n = 100_000;
        let plan = plan_sketch(SketchKind::SignL2, n, 10, RngStream::new(8)).unwrap();
        assert!(plan.diag().iter().all(|&v| v == 1.0 || v == -1.0));
        // bucket occupancy is near uniform: each ~ Binomial(n, 1/10)
        let mut counts = [0usize; 10];
        for &b in plan.bucket_of() {
            counts[b] += 1;
        }
        let expect = n as f64 / 10.0;
        let tol = 6.0 * (expect * 0.9).sqrt();
        for &c in &counts {
            assert!((c as f64 - expect).abs() < tol, "bucket count {c}");
        }
        // Cauchy diagonal follows the closed-form CDF
        let plan = plan_sketch(SketchKind::CauchyL1, n, 10, RngStream::new(9)).unwrap();
        let d = ks_statistic_cdf(plan.diag(), |t| 0.5 + t.atan() / std::f64::consts::PI);
        assert!(d < ks_critical(0.01, n, None), "KS d = {d}");
    }

    #[test]
    fn identity_embedding_reports_unit_distortion() {
        // B = densified A embeds A's span with no distortion at all
        let a = random_sparse(40, 3, 2, 5);
        let b = a.to_dense();
        let rep = measure_distortion(&a, &b, "identity", "-", 2.0, 50, RngStream::new(6)).unwrap();
        assert!((rep.probe_lower - 1.0).abs() < 1e-10);
        assert!((rep.probe_upper - 1.0).abs() < 1e-10);
        let (lo, hi) = rep.exact.unwrap();
        assert!((lo - 1.0).abs() < 1e-8 && (hi - 1.0).abs() < 1e-8);
        assert_eq!(rep.probes_skipped, 0);
        assert_eq!(rep.probes_evaluated, 50 + 6);
    }

    #[test]
    fn zero_column_probes_are_skipped_and_exact_is_flagged() {
        // column 1 is identically zero, so A is rank deficient
        let a = SparseMatrix::from_triplets(5, 2, &[(0, 0, 1.0), (3, 0, 2.0)]).unwrap();
        let b = a.to_dense();
        let rep = measure_distortion(&a, &b, "identity", "-", 2.0, 10, RngStream::new(7)).unwrap();
        assert!(rep.probes_skipped >= 2); // the +-e_1 probes at least
        assert!(rep.exact.is_none());
        assert!(rep.exact_skipped.unwrap().contains("rank deficient"));
    }

    #[test]
    fn probe_extremes_match_angular_grid_oracle_in_l1() {
        // d = 2 lets an exhaustive 3600-point grid over the unit circle act
        // as ground truth for the probe search
        let a = random_sparse(30, 2, 2, 11);
        let plan = plan_sketch(SketchKind::CauchyL1, 30, 50, RngStream::new(12)).unwrap();
        let b = apply_sketch(&plan, &a).unwrap();
        let rep =
            measure_distortion(&a, &b, "cauchy_l1", "-", 1.0, 2000, RngStream::new(13)).unwrap();
        let (mut gmin, mut gmax) = (f64::INFINITY, 0.0_f64);
        for i in 0..3600 {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 3600.0;
            let x = [t.cos(), t.sin()];
            let na = lp_norm(&a.matvec(&x).unwrap(), 1.0);
            let nb = lp_norm(&b.matvec(&x).unwrap(), 1.0);
            if na > 0.0 {
                let r = nb / na;
                gmin = gmin.min(r);
                gmax = gmax.max(r);
            }
        }
        assert!(rep.probe_lower >= gmin * 0.999);
        assert!(rep.probe_lower <= gmin * 1.02, "probe {} grid {gmin}", rep.probe_lower);
        assert!(rep.probe_upper <= gmax * 1.001);
        assert!(rep.probe_upper >= gmax * 0.98, "probe {} grid {gmax}", rep.probe_upper);
    }

    #[test]
    fn sign_sketch_is_unbiased_for_orthonormal_input() {
        // E[(Pi U)^T (Pi U)] = I for U with orthonormal columns
        let n = 50;
        let a = random_sparse(n, 3, 2, 21);
        let cond = conditioning::qr_condition(&a.to_dense()).unwrap();
        let u = cond.precondition_dense(&a.to_dense()); // orthonormal columns
        let trials = 2000;
        let s = 30;
        let mut mean = DenseMatrix::zeros(3, 3);
        let root = RngStream::new(22);
        for t in 0..trials {
            let plan = plan_sketch(SketchKind::SignL2, n, s, root.substream(t as u64)).unwrap();
            let pu = apply_sketch_dense(&plan, &u).unwrap();
            let g = pu.gram();
            for r in 0..3 {
                for c in 0..3 {
                    mean.set(r, c, mean.get(r, c) + g.get(r, c) / trials as f64);
                }
            }
        }
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                // entry variance is O(1/s); 3 sigma with a safety margin
                assert!(
                    (mean.get(r, c) - want).abs() < 0.05,
                    "mean[{r}][{c}] = {}",
                    mean.get(r, c)
                );
            }
        }
    }

    #[test]
    fn l2_sketch_meets_its_distortion_guarantee() {
        // s = (d^2 + d) / (eps^2 delta) must give distortion <= eps with
        // probability >= 1 - delta; check the failure rate over 100 seeds
        let (d, eps, delta) = (10, 0.5, 0.1);
        let s = l2_sketch_rows(d, eps, delta).unwrap();
        assert_eq!(s, 4400);
        let n = 2000;
        let a = random_sparse(n, d, 5, 31);
        let cond = conditioning::qr_condition(&a.to_dense()).unwrap();
        let root = RngStream::new(32);
        let mut ok = 0;
        for t in 0..100 {
            let plan = plan_sketch(SketchKind::SignL2, n, s, root.substream(t)).unwrap();
            let b = apply_sketch(&plan, &a).unwrap();
            let (lo, hi) = exact_l2_distortion(&b, &cond);
            if (1.0 - lo).max(hi - 1.0) <= eps {
                ok += 1;
            }
        }
        assert!(ok >= 85, "only {ok}/100 within eps");
    }

    #[test]
    fn dense_pstable_column_is_scaled_stable_law() {
        // one nonzero a_{j,0} = 2 makes output column 0 equal 2 * (s i.i.d.
        // Cauchy draws); verify against the closed-form scaled Cauchy CDF
        let a = SparseMatrix::from_triplets(10, 2, &[(4, 0, 2.0)]).unwrap();
        let params = StableParams::new(1.0).unwrap();
        let root = RngStream::new(41);
        let mut samples = Vec::with_capacity(4 * 10_000);
        for t in 0..10_000u64 {
            let b = apply_dense_pstable(params, 4, &a, root.substream(t)).unwrap();
            for i in 0..4 {
                samples.push(b.get(i, 0));
                assert_eq!(b.get(i, 1), 0.0);
            }
        }
        let d = ks_statistic_cdf(&samples, |t| 0.5 + (t / 2.0).atan() / std::f64::consts::PI);
        assert!(d < ks_critical(0.01, samples.len(), None), "KS d = {d}");
    }

    #[test]
    fn dense_pstable_at_p2_concentrates_singular_values() {
        // Pi has N(0, 2) entries, so sigma(Pi U)/sqrt(s) clusters around
        // sqrt(2) with relative width about sqrt(d/s); same-shape dense
        // Gaussian simulation is the oracle for the band
        let n = 100;
        let a = random_sparse(n, 3, 3, 51);
        let cond = conditioning::qr_condition(&a.to_dense()).unwrap();
        let u = cond.precondition_dense(&a.to_dense());
        let us = SparseMatrix::from_dense(&u);
        let s = 60;
        let b = apply_dense_pstable(StableParams::new(2.0).unwrap(), s, &us, RngStream::new(52))
            .unwrap();
        let (lo, hi) = conditioning::sigma_range(&b);
        let scale = (s as f64).sqrt();
        let center = std::f64::consts::SQRT_2;
        assert!(lo / scale > center * 0.75, "lo = {}", lo / scale);
        assert!(hi / scale < center * 1.25, "hi = {}", hi / scale);
        // oracle: direct dense Gaussian matrix of the same shape
        let mut rng = RngStream::new(53).rng();
        let mut g = DenseMatrix::zeros(s, 3);
        for r in 0..s {
            for c in 0..3 {
                g.set(r, c, center * rng::sample_gaussian(&mut rng));
            }
        }
        let (glo, ghi) = conditioning::sigma_range(&g);
        assert!((lo - glo).abs() / glo < 0.35);
        assert!((hi - ghi).abs() / ghi < 0.35);
    }
}
