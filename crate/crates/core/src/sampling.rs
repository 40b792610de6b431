//! Subspace-preserving row sampling driven by preconditioned row norms.
//!
//! With R from a conditioner of A, the weight of row j is
//! lambda_j = ||(A R^{-1})_j||_p^p. Rows are kept independently with
//! probability p_j = min(1, s_target * lambda_j / sum(lambda)), and a kept
//! row is scaled by p_j^{-1/p}, which makes ||S A x||_p^p unbiased for
//! ||A x||_p^p for every fixed x. Sampling (1 +- eps)-preserves the whole
//! subspace once s_target grows like
//! kappa_bar^p * d^{|p/2 - 1| + 1} * log(1/eps) / eps^2.

use serde::{Deserialize, Serialize};

use crate::conditioning::{Conditioner, LinearMap, Preconditioned};
use crate::error::{Error, Result};
use crate::rng::{self, RngStream, StableParams};
use crate::sketch::{measure_distortion, DistortionReport};
use crate::sparse::{lp_norm_pow, SparseMatrix};
use crate::stats::median;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "columns")]
pub enum WeightMethod {
    /// lambda_j computed exactly, O(nnz * d).
    Exact,
    /// lambda_j estimated from A (R^{-1} G) with G a d x g p-stable matrix,
    /// O(nnz * g); the row median of absolute values, divided by the median
    /// of |X_p|, estimates the row p-norm.
    Sketched { columns: usize },
}

/// Per-row sampling weights lambda_j = ||(A R^{-1})_j||_p^p (or their
/// sketched estimates). Zero rows get weight exactly 0 under both methods.
pub fn leverage_weights(
    a: &SparseMatrix,
    cond: &Conditioner,
    p: f64,
    method: WeightMethod,
    seed: RngStream,
) -> Result<Vec<f64>> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} outside [1, 2]")));
    }
    if a.n_cols() != cond.d() {
        return Err(Error::dims(
            "leverage_weights",
            format!("{} cols", cond.d()),
            format!("{}", a.n_cols()),
        ));
    }
    let d = a.n_cols();
    match method {
        WeightMethod::Exact => {
            let pre = cond.preconditioned(a);
            let mut row = vec![0.0; d];
            Ok((0..a.n_rows())
                .map(|j| {
                    pre.row_dense(j, &mut row);
                    lp_norm_pow(&row, p)
                })
                .collect())
        }
        WeightMethod::Sketched { columns } => {
            if columns == 0 {
                return Err(Error::invalid("columns", "must be positive"));
            }
            let params = StableParams::new(p)?;
            let calibration = rng::median_abs_pstable(params);
            // G is d x g with i.i.d. p-stable entries; row j of A (R^{-1} G)
            // is a stable combination whose scale is the row p-norm
            let mut rng = seed.rng();
            let mut g = crate::sparse::DenseMatrix::zeros(d, columns);
            for r in 0..d {
                for c in 0..columns {
                    g.set(r, c, rng::sample_pstable(params, &mut rng));
                }
            }
            let rg = cond.r_inv().matmul(&g)?;
            let mut sketched = vec![0.0; columns];
            let mut out = Vec::with_capacity(a.n_rows());
            for (_, cols, vals) in a.rows() {
                sketched.fill(0.0);
                for (&k, &v) in cols.iter().zip(vals) {
                    let grow = rg.row(k);
                    for (s, &gv) in sketched.iter_mut().zip(grow) {
                        *s += v * gv;
                    }
                }
                if cols.is_empty() {
                    out.push(0.0);
                } else {
                    let abs: Vec<f64> = sketched.iter().map(|v| v.abs()).collect();
                    out.push((median(&abs) / calibration).powf(p));
                }
            }
            Ok(out)
        }
    }
}

/// Rows needed for (1 +- eps) sampling distortion:
/// ceil(c * kappa_bar^p * d^{|p/2 - 1| + 1} * ln(1/eps) / eps^2).
pub fn lemma_sample_size(
    kappa_bar: f64,
    d: usize,
    p: f64,
    eps: f64,
    constant: f64,
) -> Result<usize> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} outside [1, 2]")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", format!("{eps} outside (0, 1)")));
    }
    if !(kappa_bar.is_finite() && kappa_bar > 0.0) {
        return Err(Error::invalid("kappa_bar", format!("{kappa_bar} not positive finite")));
    }
    if !(constant.is_finite() && constant > 0.0) {
        return Err(Error::invalid("constant", format!("{constant} not positive finite")));
    }
    let e = (p / 2.0 - 1.0).abs() + 1.0;
    let s = constant * kappa_bar.powf(p) * (d as f64).powf(e) * (1.0 / eps).ln() / (eps * eps);
    Ok((s.ceil() as usize).max(1))
}

/// A realized sampling map: kept rows with their scale factors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingMatrix {
    pub p: f64,
    pub s_target: usize,
    pub master_seed: u64,
    pub stream_id: u64,
    pub method: String,
    /// (input row, scale); scale = p_j^{-1/p}
    pub entries: Vec<(usize, f64)>,
}

impl SamplingMatrix {
    pub fn s_realized(&self) -> usize {
        self.entries.len()
    }

    /// CSV body: one "row,weight" line per kept row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,weight\n");
        for (r, w) in &self.entries {
            out.push_str(&format!("{r},{w:.17e}\n"));
        }
        out
    }

    /// JSON header describing how the sample was drawn.
    pub fn metadata_json(&self) -> String {
        serde_json::json!({
            "p": self.p,
            "s_target": self.s_target,
            "s_realized": self.s_realized(),
            "master_seed": self.master_seed,
            "stream_id": self.stream_id,
            "method": self.method,
        })
        .to_string()
    }
}

/// Draw the Bernoulli sampling matrix: row j is kept with probability
/// min(1, s_target * lambda_j / sum lambda) and scaled by that
/// probability^{-1/p}. One uniform draw is consumed per row, in row order,
/// so the realization is reproducible from the seed alone.
pub fn build_sampling_matrix(
    weights: &[f64],
    p: f64,
    s_target: usize,
    seed: RngStream,
) -> Result<SamplingMatrix> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} outside [1, 2]")));
    }
    if s_target == 0 {
        return Err(Error::invalid("s_target", "must be positive"));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::invalid("weights", "must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyInput {
            what: "build_sampling_matrix",
            reason: "all sampling weights are zero".into(),
        });
    }
    let mut rng = seed.rng();
    let mut entries = Vec::new();
    for (j, &w) in weights.iter().enumerate() {
        let u: f64 = rand::Rng::random(&mut rng);
        if w <= 0.0 {
            continue;
        }
        let pj = (s_target as f64 * w / total).min(1.0);
        if u < pj {
            entries.push((j, pj.powf(-1.0 / p)));
        }
    }
    Ok(SamplingMatrix {
        p,
        s_target,
        master_seed: seed.master_seed(),
        stream_id: seed.stream_id(),
        method: "bernoulli".into(),
        entries,
    })
}

/// S A: the kept rows of A, scaled.
pub fn sample_rows(a: &SparseMatrix, s: &SamplingMatrix) -> Result<SparseMatrix> {
    a.select_scaled_rows(&s.entries)
}

/// S b for the right-hand side.
pub fn sample_vector(b: &[f64], s: &SamplingMatrix) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(s.entries.len());
    for &(j, w) in &s.entries {
        if j >= b.len() {
            return Err(Error::dims("sample_vector", format!("< {}", b.len()), format!("{j}")));
        }
        out.push(w * b[j]);
    }
    Ok(out)
}

/// Measure the lp distortion of the realized sample against A.
pub fn verify_sampling_distortion(
    a: &SparseMatrix,
    s: &SamplingMatrix,
    probes: usize,
    seed: RngStream,
) -> Result<DistortionReport> {
    let sa = sample_rows(a, s)?.to_dense();
    measure_distortion(
        a,
        &sa,
        "sampling",
        "kappa_bar^p * d^{|p/2-1|+1} * log(1/eps) / eps^2",
        s.p,
        probes,
        seed,
    )
}

/// Exact row weights of the preconditioned matrix, for oracle comparisons.
pub fn exact_weights_of(pre: &Preconditioned<'_>, p: f64) -> Vec<f64> {
    let d = pre.map_cols();
    let mut row = vec![0.0; d];
    (0..pre.map_rows())
        .map(|j| {
            pre.row_dense(j, &mut row);
            lp_norm_pow(&row, p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::qr_condition;
    use crate::sparse::DenseMatrix;
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

    /// Identity on top, zero rows below.
    fn identity_top(n: usize, d: usize) -> SparseMatrix {
        let t: Vec<_> = (0..d).map(|k| (k, k, 1.0)).collect();
        SparseMatrix::from_triplets(n, d, &t).unwrap()
    }

    #[test]
    fn sample_size_closed_forms() {
        // p = 2, kappa_bar = sqrt(5), d = 5, eps = 0.25:
        // 5 * 5 * ln(4) / 0.0625 = 554.5 -> 555
        let s = lemma_sample_size((5.0_f64).sqrt(), 5, 2.0, 0.25, 1.0).unwrap();
        assert_eq!(s, 555);
        // p = 1, kappa_bar = 2, d = 4, eps = 0.5:
        // 2 * 4^{1.5} * ln 2 / 0.25 = 44.36 -> 45
        let s = lemma_sample_size(2.0, 4, 1.0, 0.5, 1.0).unwrap();
        assert_eq!(s, 45);
        assert!(lemma_sample_size(2.0, 4, 1.0, 1.5, 1.0).is_err());
        assert!(lemma_sample_size(f64::INFINITY, 4, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn exact_weights_match_naive_row_norms() {
        let a = random_sparse(50, 3, 2, 1);
        let cond = qr_condition(&a.to_dense()).unwrap();
        let w = leverage_weights(&a, &cond, 1.5, WeightMethod::Exact, RngStream::new(2)).unwrap();
        let m = cond.precondition_dense(&a.to_dense());
        for j in 0..50 {
            let naive: f64 = m.row(j).iter().map(|v| v.abs().powf(1.5)).sum();
            assert!((w[j] - naive).abs() < 1e-10, "row {j}");
        }
    }

    #[test]
    fn zero_rows_get_zero_weight_and_are_never_kept() {
        let a = identity_top(30, 3);
        let cond = qr_condition(&a.to_dense()).unwrap();
        for method in [WeightMethod::Exact, WeightMethod::Sketched { columns: 64 }] {
            let w = leverage_weights(&a, &cond, 1.0, method, RngStream::new(3)).unwrap();
            for j in 3..30 {
                assert_eq!(w[j], 0.0);
            }
            let s = build_sampling_matrix(&w, 1.0, 10, RngStream::new(4)).unwrap();
            assert!(s.entries.iter().all(|&(j, _)| j < 3));
        }
    }

    #[test]
    fn saturated_sampling_keeps_every_weighted_row() {
        // equal weights with s_target >= n forces p_j = 1 and scale 1
        let w = vec![1.0; 20];
        let s = build_sampling_matrix(&w, 1.5, 20, RngStream::new(5)).unwrap();
        assert_eq!(s.s_realized(), 20);
        assert!(s.entries.iter().all(|&(_, w)| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn identity_subspace_is_preserved_exactly_when_saturated() {
        let a = identity_top(40, 3);
        let cond = qr_condition(&a.to_dense()).unwrap();
        let w = leverage_weights(&a, &cond, 1.0, WeightMethod::Exact, RngStream::new(6)).unwrap();
        let s = build_sampling_matrix(&w, 1.0, 3, RngStream::new(7)).unwrap();
        // all three identity rows kept at probability 1
        assert_eq!(s.s_realized(), 3);
        let rep = verify_sampling_distortion(&a, &s, 100, RngStream::new(8)).unwrap();
        assert!((rep.probe_lower - 1.0).abs() < 1e-10);
        assert!((rep.probe_upper - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sampling_norm_is_unbiased_for_fixed_x() {
        let a = random_sparse(200, 3, 3, 9);
        let cond = qr_condition(&a.to_dense()).unwrap();
        let p = 1.0;
        let w = leverage_weights(&a, &cond, p, WeightMethod::Exact, RngStream::new(10)).unwrap();
        let x = [0.7, -0.2, 1.1];
        let truth = lp_norm_pow(&a.matvec(&x).unwrap(), p);
        let root = RngStream::new(11);
        let trials = 10_000;
        let mut vals = Vec::with_capacity(trials);
        for t in 0..trials {
            let s = build_sampling_matrix(&w, p, 40, root.substream(t as u64)).unwrap();
            let sa = sample_rows(&a, &s).unwrap();
            vals.push(lp_norm_pow(&sa.matvec(&x).unwrap(), p));
        }
        let mean = vals.iter().sum::<f64>() / trials as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / trials as f64;
        let stderr = (var / trials as f64).sqrt();
        assert!(
            (mean - truth).abs() <= 3.0 * stderr + 1e-12,
            "mean {mean} truth {truth} stderr {stderr}"
        );
    }

    #[test]
    fn sketched_weights_track_exact_weights() {
        let a = random_sparse(400, 4, 3, 12);
        let cond = qr_condition(&a.to_dense()).unwrap();
        for &p in &[1.0, 1.5, 2.0] {
            let exact =
                leverage_weights(&a, &cond, p, WeightMethod::Exact, RngStream::new(13)).unwrap();
            let sketched = leverage_weights(
                &a,
                &cond,
                p,
                WeightMethod::Sketched { columns: 64 },
                RngStream::new(14),
            )
            .unwrap();
            let mut within = 0;
            let mut total = 0;
            for j in 0..400 {
                if exact[j] == 0.0 {
                    assert_eq!(sketched[j], 0.0);
                    continue;
                }
                total += 1;
                let ratio = sketched[j] / exact[j];
                if (1.0 / 3.0..=3.0).contains(&ratio) {
                    within += 1;
                }
            }
            assert!(
                within as f64 >= 0.95 * total as f64,
                "p = {p}: only {within}/{total} within [1/3, 3]"
            );
        }
    }

    #[test]
    fn median_distortion_does_not_increase_with_sample_size() {
        let a = random_sparse(2000, 3, 3, 15);
        let cond = qr_condition(&a.to_dense()).unwrap();
        let p = 2.0;
        let w = leverage_weights(&a, &cond, p, WeightMethod::Exact, RngStream::new(16)).unwrap();
        let root = RngStream::new(17);
        let mut medians = Vec::new();
        for (i, s_target) in [60usize, 240, 960].into_iter().enumerate() {
            let mut dists = Vec::new();
            for t in 0..50u64 {
                let s = build_sampling_matrix(&w, p, s_target, root.substream(100 * i as u64 + t))
                    .unwrap();
                let rep =
                    verify_sampling_distortion(&a, &s, 50, root.substream(7000 + t)).unwrap();
                dists.push((1.0 - rep.probe_lower).max(rep.probe_upper - 1.0));
            }
            medians.push(median(&dists));
        }
        assert!(medians[1] <= medians[0], "medians {medians:?}");
        assert!(medians[2] <= medians[1], "medians {medians:?}");
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(build_sampling_matrix(&[1.0], 1.0, 0, RngStream::new(1)).is_err());
        assert!(build_sampling_matrix(&[0.0, 0.0], 1.0, 5, RngStream::new(1)).is_err());
        assert!(build_sampling_matrix(&[-1.0, 2.0], 1.0, 5, RngStream::new(1)).is_err());
        assert!(build_sampling_matrix(&[f64::NAN], 1.0, 5, RngStream::new(1)).is_err());
        assert!(lemma_sample_size(1.0, 3, 0.5, 0.1, 1.0).is_err());
    }

    #[test]
    fn sampling_is_reproducible_and_serializable() {
        let w = vec![1.0, 2.0, 0.5, 4.0, 0.0, 1.5];
        let s1 = build_sampling_matrix(&w, 1.5, 3, RngStream::new(18)).unwrap();
        let s2 = build_sampling_matrix(&w, 1.5, 3, RngStream::new(18)).unwrap();
        assert_eq!(s1.entries, s2.entries);
        let csv = s1.to_csv();
        assert!(csv.starts_with("row,weight\n"));
        assert_eq!(csv.lines().count(), s1.s_realized() + 1);
        let meta: serde_json::Value = serde_json::from_str(&s1.metadata_json()).unwrap();
        assert_eq!(meta["s_target"], 3);
        assert_eq!(meta["method"], "bernoulli");
        // sampled vector lines up with sampled rows
        let a = identity_top(6, 6);
        let b = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let sa = sample_rows(&a, &s1).unwrap();
        let sb = sample_vector(&b, &s1).unwrap();
        assert_eq!(sa.n_rows(), sb.len());
        for (i, &(j, w)) in s1.entries.iter().enumerate() {
            assert!((sb[i] - w * b[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_matmul_in_sketched_path_respects_dims() {
        let a = random_sparse(20, 3, 2, 19);
        let cond = qr_condition(&a.to_dense()).unwrap();
        // wrong-dimension conditioner is rejected
        let wide = random_sparse(20, 4, 2, 20);
        assert!(leverage_weights(&wide, &cond, 1.0, WeightMethod::Exact, RngStream::new(21)).is_err());
        assert!(leverage_weights(
            &a,
            &cond,
            1.0,
            WeightMethod::Sketched { columns: 0 },
            RngStream::new(22)
        )
        .is_err());
        let _ = DenseMatrix::zeros(1, 1);
    }
}
