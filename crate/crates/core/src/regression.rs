//! lp regression, exact and sketched.
//!
//! The fast pipelines follow one shape: augment [A b], sketch it in
//! input-sparsity time, take R from a QR of the sketch so [A b] R^{-1} is
//! well conditioned, sample rows by preconditioned row norms at accuracy
//! eps/4, and solve the small weighted problem at eps/4. The chain
//! (1 + eps/4)^2 / (1 - eps/4) <= 1 + eps (for eps < 1/2) turns the two
//! approximations into the final guarantee. Objectives reported anywhere
//! are recomputed on the full data, never taken from a sub-problem.

use serde::Serialize;

use crate::conditioning::{self, Conditioner};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampling::{
    build_sampling_matrix, lemma_sample_size, leverage_weights, sample_rows, sample_vector,
    SamplingMatrix, WeightMethod,
};
use crate::sketch::{self, SketchKind};
use crate::sparse::{lp_norm, DenseMatrix, SparseMatrix};

#[derive(Clone, Debug, Serialize)]
pub struct StageNote {
    pub stage: String,
    pub rows: usize,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegressionSolution {
    pub p: f64,
    pub x_hat: Vec<f64>,
    /// ||A x_hat - b||_p on the full data
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub master_seed: Option<u64>,
    pub stream_id: Option<u64>,
    pub pipeline: Vec<StageNote>,
}

fn lp_objective(a: &SparseMatrix, b: &[f64], x: &[f64], p: f64) -> Result<f64> {
    let ax = a.matvec(x)?;
    let r: Vec<f64> = ax.iter().zip(b).map(|(u, v)| u - v).collect();
    Ok(lp_norm(&r, p))
}

/// Solve the d x d normal equations G x = rhs; Cholesky first, SVD as the
/// semidefinite fallback.
fn normal_eq_solve(g: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let g_na = g.to_na();
    let rhs_na = nalgebra::DVector::from_column_slice(rhs);
    if let Some(chol) = g_na.clone().cholesky() {
        return Ok(chol.solve(&rhs_na).iter().copied().collect());
    }
    let svd = g_na.svd(true, true);
    match svd.solve(&rhs_na, 1e-13) {
        Ok(x) => Ok(x.iter().copied().collect()),
        Err(_) => Err(Error::NonConvergence {
            what: "normal equation solve",
            iterations: 0,
        }),
    }
}

/// argmin_x sum_i w_i (a_i x - b_i)^2 over a sparse A (w = None means 1).
fn weighted_lstsq(a: &SparseMatrix, b: &[f64], w: Option<&[f64]>) -> Result<Vec<f64>> {
    let d = a.n_cols();
    if b.len() != a.n_rows() {
        return Err(Error::dims(
            "weighted_lstsq",
            format!("{}", a.n_rows()),
            format!("{}", b.len()),
        ));
    }
    let mut g = DenseMatrix::zeros(d, d);
    let mut rhs = vec![0.0; d];
    for (j, cols, vals) in a.rows() {
        let wj = w.map_or(1.0, |w| w[j]);
        if wj == 0.0 {
            continue;
        }
        for (&c1, &v1) in cols.iter().zip(vals) {
            rhs[c1] += wj * v1 * b[j];
            for (&c2, &v2) in cols.iter().zip(vals) {
                g.set(c1, c2, g.get(c1, c2) + wj * v1 * v2);
            }
        }
    }
    normal_eq_solve(&g, &rhs)
}

/// argmin_x ||M x - rhs||_2 for a dense M.
fn lstsq_dense(m: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let d = m.n_cols();
    let mut g = DenseMatrix::zeros(d, d);
    let mut t = vec![0.0; d];
    for j in 0..m.n_rows() {
        let row = m.row(j);
        for c1 in 0..d {
            if row[c1] == 0.0 {
                continue;
            }
            t[c1] += row[c1] * rhs[j];
            for c2 in 0..d {
                g.set(c1, c2, g.get(c1, c2) + row[c1] * row[c2]);
            }
        }
    }
    normal_eq_solve(&g, &t)
}

/// Exact least squares via the normal equations.
pub fn solve_l2_exact(a: &SparseMatrix, b: &[f64]) -> Result<RegressionSolution> {
    let x = weighted_lstsq(a, b, None)?;
    let objective = lp_objective(a, b, &x, 2.0)?;
    Ok(RegressionSolution {
        p: 2.0,
        x_hat: x,
        objective,
        converged: true,
        iterations: 1,
        master_seed: None,
        stream_id: None,
        pipeline: vec![StageNote {
            stage: "normal_equations".into(),
            rows: a.n_rows(),
            note: "exact".into(),
        }],
    })
}

/// Smoothed lp objective sum_i (r_i^2 + mu^2)^{p/2}.
fn smoothed_objective(a: &SparseMatrix, b: &[f64], x: &[f64], p: f64, mu: f64) -> Result<f64> {
    let ax = a.matvec(x)?;
    Ok(ax
        .iter()
        .zip(b)
        .map(|(u, v)| {
            let r = u - v;
            (r * r + mu * mu).powf(p / 2.0)
        })
        .sum())
}

/// Smoothed IRLS for min ||Ax - b||_p, 1 <= p <= 2, on small inputs.
///
/// Stages lower the smoothing mu from ||b||_p / n by factors of 10 down to
/// 1e-12. Within a stage, weights (r^2 + mu^2)^{p/2 - 1} define a weighted
/// least squares step; because the smoothed objective is concave in r^2 for
/// p <= 2, each exact step is a majorize-minimize step and cannot increase
/// the smoothed objective (a backtracking halving guards roundoff). The
/// outer loop stops when a whole stage improves the true objective by less
/// than eps / 10 relatively. Hitting the 500-iteration cap inside a stage
/// clears `converged` but still returns the best iterate.
pub fn solve_lp_small(
    a: &SparseMatrix,
    b: &[f64],
    p: f64,
    eps: f64,
    x0: Option<&[f64]>,
) -> Result<RegressionSolution> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} outside [1, 2]")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", format!("{eps} outside (0, 1)")));
    }
    if b.len() != a.n_rows() {
        return Err(Error::dims(
            "solve_lp_small",
            format!("{}", a.n_rows()),
            format!("{}", b.len()),
        ));
    }
    let n = a.n_rows();
    let d = a.n_cols();
    let norm_b = lp_norm(b, p);
    if norm_b == 0.0 {
        return Ok(RegressionSolution {
            p,
            x_hat: vec![0.0; d],
            objective: 0.0,
            converged: true,
            iterations: 0,
            master_seed: None,
            stream_id: None,
            pipeline: vec![StageNote {
                stage: "irls".into(),
                rows: n,
                note: "zero right-hand side".into(),
            }],
        });
    }
    let mut x = match x0 {
        Some(x0) if x0.len() == d => x0.to_vec(),
        Some(x0) => {
            return Err(Error::dims("x0", format!("{d}"), format!("{}", x0.len())));
        }
        None => weighted_lstsq(a, b, None)?,
    };
    if p == 2.0 {
        let x = weighted_lstsq(a, b, None)?;
        let objective = lp_objective(a, b, &x, 2.0)?;
        return Ok(RegressionSolution {
            p,
            x_hat: x,
            objective,
            converged: true,
            iterations: 1,
            master_seed: None,
            stream_id: None,
            pipeline: vec![StageNote {
                stage: "irls".into(),
                rows: n,
                note: "p = 2 reduces to one least squares solve".into(),
            }],
        });
    }

    const MU_FLOOR: f64 = 1e-12;
    const STAGE_CAP: usize = 500;
    let inner_tol = (eps * 1e-3).max(1e-14);
    let stage_tol = eps / 10.0;
    let mut mu = norm_b / n as f64;
    let mut f_true_prev = lp_objective(a, b, &x, p)?;
    let mut total_iters = 0usize;
    let mut hit_cap = false;
    let mut stages = 0usize;
    loop {
        stages += 1;
        let mut f_s = smoothed_objective(a, b, &x, p, mu)?;
        let mut iters = 0usize;
        loop {
            let ax = a.matvec(&x)?;
            let w: Vec<f64> = ax
                .iter()
                .zip(b)
                .map(|(u, v)| {
                    let r = u - v;
                    (r * r + mu * mu).powf(p / 2.0 - 1.0)
                })
                .collect();
            let mut x_new = weighted_lstsq(a, b, Some(&w))?;
            let mut f_new = smoothed_objective(a, b, &x_new, p, mu)?;
            let mut halvings = 0;
            while f_new > f_s * (1.0 + 1e-12) && halvings < 60 {
                for (xi, &old) in x_new.iter_mut().zip(&x) {
                    *xi = 0.5 * (*xi + old);
                }
                f_new = smoothed_objective(a, b, &x_new, p, mu)?;
                halvings += 1;
            }
            debug_assert!(
                f_new <= f_s * (1.0 + 1e-10),
                "smoothed objective increased: {f_s} -> {f_new}"
            );
            let rel = (f_s - f_new) / f_s.max(f64::MIN_POSITIVE);
            x = x_new;
            f_s = f_new;
            iters += 1;
            if rel < inner_tol {
                break;
            }
            if iters >= STAGE_CAP {
                hit_cap = true;
                break;
            }
        }
        total_iters += iters;
        let f_true = lp_objective(a, b, &x, p)?;
        let rel_stage = (f_true_prev - f_true) / f_true_prev.max(f64::MIN_POSITIVE);
        f_true_prev = f_true;
        if rel_stage < stage_tol || mu <= MU_FLOOR {
            break;
        }
        mu = (mu * 0.1).max(MU_FLOOR);
    }

    let objective = lp_objective(a, b, &x, p)?;
    Ok(RegressionSolution {
        p,
        x_hat: x,
        objective,
        converged: !hit_cap,
        iterations: total_iters,
        master_seed: None,
        stream_id: None,
        pipeline: vec![StageNote {
            stage: "irls".into(),
            rows: n,
            note: format!("{stages} smoothing stages"),
        }],
    })
}

/// In-place Gaussian elimination with partial pivoting for tiny systems.
/// Returns false when the matrix is numerically singular.
fn solve_small_inplace(m: &mut [f64], rhs: &mut [f64], d: usize) -> bool {
    for col in 0..d {
        let mut piv = col;
        let mut best = m[col * d + col].abs();
        for r in (col + 1)..d {
            let v = m[r * d + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-12 {
            return false;
        }
        if piv != col {
            for c in 0..d {
                m.swap(col * d + c, piv * d + c);
            }
            rhs.swap(col, piv);
        }
        let diag = m[col * d + col];
        for r in (col + 1)..d {
            let f = m[r * d + col] / diag;
            if f == 0.0 {
                continue;
            }
            for c in col..d {
                m[r * d + c] -= f * m[col * d + c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    for col in (0..d).rev() {
        let mut acc = rhs[col];
        for c in (col + 1)..d {
            acc -= m[col * d + c] * rhs[c];
        }
        rhs[col] = acc / m[col * d + col];
    }
    true
}

/// Exhaustive l1 regression oracle: some optimal solution interpolates d of
/// the rows (it is a basic solution of the equivalent linear program), so
/// trying every nonsingular d-subset finds the optimum. Test-grade:
/// restricted to n <= 200, d <= 4.
pub fn l1_oracle_bruteforce(a: &SparseMatrix, b: &[f64]) -> Result<RegressionSolution> {
    let n = a.n_rows();
    let d = a.n_cols();
    if n > 200 || d > 4 || d == 0 {
        return Err(Error::invalid(
            "shape",
            format!("oracle is limited to n <= 200, d <= 4; got {n} x {d}"),
        ));
    }
    if b.len() != n || n < d {
        return Err(Error::dims("l1_oracle", format!("{n} rows"), format!("{}", b.len())));
    }
    let dense = a.to_dense();
    let mut best_obj = f64::INFINITY;
    let mut best_x: Option<Vec<f64>> = None;
    let mut idx: Vec<usize> = (0..d).collect();
    let mut sub = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    loop {
        for (k, &j) in idx.iter().enumerate() {
            sub[k * d..(k + 1) * d].copy_from_slice(dense.row(j));
            rhs[k] = b[j];
        }
        if solve_small_inplace(&mut sub, &mut rhs, d) {
            // rhs now holds the interpolating x; accumulate |residual| with
            // early exit against the best objective so far
            let mut obj = 0.0;
            for r in 0..n {
                let row = dense.row(r);
                let mut acc = -b[r];
                for c in 0..d {
                    acc += row[c] * rhs[c];
                }
                obj += acc.abs();
                if obj >= best_obj {
                    break;
                }
            }
            if obj < best_obj {
                best_obj = obj;
                best_x = Some(rhs.clone());
            }
        }
        // next combination
        let mut i = d;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if idx[i] != i + n - d {
                idx[i] += 1;
                for k in (i + 1)..d {
                    idx[k] = idx[k - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    let x = best_x.ok_or(Error::EmptyInput {
        what: "l1_oracle_bruteforce",
        reason: "every d-subset of rows was singular".into(),
    })?;
    Ok(RegressionSolution {
        p: 1.0,
        objective: best_obj,
        x_hat: x,
        converged: true,
        iterations: 0,
        master_seed: None,
        stream_id: None,
        pipeline: vec![StageNote {
            stage: "bruteforce".into(),
            rows: n,
            note: "exhaustive d-subset enumeration".into(),
        }],
    })
}

/// Sketched least squares: embed [A b] with the sign sketch at eps/3 so the
/// sketched minimizer is a (1 + eps)-approximation with probability
/// 1 - delta, using (1 + eps/3)/(1 - eps/3) <= 1 + eps for eps <= 1.
pub fn fast_l2_regression(
    a: &SparseMatrix,
    b: &[f64],
    eps: f64,
    delta: f64,
    seed: RngStream,
) -> Result<RegressionSolution> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", format!("{eps} outside (0, 1)")));
    }
    let n = a.n_rows();
    let d = a.n_cols();
    if b.len() != n {
        return Err(Error::dims("fast_l2_regression", format!("{n}"), format!("{}", b.len())));
    }
    let s = sketch::l2_sketch_rows(d + 1, eps / 3.0, delta)?;
    let mut pipeline = Vec::new();
    let x = if s >= n {
        pipeline.push(StageNote {
            stage: "sketch".into(),
            rows: n,
            note: format!("target {s} rows >= n; solved exactly instead"),
        });
        weighted_lstsq(a, b, None)?
    } else {
        let abar = a.augment_column(b)?;
        let plan = sketch::plan_sketch(SketchKind::SignL2, n, s, seed.substream(0))?;
        let pab = sketch::apply_sketch(&plan, &abar)?;
        pipeline.push(StageNote {
            stage: "sketch".into(),
            rows: s,
            note: format!("sign sketch of [A b] at eps/3 = {}", eps / 3.0),
        });
        // split [PA Pb]
        let mut pa = DenseMatrix::zeros(s, d);
        let mut pb = vec![0.0; s];
        for r in 0..s {
            let row = pab.row(r);
            pa.row_mut(r).copy_from_slice(&row[..d]);
            pb[r] = row[d];
        }
        lstsq_dense(&pa, &pb)?
    };
    let objective = lp_objective(a, b, &x, 2.0)?;
    pipeline.push(StageNote {
        stage: "solve".into(),
        rows: s.min(n),
        note: "least squares on the sketch".into(),
    });
    Ok(RegressionSolution {
        p: 2.0,
        x_hat: x,
        objective,
        converged: true,
        iterations: 1,
        master_seed: Some(seed.master_seed()),
        stream_id: Some(seed.stream_id()),
        pipeline,
    })
}

/// Knobs for the sampling pipelines. The defaults follow the construction
/// as analyzed: sampling sized by the measured kappa_bar with constant 1.
#[derive(Clone, Debug)]
pub struct PipelineOptions {
    /// sketch rows; default c * (d+1)^2 for heavy tails, the (eps, delta)
    /// preset below for the sign sketch
    pub sketch_rows: Option<usize>,
    /// c in the c * d^2 heavy-tailed sketch preset
    pub sketch_c: f64,
    /// (eps, delta) preset used when the sketch kind is the sign sketch
    pub l2_sketch: (f64, f64),
    /// multiplier on the sampling size formula
    pub sample_constant: f64,
    pub weight_method: WeightMethod,
    /// random probes for condition estimation
    pub probes: usize,
    /// independent attempts; the best full-data objective wins
    pub retries: usize,
    /// ellipsoid rounding iterations in stage 4 of the two-stage scheme
    pub rounding_iters: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            sketch_rows: None,
            sketch_c: 50.0,
            l2_sketch: (0.5, 0.1),
            sample_constant: 1.0,
            weight_method: WeightMethod::Exact,
            probes: 200,
            retries: 3,
            rounding_iters: 50,
        }
    }
}

fn default_sketch_rows(kind: SketchKind, d: usize, opts: &PipelineOptions) -> Result<usize> {
    match kind {
        SketchKind::SignL2 => sketch::l2_sketch_rows(d, opts.l2_sketch.0, opts.l2_sketch.1),
        _ => Ok(sketch::lp_sketch_rows(d, opts.sketch_c)),
    }
}

/// Condition the span of `m` (a sketch of the augmented matrix). When the
/// augmented span is rank deficient (b exactly in range(A)), fall back to
/// conditioning the A block alone and scaling the b column by its norm.
fn condition_augmented(pab: &DenseMatrix, d: usize, p: f64, notes: &mut Vec<StageNote>) -> Result<Conditioner> {
    match conditioning::qr_condition(pab) {
        Ok(c) => Ok(c),
        Err(Error::RankDeficient { column }) => {
            let s = pab.n_rows();
            let mut pa = DenseMatrix::zeros(s, d);
            let mut pb = vec![0.0; s];
            for r in 0..s {
                let row = pab.row(r);
                pa.row_mut(r).copy_from_slice(&row[..d]);
                pb[r] = row[d];
            }
            let base = conditioning::qr_condition(&pa)?;
            let scale = lp_norm(&pb, p).max(1e-300);
            let mut r = DenseMatrix::zeros(d + 1, d + 1);
            for i in 0..d {
                for j in 0..d {
                    r.set(i, j, base.r().get(i, j));
                }
            }
            r.set(d, d, scale);
            notes.push(StageNote {
                stage: "condition".into(),
                rows: s,
                note: format!(
                    "augmented sketch rank deficient at column {column}; conditioned A and b separately"
                ),
            });
            conditioning::Conditioner::from_r(r)
        }
        Err(e) => Err(e),
    }
}

/// One attempt of the sampling pipeline at accuracy eps.
fn lp_pipeline_once(
    a: &SparseMatrix,
    b: &[f64],
    p: f64,
    eps: f64,
    seed: RngStream,
    opts: &PipelineOptions,
) -> Result<RegressionSolution> {
    let n = a.n_rows();
    let d = a.n_cols();
    let mut pipeline = Vec::new();
    let abar = a.augment_column(b)?;
    let kind = SketchKind::for_p(p)?;
    let s_sk = match opts.sketch_rows {
        Some(s) => s,
        None => default_sketch_rows(kind, d + 1, opts)?,
    }
    .min(n.max(d + 1));
    let plan = sketch::plan_sketch(kind, n, s_sk, seed.substream(0))?;
    let pab = sketch::apply_sketch(&plan, &abar)?;
    pipeline.push(StageNote {
        stage: "sketch".into(),
        rows: s_sk,
        note: format!("{} sketch of [A b]", kind.theory_rows()),
    });
    let rbar = condition_augmented(&pab, d, p, &mut pipeline)?;
    let est = conditioning::estimate_condition(
        &rbar.preconditioned(&abar),
        p,
        opts.probes,
        seed.substream(1),
    )?;
    pipeline.push(StageNote {
        stage: "condition".into(),
        rows: d + 1,
        note: format!("kappa_bar_hat = {:.3}", est.kappa_bar_hat),
    });
    let weights = leverage_weights(&abar, &rbar, p, opts.weight_method, seed.substream(2))?;
    let s_target = lemma_sample_size(est.kappa_bar_hat, d + 1, p, eps / 4.0, opts.sample_constant)?;
    let smat = build_sampling_matrix(&weights, p, s_target, seed.substream(3))?;
    let asub = sample_rows(a, &smat)?;
    let bsub = sample_vector(b, &smat)?;
    pipeline.push(StageNote {
        stage: "sample".into(),
        rows: smat.s_realized(),
        note: format!("target {s_target} rows at eps/4 = {}", eps / 4.0),
    });
    let sub = if p == 2.0 {
        let x = weighted_lstsq(&asub, &bsub, None)?;
        RegressionSolution {
            p,
            objective: 0.0,
            x_hat: x,
            converged: true,
            iterations: 1,
            master_seed: None,
            stream_id: None,
            pipeline: Vec::new(),
        }
    } else {
        solve_lp_small(&asub, &bsub, p, eps / 4.0, None)?
    };
    pipeline.push(StageNote {
        stage: "solve".into(),
        rows: asub.n_rows(),
        note: format!("sub-problem at eps/4, {} iterations", sub.iterations),
    });
    let objective = lp_objective(a, b, &sub.x_hat, p)?;
    Ok(RegressionSolution {
        p,
        x_hat: sub.x_hat,
        objective,
        converged: sub.converged,
        iterations: sub.iterations,
        master_seed: Some(seed.master_seed()),
        stream_id: Some(seed.stream_id()),
        pipeline,
    })
}

/// (1 + eps)-approximate lp regression in input-sparsity time plus a
/// poly(d)-sized sub-problem. Requires eps < 1/2 so the stage guarantees
/// compose. Retries with fresh randomness and keeps the best objective.
pub fn fast_lp_regression(
    a: &SparseMatrix,
    b: &[f64],
    p: f64,
    eps: f64,
    seed: RngStream,
    opts: &PipelineOptions,
) -> Result<RegressionSolution> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} outside [1, 2]")));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::invalid("eps", format!("{eps} outside (0, 1/2)")));
    }
    if b.len() != a.n_rows() {
        return Err(Error::dims(
            "fast_lp_regression",
            format!("{}", a.n_rows()),
            format!("{}", b.len()),
        ));
    }
    if lp_norm(b, p) == 0.0 {
        return Ok(RegressionSolution {
            p,
            x_hat: vec![0.0; a.n_cols()],
            objective: 0.0,
            converged: true,
            iterations: 0,
            master_seed: Some(seed.master_seed()),
            stream_id: Some(seed.stream_id()),
            pipeline: vec![StageNote {
                stage: "trivial".into(),
                rows: a.n_rows(),
                note: "zero right-hand side".into(),
            }],
        });
    }
    let retries = opts.retries.max(1);
    let mut best: Option<RegressionSolution> = None;
    let mut last_err: Option<Error> = None;
    for r in 0..retries {
        match lp_pipeline_once(a, b, p, eps, seed.substream(r as u64), opts) {
            Ok(sol) => {
                if best.as_ref().is_none_or(|b| sol.objective < b.objective) {
                    best = Some(sol);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or(Error::NonConvergence {
            what: "fast_lp_regression",
            iterations: retries,
        })
    })
}

/// Output of the two-stage sampling scheme: the final sampling matrix plus
/// the evidence that the intermediate rounding step earned its keep.
#[derive(Clone, Debug)]
pub struct ImprovedEmbedding {
    pub sampling: SamplingMatrix,
    /// kappa_bar_hat of A R~^{-1} (conditioner from the sketch alone)
    pub kappa_bar_initial: f64,
    /// kappa_bar_hat of A R^{-1} after rounding; never worse than initial
    pub kappa_bar_final: f64,
    /// sample target the initial conditioner would have needed at eps
    pub single_stage_target: usize,
    /// sample target actually used at eps
    pub final_target: usize,
    pub conditioner_initial: Conditioner,
    pub conditioner_final: Conditioner,
    /// rows of the intermediate constant-distortion sample
    pub intermediate_rows: usize,
    pub used_rounding: bool,
    pub stages: Vec<StageNote>,
}

/// Two-stage scheme that shrinks the final sample: sketch -> R~ -> constant
/// factor (1 +- 1/2) sample -> ellipsoid rounding on the small sample -> R
/// with improved kappa_bar -> final (1 +- eps) sample sized by the better
/// conditioner. The conditioner is compared before/after with the same
/// probe stream and the better one kept, so kappa_bar never regresses.
pub fn improve_embedding_dimension(
    a: &SparseMatrix,
    p: f64,
    eps: f64,
    seed: RngStream,
    opts: &PipelineOptions,
) -> Result<ImprovedEmbedding> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::invalid("p", format!("{p} outside [1, 2]")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", format!("{eps} outside (0, 1)")));
    }
    let n = a.n_rows();
    let d = a.n_cols();
    let mut stages = Vec::new();
    let kind = SketchKind::for_p(p)?;
    let s_sk = match opts.sketch_rows {
        Some(s) => s,
        None => default_sketch_rows(kind, d, opts)?,
    }
    .min(n.max(d));
    let plan = sketch::plan_sketch(kind, n, s_sk, seed.substream(0))?;
    let pa = sketch::apply_sketch(&plan, a)?;
    stages.push(StageNote {
        stage: "sketch".into(),
        rows: s_sk,
        note: "low-distortion sketch of A".into(),
    });
    let r_tilde = conditioning::qr_condition(&pa)?;
    let probe_seed = seed.substream(0x50524F42);
    let est_init =
        conditioning::estimate_condition(&r_tilde.preconditioned(a), p, opts.probes, probe_seed)?;
    let kappa_init = est_init.kappa_bar_hat;
    let w1 = leverage_weights(a, &r_tilde, p, opts.weight_method, seed.substream(2))?;
    let s1 = lemma_sample_size(kappa_init, d, p, 0.5, opts.sample_constant)?;
    let st = build_sampling_matrix(&w1, p, s1, seed.substream(3))?;
    let sa = sample_rows(a, &st)?.to_dense();
    stages.push(StageNote {
        stage: "intermediate_sample".into(),
        rows: st.s_realized(),
        note: format!("constant-distortion sample, target {s1}"),
    });
    let (candidate, round_note) = match conditioning::ellipsoidal_round(&sa, p, opts.rounding_iters)
    {
        Ok(c) => {
            let note = if c.fell_back() {
                "rounding fell back to QR of the sample"
            } else {
                "ellipsoid rounding on the sample"
            };
            (Some(c), note.to_string())
        }
        Err(e) => (None, format!("rounding failed ({e}); kept sketch conditioner")),
    };
    stages.push(StageNote {
        stage: "rounding".into(),
        rows: sa.n_rows(),
        note: round_note,
    });
    let (cond_final, kappa_final, used_rounding) = match candidate {
        Some(c) => {
            let est_final =
                conditioning::estimate_condition(&c.preconditioned(a), p, opts.probes, probe_seed)?;
            if est_final.kappa_bar_hat <= kappa_init {
                (c, est_final.kappa_bar_hat, true)
            } else {
                (r_tilde.clone(), kappa_init, false)
            }
        }
        None => (r_tilde.clone(), kappa_init, false),
    };
    stages.push(StageNote {
        stage: "condition".into(),
        rows: d,
        note: format!("kappa_bar {kappa_init:.3} -> {kappa_final:.3}"),
    });
    let w2 = leverage_weights(a, &cond_final, p, opts.weight_method, seed.substream(4))?;
    let final_target = lemma_sample_size(kappa_final, d, p, eps, opts.sample_constant)?;
    let sampling = build_sampling_matrix(&w2, p, final_target, seed.substream(5))?;
    let single_stage_target = lemma_sample_size(kappa_init, d, p, eps, opts.sample_constant)?;
    stages.push(StageNote {
        stage: "final_sample".into(),
        rows: sampling.s_realized(),
        note: format!("target {final_target} (single-stage would need {single_stage_target})"),
    });
    Ok(ImprovedEmbedding {
        sampling,
        kappa_bar_initial: kappa_init,
        kappa_bar_final: kappa_final,
        single_stage_target,
        final_target,
        conditioner_initial: r_tilde,
        conditioner_final: cond_final,
        intermediate_rows: st.s_realized(),
        used_rounding,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families;

    fn ones_column(n: usize) -> SparseMatrix {
        let t: Vec<_> = (0..n).map(|r| (r, 0, 1.0)).collect();
        SparseMatrix::from_triplets(n, 1, &t).unwrap()
    }

    #[test]
    fn l2_exact_is_the_mean() {
        let a = ones_column(3);
        let sol = solve_l2_exact(&a, &[0.0, 1.0, 10.0]).unwrap();
        assert!((sol.x_hat[0] - 11.0 / 3.0).abs() < 1e-12);
        assert!(sol.converged);
    }

    #[test]
    fn l1_irls_finds_the_median() {
        let a = ones_column(3);
        let sol = solve_lp_small(&a, &[0.0, 1.0, 10.0], 1.0, 0.01, None).unwrap();
        assert!((sol.x_hat[0] - 1.0).abs() < 1e-2, "x = {}", sol.x_hat[0]);
        assert!((sol.objective - 10.0).abs() < 1e-2);
        assert!(sol.converged);
    }

    #[test]
    fn irls_at_p2_matches_exact_least_squares() {
        let (a, b, _) = families::noisy_pair(80, 3, 0.8, 0.1, 5.0, RngStream::new(1)).unwrap();
        let exact = solve_l2_exact(&a, &b).unwrap();
        let irls = solve_lp_small(&a, &b, 2.0, 0.01, None).unwrap();
        for k in 0..3 {
            assert!((exact.x_hat[k] - irls.x_hat[k]).abs() < 1e-8);
        }
        assert!((exact.objective - irls.objective).abs() < 1e-8);
    }

    #[test]
    fn irls_matches_bruteforce_oracle_in_l1() {
        let (a, b, _) = families::noisy_pair(30, 2, 1.0, 0.2, 20.0, RngStream::new(2)).unwrap();
        let oracle = l1_oracle_bruteforce(&a, &b).unwrap();
        let irls = solve_lp_small(&a, &b, 1.0, 0.005, None).unwrap();
        assert!(
            irls.objective <= oracle.objective * 1.02,
            "irls {} oracle {}",
            irls.objective,
            oracle.objective
        );
        // the oracle is a true lower bound
        assert!(irls.objective >= oracle.objective * (1.0 - 1e-9));
    }

    #[test]
    fn bruteforce_hand_cases() {
        let a = ones_column(3);
        let sol = l1_oracle_bruteforce(&a, &[0.0, 1.0, 10.0]).unwrap();
        assert_eq!(sol.x_hat, vec![1.0]);
        assert_eq!(sol.objective, 10.0);
        // consistent systems reach zero objective
        let (a, b, x) = families::consistent_pair(40, 3, 0.9, RngStream::new(3)).unwrap();
        let sol = l1_oracle_bruteforce(&a, &b).unwrap();
        assert!(sol.objective < 1e-9);
        for k in 0..3 {
            assert!((sol.x_hat[k] - x[k]).abs() < 1e-7);
        }
        // guards
        assert!(l1_oracle_bruteforce(&families::identity_top(300, 2).unwrap(), &vec![0.0; 300]).is_err());
        let wide = families::random_sparse(30, 5, 1.0, RngStream::new(4)).unwrap();
        assert!(l1_oracle_bruteforce(&wide, &vec![0.0; 30]).is_err());
    }

    #[test]
    fn solvers_are_scale_equivariant() {
        let (a, b, _) = families::noisy_pair(100, 3, 0.8, 0.1, 10.0, RngStream::new(5)).unwrap();
        let base = solve_lp_small(&a, &b, 1.5, 0.01, None).unwrap();
        for &c in &[1e3_f64, 1e-3] {
            let bc: Vec<f64> = b.iter().map(|v| c * v).collect();
            let tc: Vec<(usize, usize, f64)> = a
                .rows()
                .flat_map(|(r, cols, vals)| {
                    cols.iter()
                        .zip(vals)
                        .map(move |(&cc, &v)| (r, cc, c * v))
                        .collect::<Vec<_>>()
                })
                .collect();
            let ac = SparseMatrix::from_triplets(100, 3, &tc).unwrap();
            let scaled = solve_lp_small(&ac, &bc, 1.5, 0.01, None).unwrap();
            for k in 0..3 {
                assert!(
                    (scaled.x_hat[k] - base.x_hat[k]).abs()
                        <= 1e-9 * base.x_hat[k].abs().max(1.0),
                    "c = {c}: {} vs {}",
                    scaled.x_hat[k],
                    base.x_hat[k]
                );
            }
            assert!((scaled.objective - c * base.objective).abs() <= 1e-9 * c * base.objective);
        }
    }

    #[test]
    fn fast_l2_hits_consistent_systems() {
        let (a, b, _) = families::consistent_pair(2000, 4, 0.8, RngStream::new(6)).unwrap();
        let sol = fast_l2_regression(&a, &b, 0.5, 0.1, RngStream::new(7)).unwrap();
        let nb = lp_norm(&b, 2.0);
        assert!(sol.objective <= 1e-8 * nb, "objective {}", sol.objective);
    }

    #[test]
    fn fast_l2_is_near_optimal_on_noisy_data() {
        let (a, b, _) = families::noisy_pair(5000, 4, 0.8, 0.1, 3.0, RngStream::new(8)).unwrap();
        let exact = solve_l2_exact(&a, &b).unwrap();
        let fast = fast_l2_regression(&a, &b, 0.5, 0.1, RngStream::new(9)).unwrap();
        assert!(
            fast.objective <= exact.objective * 1.5,
            "ratio {}",
            fast.objective / exact.objective
        );
        assert!(fast.objective >= exact.objective * (1.0 - 1e-9));
    }

    #[test]
    fn fast_lp_tracks_the_oracle_in_l1() {
        let (a, b, _) = families::noisy_pair(60, 2, 1.0, 0.2, 20.0, RngStream::new(10)).unwrap();
        let oracle = l1_oracle_bruteforce(&a, &b).unwrap();
        let opts = PipelineOptions::default();
        let sol = fast_lp_regression(&a, &b, 1.0, 0.3, RngStream::new(11), &opts).unwrap();
        assert!(
            sol.objective <= oracle.objective * 1.3,
            "fast {} oracle {}",
            sol.objective,
            oracle.objective
        );
        assert!(sol.objective >= oracle.objective * (1.0 - 1e-9));
        assert!(!sol.pipeline.is_empty());
    }

    #[test]
    fn fast_lp_rejects_bad_inputs() {
        let (a, b, _) = families::consistent_pair(30, 2, 1.0, RngStream::new(12)).unwrap();
        let opts = PipelineOptions::default();
        assert!(fast_lp_regression(&a, &b, 1.0, 0.6, RngStream::new(1), &opts).is_err());
        assert!(fast_lp_regression(&a, &b, 0.5, 0.3, RngStream::new(1), &opts).is_err());
        assert!(fast_lp_regression(&a, &b[..10], 1.0, 0.3, RngStream::new(1), &opts).is_err());
    }

    #[test]
    fn fast_lp_handles_consistent_augmented_span() {
        // b in range(A) makes [A b] rank deficient; the pipeline must not
        // error out and should find a near-zero objective
        let (a, b, _) = families::consistent_pair(400, 3, 0.9, RngStream::new(13)).unwrap();
        let opts = PipelineOptions::default();
        let sol = fast_lp_regression(&a, &b, 1.0, 0.3, RngStream::new(14), &opts).unwrap();
        let nb = lp_norm(&b, 1.0);
        assert!(sol.objective <= 1e-6 * nb, "objective {}", sol.objective);
    }

    #[test]
    fn improve_embedding_never_worsens_conditioning() {
        let a = families::spiky_leverage(3000, 3, 1.0, RngStream::new(15)).unwrap();
        let opts = PipelineOptions::default();
        let imp = improve_embedding_dimension(&a, 1.0, 0.3, RngStream::new(16), &opts).unwrap();
        assert!(imp.kappa_bar_final <= imp.kappa_bar_initial);
        assert!(imp.final_target <= imp.single_stage_target);
        assert!(imp.sampling.s_realized() > 0);
        assert!(!imp.stages.is_empty());
    }

    #[test]
    fn solution_serializes_to_json() {
        let a = ones_column(3);
        let sol = solve_l2_exact(&a, &[1.0, 2.0, 3.0]).unwrap();
        let js = serde_json::to_value(&sol).unwrap();
        assert_eq!(js["p"], 2.0);
        assert!(js["objective"].is_f64());
        assert!(js["pipeline"].is_array());
    }
}
