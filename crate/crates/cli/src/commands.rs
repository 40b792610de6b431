//! One function per subcommand. Each takes fully resolved parameters,
//! runs the corresponding library ops, and returns an Outcome: pass/fail,
//! human-readable lines, a JSON result payload, and any extra artifact
//! files. The caller owns report writing and exit codes.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use lpembed::conditioning;
use lpembed::families;
use lpembed::regression::{self, PipelineOptions};
use lpembed::rng::RngStream;
use lpembed::sampling::{self, WeightMethod};
use lpembed::sketch::{self, DistortionReport, SketchKind};
use lpembed::sparse::{lp_norm, SparseMatrix};
use lpembed::stats;
use lpembed::verify::{self, GammaKind, TailGridSpec};
use lpembed::{Error, Result};

use crate::config::{Family, KindArg, MethodArg, SolverArg, WeightArg};

pub struct Outcome {
    pub pass: bool,
    pub lines: Vec<String>,
    pub config_echo: serde_json::Value,
    pub results: serde_json::Value,
    /// artifact files written under the output directory, relative names
    pub files: Vec<String>,
}

fn echo<T: Serialize>(params: &T) -> serde_json::Value {
    serde_json::to_value(params).expect("params serialize")
}

fn write_text(out: &Path, name: &str, contents: &str) -> Result<String> {
    let path = out.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(name.to_string())
}

/// Families that come with a right-hand side.
fn is_pair(family: Family) -> bool {
    matches!(family, Family::ConsistentPair | Family::NoisyPair)
}

#[allow(clippy::type_complexity)]
fn build_family(
    family: Family,
    n: usize,
    d: usize,
    density: f64,
    outlier_frac: f64,
    outlier_scale: f64,
    seed: RngStream,
) -> Result<(SparseMatrix, Option<Vec<f64>>, Option<Vec<f64>>)> {
    if family != Family::IdentityTop && (n as f64) * density < d as f64 {
        return Err(Error::invalid(
            "density",
            format!("n * density = {} cannot support {d} independent columns", n as f64 * density),
        ));
    }
    match family {
        Family::RandomSparse => Ok((families::random_sparse(n, d, density, seed)?, None, None)),
        Family::SpikyLeverage => Ok((families::spiky_leverage(n, d, density, seed)?, None, None)),
        Family::IdentityTop => Ok((families::identity_top(n, d)?, None, None)),
        Family::ConsistentPair => {
            let (a, b, x) = families::consistent_pair(n, d, density, seed)?;
            Ok((a, Some(b), Some(x)))
        }
        Family::NoisyPair => {
            let (a, b, x) = families::noisy_pair(n, d, density, outlier_frac, outlier_scale, seed)?;
            Ok((a, Some(b), Some(x)))
        }
    }
}

/// Worst one-sided deviation of the measured ratio range from 1.
fn deviation_from_unit(report: &DistortionReport) -> f64 {
    let (lo, hi) = report.exact.unwrap_or((report.probe_lower, report.probe_upper));
    (hi - 1.0).max(1.0 - lo)
}

#[derive(Serialize)]
pub struct SketchParams {
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub density: f64,
    pub kind: KindArg,
    pub p: f64,
    pub s: Option<usize>,
    pub eps: f64,
    pub delta: f64,
    pub c: f64,
    pub probes: usize,
    pub max_distortion: Option<f64>,
}

pub fn run_sketch(params: &SketchParams, seed: RngStream, _out: &Path) -> Result<Outcome> {
    let (a, _, _) = build_family(
        params.family,
        params.n,
        params.d,
        params.density,
        0.0,
        1.0,
        seed.substream(1),
    )?;
    let kind = match params.kind {
        KindArg::SignL2 => SketchKind::SignL2,
        KindArg::CauchyL1 => SketchKind::CauchyL1,
        KindArg::PStable => SketchKind::PStable(params.p),
        KindArg::DensePStable => SketchKind::DensePStable(params.p),
    };
    let s = match params.s {
        Some(s) => s,
        None => match kind {
            SketchKind::SignL2 => sketch::l2_sketch_rows(params.d, params.eps, params.delta)?,
            _ => sketch::lp_sketch_rows(params.d, params.c),
        },
    };
    let (_, report) = sketch::sketch_and_measure(kind, &a, s, params.probes, seed.substream(2))?;
    let dev = deviation_from_unit(&report);
    let pass = params.max_distortion.is_none_or(|m| dev <= m);
    let mut lines = vec![format!(
        "sketch {} rows {} -> {}: ratio range [{:.4}, {:.4}]{}",
        report.kind,
        report.n,
        report.s,
        report.probe_lower,
        report.probe_upper,
        report
            .exact
            .map(|(lo, hi)| format!(", exact singular range [{lo:.4}, {hi:.4}]"))
            .unwrap_or_default(),
    )];
    if let Some(m) = params.max_distortion {
        lines.push(format!("distortion {dev:.4} vs limit {m} -> {}", if pass { "ok" } else { "FAIL" }));
    }
    Ok(Outcome {
        pass,
        lines,
        config_echo: echo(params),
        results: json!({ "report": report, "deviation_from_unit": dev }),
        files: Vec::new(),
    })
}

#[derive(Serialize)]
pub struct ConditionParams {
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub density: f64,
    pub p: f64,
    pub method: MethodArg,
    pub probes: usize,
    pub rounding_iters: usize,
    pub max_kappa_bar: Option<f64>,
}

pub fn run_condition(params: &ConditionParams, seed: RngStream, _out: &Path) -> Result<Outcome> {
    let (a, _, _) = build_family(
        params.family,
        params.n,
        params.d,
        params.density,
        0.0,
        1.0,
        seed.substream(1),
    )?;
    let dense = a.to_dense();
    let cond = match params.method {
        MethodArg::Qr => conditioning::qr_condition(&dense)?,
        MethodArg::Rounding => conditioning::ellipsoidal_round(&dense, params.p, params.rounding_iters)?,
    };
    let est = conditioning::estimate_condition(
        &cond.preconditioned(&a),
        params.p,
        params.probes,
        seed.substream(2),
    )?;
    let pass = params.max_kappa_bar.is_none_or(|m| est.kappa_bar_hat <= m);
    let mut lines = vec![format!(
        "condition p={} method={:?}: kappa_bar_hat = {:.4}, kappa_hat = {:.4}{}",
        params.p,
        cond.method(),
        est.kappa_bar_hat,
        est.kappa_hat(),
        if cond.fell_back() { " (rounding fell back to QR)" } else { "" },
    )];
    if let Some(m) = params.max_kappa_bar {
        lines.push(format!("kappa_bar limit {m} -> {}", if pass { "ok" } else { "FAIL" }));
    }
    Ok(Outcome {
        pass,
        lines,
        config_echo: echo(params),
        results: json!({
            "estimate": est,
            "method": cond.method(),
            "fell_back": cond.fell_back(),
            "achieved_kappa_bar": cond.achieved_kappa_bar(),
            "sandwich_ok": est.sandwich_ok(1.5),
        }),
        files: Vec::new(),
    })
}

#[derive(Serialize)]
pub struct SampleParams {
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub density: f64,
    pub p: f64,
    pub eps: f64,
    pub s: Option<usize>,
    pub constant: f64,
    pub weights: WeightArg,
    pub sketch_columns: usize,
    pub probes: usize,
    pub max_distortion: Option<f64>,
}

pub fn run_sample(params: &SampleParams, seed: RngStream, out: &Path) -> Result<Outcome> {
    let (a, _, _) = build_family(
        params.family,
        params.n,
        params.d,
        params.density,
        0.0,
        1.0,
        seed.substream(1),
    )?;
    let cond = conditioning::qr_condition(&a.to_dense())?;
    let est = conditioning::estimate_condition(
        &cond.preconditioned(&a),
        params.p,
        params.probes,
        seed.substream(2),
    )?;
    let s_target = match params.s {
        Some(s) => s,
        None => sampling::lemma_sample_size(
            est.kappa_bar_hat,
            params.d,
            params.p,
            params.eps,
            params.constant,
        )?,
    };
    let method = match params.weights {
        WeightArg::Exact => WeightMethod::Exact,
        WeightArg::Sketched => WeightMethod::Sketched { columns: params.sketch_columns },
    };
    let weights = sampling::leverage_weights(&a, &cond, params.p, method, seed.substream(3))?;
    let smat = sampling::build_sampling_matrix(&weights, params.p, s_target, seed.substream(4))?;
    let report = sampling::verify_sampling_distortion(&a, &smat, params.probes, seed.substream(5))?;
    let dev = deviation_from_unit(&report);
    let pass = smat.s_realized() > 0 && params.max_distortion.is_none_or(|m| dev <= m);
    let mut lines = vec![format!(
        "sample p={} kappa_bar_hat={:.3}: target {} rows, realized {}, ratio range [{:.4}, {:.4}]",
        params.p,
        est.kappa_bar_hat,
        s_target,
        smat.s_realized(),
        report.probe_lower,
        report.probe_upper,
    )];
    if let Some(m) = params.max_distortion {
        lines.push(format!("distortion {dev:.4} vs limit {m} -> {}", if pass { "ok" } else { "FAIL" }));
    }
    Ok(Outcome {
        pass,
        lines,
        config_echo: echo(params),
        results: json!({
            "condition": est,
            "s_target": s_target,
            "s_realized": smat.s_realized(),
            "report": report,
            "deviation_from_unit": dev,
            "sampling": serde_json::from_str::<serde_json::Value>(&smat.metadata_json()).unwrap(),
        }),
        files: vec![write_text(out, "sample_weights.csv", &smat.to_csv())?],
    })
}

#[derive(Serialize)]
pub struct RegressParams {
    pub family: Option<Family>,
    pub n: usize,
    pub d: usize,
    pub density: f64,
    pub outlier_frac: f64,
    pub outlier_scale: f64,
    pub matrix: Option<std::path::PathBuf>,
    pub rhs: Option<std::path::PathBuf>,
    pub p: f64,
    pub eps: f64,
    pub delta: f64,
    pub solver: SolverArg,
    pub retries: usize,
    pub sketch_c: f64,
    pub sample_constant: f64,
    pub probes: usize,
    pub max_objective: Option<f64>,
}

pub fn run_regress(params: &RegressParams, seed: RngStream, out: &Path) -> Result<Outcome> {
    // effective family: None when the problem comes from files
    let family = match (&params.matrix, &params.rhs) {
        (Some(_), Some(_)) => None,
        (None, None) => Some(params.family.unwrap_or(Family::ConsistentPair)),
        _ => {
            return Err(Error::invalid(
                "matrix",
                "--matrix and --rhs must be given together",
            ))
        }
    };
    let (a, b) = match family {
        None => {
            let a = lpembed::io::read_matrix_market(params.matrix.as_ref().unwrap())?;
            let b = lpembed::io::read_vector(params.rhs.as_ref().unwrap())?;
            (a, b)
        }
        Some(family) => {
            if !is_pair(family) {
                return Err(Error::invalid(
                    "family",
                    "regress needs a pair family (consistent-pair or noisy-pair) or explicit --matrix/--rhs",
                ));
            }
            let (a, b, _) = build_family(
                family,
                params.n,
                params.d,
                params.density,
                params.outlier_frac,
                params.outlier_scale,
                seed.substream(1),
            )?;
            (a, b.expect("pair family"))
        }
    };
    let opts = PipelineOptions {
        sketch_c: params.sketch_c,
        sample_constant: params.sample_constant,
        probes: params.probes,
        retries: params.retries,
        ..PipelineOptions::default()
    };
    let run_seed = seed.substream(2);
    let sol = match params.solver {
        SolverArg::Exact => {
            if params.p == 2.0 {
                regression::solve_l2_exact(&a, &b)?
            } else {
                regression::solve_lp_small(&a, &b, params.p, params.eps, None)?
            }
        }
        SolverArg::Auto => {
            if params.p == 2.0 {
                regression::fast_l2_regression(&a, &b, params.eps, params.delta, run_seed)?
            } else {
                regression::fast_lp_regression(&a, &b, params.p, params.eps, run_seed, &opts)?
            }
        }
    };
    // default assertion: a consistent system must be solved to (near) zero
    let max_objective = params
        .max_objective
        .or_else(|| (family == Some(Family::ConsistentPair)).then_some(1e-6));
    let pass = max_objective.is_none_or(|m| sol.objective <= m);
    let mut lines = vec![format!(
        "regress p={} n={} d={}: objective {:.6e} after {} iterations ({})",
        params.p,
        a.n_rows(),
        a.n_cols(),
        sol.objective,
        sol.iterations,
        if sol.converged { "converged" } else { "iteration cap hit" },
    )];
    if let Some(m) = max_objective {
        lines.push(format!(
            "objective limit {m:.3e} -> {}",
            if pass { "ok" } else { "FAIL" }
        ));
    }
    lpembed::io::write_vector(out.join("x_hat.txt"), &sol.x_hat)?;
    Ok(Outcome {
        pass,
        lines,
        config_echo: echo(params),
        results: json!({ "solution": sol, "norm_b": lp_norm(&b, params.p) }),
        files: vec!["x_hat.txt".into()],
    })
}

#[derive(Serialize)]
pub struct TailsParams {
    pub trials: usize,
    pub grid: bool,
}

pub fn run_tails(params: &TailsParams, seed: RngStream, out: &Path) -> Result<Outcome> {
    let mut reports = Vec::new();
    if params.grid {
        let spec = TailGridSpec {
            ms: vec![3, 10, 100],
            gamma_kinds: vec![GammaKind::Uniform, GammaKind::Geometric],
            upper_ts: vec![2.0, 5.0, 10.0],
            lower_ts: vec![0.3, 0.5],
            trials: params.trials,
        };
        reports.extend(verify::run_cauchy_grid(&spec, seed.substream(1))?);
        reports.extend(verify::run_gaussian_grid(&spec, seed.substream(2))?);
        for (i, &p) in [1.25, 1.5, 1.75].iter().enumerate() {
            let c = 2f64.powf(p - 1.0);
            reports.extend(verify::run_pstable_grid(p, c, c, &spec, seed.substream(3 + i as u64))?);
        }
    } else {
        let g3 = verify::gamma_vector(GammaKind::Uniform, 3);
        let g24 = verify::gamma_vector(GammaKind::Uniform, 24);
        let c = 2f64.powf(1.5 - 1.0);
        reports.push(verify::check_cauchy_upper(3, &g3, 10.0, params.trials, seed.substream(1))?);
        reports.push(verify::check_cauchy_lower(24, &g24, 0.5, params.trials, seed.substream(2))?);
        reports.push(verify::check_gaussian_lower(24, &g24, 0.5, params.trials, seed.substream(3))?);
        reports.push(verify::check_pstable_upper(1.5, c, 3, &g3, 10.0, params.trials, seed.substream(4))?);
        reports.push(verify::check_pstable_lower(1.5, c, 24, &g24, 0.5, params.trials, seed.substream(5))?);
    }
    let pass = reports.iter().all(|r| r.pass);
    let lines: Vec<String> = reports
        .iter()
        .map(|r| {
            format!(
                "{:?} m={} t={}{}: empirical {:.5} vs bound {:.5} -> {}",
                r.lemma_id,
                r.m,
                r.t,
                r.p.map(|p| format!(" p={p}")).unwrap_or_default(),
                r.empirical,
                r.bound,
                if r.pass { "ok" } else { "FAIL" },
            )
        })
        .collect();
    let jsonl = reports
        .iter()
        .map(|r| r.to_json() + "\n")
        .collect::<String>();
    Ok(Outcome {
        pass,
        lines,
        config_echo: echo(params),
        results: json!({ "checks": reports.len(), "reports": reports }),
        files: vec![write_text(out, "tails.jsonl", &jsonl)?],
    })
}

#[derive(Serialize)]
pub struct CdfParams {
    pub samples: usize,
    pub t_points: usize,
    pub p_step: f64,
}

pub fn run_cdf_order(params: &CdfParams, seed: RngStream, out: &Path) -> Result<Outcome> {
    if !(params.p_step > 0.0) {
        return Err(Error::invalid("p-step", format!("{}", params.p_step)));
    }
    if params.t_points < 2 {
        return Err(Error::invalid("t-points", "need at least 2"));
    }
    let mut p_grid = Vec::new();
    let mut p = 1.0;
    while p < 2.0 - 1e-12 {
        p_grid.push(p);
        p += params.p_step;
    }
    p_grid.push(2.0);
    let t_grid: Vec<f64> = (0..params.t_points)
        .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / (params.t_points - 1) as f64))
        .collect();
    let rep = verify::check_cdf_ordering(&p_grid, &t_grid, params.samples, seed.substream(1))?;
    let lines = vec![format!(
        "cdf ordering over {} p values x {} thresholds, {} samples each: max gap {:.2e}, {} violations -> {}",
        p_grid.len(),
        t_grid.len(),
        params.samples,
        rep.max_violation,
        rep.violations,
        if rep.pass { "ok" } else { "FAIL" },
    )];
    let csv = rep.to_csv();
    Ok(Outcome {
        pass: rep.pass,
        lines,
        config_echo: echo(params),
        results: json!({
            "p_grid": rep.p_grid,
            "t_points": rep.t_grid.len(),
            "max_violation": rep.max_violation,
            "violations": rep.violations,
            "pass": rep.pass,
        }),
        files: vec![write_text(out, "cdf_order.csv", &csv)?],
    })
}

#[derive(Serialize)]
pub struct MomentsParams {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub trials: usize,
}

pub fn run_moments(params: &MomentsParams, seed: RngStream, _out: &Path) -> Result<Outcome> {
    let u = verify::random_orthonormal(params.n, params.d, seed.substream(1))?;
    let rep = verify::check_l2_moments(&u, params.s, params.trials, seed.substream(2))?;
    let lines = vec![
        format!(
            "moments n={} d={} s={} trials={}: E||X-I||_F^2 = {:.5} (formula {:.5}, bound {:.5})",
            params.n, params.d, params.s, params.trials, rep.fro_emp, rep.fro_formula, rep.fro_bound,
        ),
        format!(
            "markov: Pr[||X-I||_F >= {:.4}] = {:.4} vs bound {:.4}; overall -> {}",
            rep.markov_eps,
            rep.markov_emp,
            rep.markov_bound,
            if rep.pass { "ok" } else { "FAIL" },
        ),
    ];
    Ok(Outcome {
        pass: rep.pass,
        lines,
        config_echo: echo(params),
        results: serde_json::to_value(&rep).expect("report serializes"),
        files: Vec::new(),
    })
}

#[derive(Serialize)]
pub struct BenchParams {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub nnz: Vec<usize>,
    pub reps: usize,
    pub min_r2: Option<f64>,
}

pub fn run_bench(params: &BenchParams, seed: RngStream, out: &Path) -> Result<Outcome> {
    if params.nnz.is_empty() || params.reps == 0 {
        return Err(Error::invalid("nnz", "empty ladder or zero reps"));
    }
    let mut rows = Vec::new();
    let mut sink = 0.0;
    for (i, &target) in params.nnz.iter().enumerate() {
        let per_row = (target as f64 / params.n as f64).round().max(1.0) as usize;
        if per_row > params.d {
            return Err(Error::invalid(
                "nnz",
                format!("{target} needs {per_row} nonzeros per row but d = {}", params.d),
            ));
        }
        let density = per_row as f64 / params.d as f64;
        let a = families::random_sparse(params.n, params.d, density, seed.substream(i as u64))?;
        let plan = sketch::plan_sketch(SketchKind::SignL2, params.n, params.s, seed.substream(1000 + i as u64))?;
        // warm up once, then take the fastest of `reps` timings
        let warm = sketch::apply_sketch(&plan, &a)?;
        sink += warm.get(0, 0);
        let mut best_ms = f64::INFINITY;
        for _ in 0..params.reps {
            let t0 = Instant::now();
            let out = sketch::apply_sketch(&plan, &a)?;
            let dt = t0.elapsed().as_secs_f64() * 1e3;
            sink += out.get(0, 0);
            best_ms = best_ms.min(dt);
        }
        rows.push((a.nnz(), best_ms));
    }
    std::hint::black_box(sink);
    let xs: Vec<f64> = rows.iter().map(|&(nnz, _)| nnz as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|&(_, ms)| ms).collect();
    let (slope, intercept, r2) = stats::linear_fit(&xs, &ys);
    let pass = params.min_r2.is_none_or(|m| r2 >= m);
    let mut lines: Vec<String> = rows
        .iter()
        .map(|&(nnz, ms)| format!("nnz {nnz:>10}: {ms:10.3} ms"))
        .collect();
    lines.push(format!(
        "linear fit: {:.3e} ms/nnz + {:.3} ms, R^2 = {:.4}{}",
        slope,
        intercept,
        r2,
        params
            .min_r2
            .map(|m| format!(" (limit {m} -> {})", if pass { "ok" } else { "FAIL" }))
            .unwrap_or_default(),
    ));
    let mut csv = String::from("nnz,wall_ms\n");
    for &(nnz, ms) in &rows {
        csv.push_str(&format!("{nnz},{ms:.6}\n"));
    }
    Ok(Outcome {
        pass,
        lines,
        config_echo: echo(params),
        results: json!({
            "rows": rows,
            "slope_ms_per_nnz": slope,
            "intercept_ms": intercept,
            "r2": r2,
        }),
        files: vec![write_text(out, "bench.csv", &csv)?],
    })
}

#[derive(Serialize)]
pub struct GenerateParams {
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub density: f64,
    pub outlier_frac: f64,
    pub outlier_scale: f64,
}

pub fn run_generate(params: &GenerateParams, seed: RngStream, out: &Path) -> Result<Outcome> {
    let (a, b, x) = build_family(
        params.family,
        params.n,
        params.d,
        params.density,
        params.outlier_frac,
        params.outlier_scale,
        seed.substream(1),
    )?;
    lpembed::io::write_matrix_market(out.join("matrix.mtx"), &a)?;
    let mut files = vec!["matrix.mtx".to_string()];
    if let Some(b) = &b {
        lpembed::io::write_vector(out.join("b.txt"), b)?;
        files.push("b.txt".to_string());
    }
    if let Some(x) = &x {
        lpembed::io::write_vector(out.join("x_true.txt"), x)?;
        files.push("x_true.txt".to_string());
    }
    let lines = vec![format!(
        "generated {:?}: {} x {}, {} stored nonzeros{}",
        params.family,
        a.n_rows(),
        a.n_cols(),
        a.nnz(),
        if b.is_some() { ", with right-hand side" } else { "" },
    )];
    Ok(Outcome {
        pass: true,
        lines,
        config_echo: echo(params),
        results: json!({
            "n": a.n_rows(),
            "d": a.n_cols(),
            "nnz": a.nnz(),
            "has_rhs": b.is_some(),
        }),
        files,
    })
}
