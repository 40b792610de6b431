//! Monte Carlo checks of the tail inequalities and moment identities the
//! embeddings rest on.
//!
//! Every report recomputes its bound from the printed formula at output
//! time and carries (empirical, bound, stderr) so a failure is auditable.
//! Upper-tail checks pass when empirical <= bound + 3 stderr; lower-tail
//! checks when empirical <= bound * (1 + 3 stderr / empirical). Checks that
//! rely on the conjectured stable/Cauchy comparison constants 2^{p-1} are
//! labeled conjecture-grade: the comparison argument is existential only
//! and pins no numeric constant.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, RngStream, StableParams};
use crate::sketch::{self, SketchKind};
use crate::sparse::DenseMatrix;
use crate::stats::mc_stderr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    CauchyUpper,
    CauchyLower,
    GaussianLower,
    PStableUpper,
    PStableLower,
}

impl LemmaId {
    fn is_lower(self) -> bool {
        matches!(
            self,
            LemmaId::CauchyLower | LemmaId::GaussianLower | LemmaId::PStableLower
        )
    }
}

/// One Monte Carlo tail check: X = sum_i gamma_i V_i for the lemma's law,
/// empirical tail frequency vs the printed bound.
#[derive(Clone, Debug, Serialize)]
pub struct TailCheckReport {
    pub lemma_id: LemmaId,
    pub m: usize,
    pub gamma: Vec<f64>,
    pub t: f64,
    pub trials: usize,
    pub empirical: f64,
    pub bound: f64,
    pub mc_stderr: f64,
    pub pass: bool,
    /// set for the p-stable lemmas
    pub p: Option<f64>,
    /// alpha_p (upper) or beta_p (lower) actually used
    pub constant: Option<f64>,
    /// true when the check uses the conjectured 2^{p-1} constants
    pub conjecture_grade: bool,
}

impl TailCheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn finish_report(
    lemma_id: LemmaId,
    gamma: &[f64],
    t: f64,
    trials: usize,
    hits: usize,
    bound: f64,
    p: Option<f64>,
    constant: Option<f64>,
) -> TailCheckReport {
    let empirical = hits as f64 / trials as f64;
    let se = mc_stderr(empirical, trials);
    let pass = if lemma_id.is_lower() {
        empirical == 0.0 || empirical <= bound * (1.0 + 3.0 * se / empirical)
    } else {
        empirical <= bound + 3.0 * se
    };
    TailCheckReport {
        lemma_id,
        m: gamma.len(),
        gamma: gamma.to_vec(),
        t,
        trials,
        empirical,
        bound,
        mc_stderr: se,
        pass,
        p,
        constant,
        conjecture_grade: constant.is_some(),
    }
}

/// Weight patterns used by the grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaKind {
    Uniform,
    /// gamma_i = 2^{-i}
    Geometric,
}

pub fn gamma_vector(kind: GammaKind, m: usize) -> Vec<f64> {
    match kind {
        GammaKind::Uniform => vec![1.0; m],
        GammaKind::Geometric => (0..m).map(|i| 0.5_f64.powi(i as i32)).collect(),
    }
}

#[derive(Clone, Copy)]
enum TailLaw {
    /// |C| for standard Cauchy C
    CauchyAbs,
    /// |G|^2 for standard Gaussian G
    GaussAbsSq,
    /// |X_p|^p
    PStableAbsPow(StableParams),
}

/// trials draws of X = sum_i gamma_i V_i, V iid from the law. Block b of
/// 8192 trials uses substream(b), so the output is independent of thread
/// scheduling.
fn weighted_sums(law: TailLaw, gamma: &[f64], trials: usize, seed: RngStream) -> Vec<f64> {
    const BLOCK: usize = 8192;
    let mut out = vec![0.0; trials];
    out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
        let mut rng = seed.substream(b as u64).rng();
        for x in chunk.iter_mut() {
            let mut acc = 0.0;
            match law {
                TailLaw::CauchyAbs => {
                    for &g in gamma {
                        acc += g * rng::sample_cauchy(&mut rng).abs();
                    }
                }
                TailLaw::GaussAbsSq => {
                    for &g in gamma {
                        let v = rng::sample_gaussian(&mut rng);
                        acc += g * v * v;
                    }
                }
                TailLaw::PStableAbsPow(params) => {
                    for &g in gamma {
                        acc += g * rng::sample_pstable(params, &mut rng).abs().powf(params.p());
                    }
                }
            }
            *x = acc;
        }
    });
    out
}

fn count_above(xs: &[f64], cut: f64) -> usize {
    xs.iter().filter(|&&x| x > cut).count()
}

fn count_at_most(xs: &[f64], cut: f64) -> usize {
    xs.iter().filter(|&&x| x <= cut).count()
}

fn check_upper_args(m: usize, gamma: &[f64], t: f64, trials: usize) -> Result<()> {
    if m < 3 {
        return Err(Error::invalid("m", format!("{m} < 3")));
    }
    if gamma.len() != m {
        return Err(Error::dims("gamma", format!("{m}"), format!("{}", gamma.len())));
    }
    if t < 1.0 || !t.is_finite() {
        return Err(Error::invalid("t", format!("{t} < 1")));
    }
    if gamma.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
        return Err(Error::invalid("gamma", "upper tail requires gamma_i > 0"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "0"));
    }
    Ok(())
}

fn check_lower_args(m: usize, gamma: &[f64], t: f64, trials: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("m", "0"));
    }
    if gamma.len() != m {
        return Err(Error::dims("gamma", format!("{m}"), format!("{}", gamma.len())));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid("t", format!("{t} outside (0, 1)")));
    }
    if gamma.iter().any(|&g| g < 0.0 || !g.is_finite()) {
        return Err(Error::invalid("gamma", "lower tail requires gamma_i >= 0"));
    }
    if gamma.iter().all(|&g| g == 0.0) {
        return Err(Error::invalid("gamma", "all weights are zero"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "0"));
    }
    Ok(())
}

fn upper_bound_value(m: usize, t: f64) -> f64 {
    2.0 * (m as f64 * t).ln() / t
}

fn lower_bound_value(gamma: &[f64], t: f64, denom: f64) -> f64 {
    let total: f64 = gamma.iter().sum();
    let max = gamma.iter().cloned().fold(0.0, f64::max);
    (-total * t * t / (denom * max)).exp()
}

/// Pr[sum gamma_i |C_i| > t gamma] vs 2 ln(mt)/t, m >= 3, t >= 1.
pub fn check_cauchy_upper(
    m: usize,
    gamma: &[f64],
    t: f64,
    trials: usize,
    seed: RngStream,
) -> Result<TailCheckReport> {
    check_upper_args(m, gamma, t, trials)?;
    let xs = weighted_sums(TailLaw::CauchyAbs, gamma, trials, seed.substream(0));
    let total: f64 = gamma.iter().sum();
    let hits = count_above(&xs, t * total);
    Ok(finish_report(
        LemmaId::CauchyUpper,
        gamma,
        t,
        trials,
        hits,
        upper_bound_value(m, t),
        None,
        None,
    ))
}

/// Pr[sum gamma_i |C_i| <= (1-t) gamma] vs exp(-gamma t^2 / (3 max_i gamma_i)).
pub fn check_cauchy_lower(
    m: usize,
    gamma: &[f64],
    t: f64,
    trials: usize,
    seed: RngStream,
) -> Result<TailCheckReport> {
    check_lower_args(m, gamma, t, trials)?;
    let xs = weighted_sums(TailLaw::CauchyAbs, gamma, trials, seed.substream(0));
    let total: f64 = gamma.iter().sum();
    let hits = count_at_most(&xs, (1.0 - t) * total);
    Ok(finish_report(
        LemmaId::CauchyLower,
        gamma,
        t,
        trials,
        hits,
        lower_bound_value(gamma, t, 3.0),
        None,
        None,
    ))
}

/// Pr[sum gamma_i |G_i|^2 <= (1-t) gamma] vs exp(-gamma t^2 / (6 max_i gamma_i)).
pub fn check_gaussian_lower(
    m: usize,
    gamma: &[f64],
    t: f64,
    trials: usize,
    seed: RngStream,
) -> Result<TailCheckReport> {
    check_lower_args(m, gamma, t, trials)?;
    let xs = weighted_sums(TailLaw::GaussAbsSq, gamma, trials, seed.substream(0));
    let total: f64 = gamma.iter().sum();
    let hits = count_at_most(&xs, (1.0 - t) * total);
    Ok(finish_report(
        LemmaId::GaussianLower,
        gamma,
        t,
        trials,
        hits,
        lower_bound_value(gamma, t, 6.0),
        None,
        None,
    ))
}

fn check_stable_params(p: f64, constant: f64) -> Result<StableParams> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::invalid("p", format!("{p} outside (1, 2)")));
    }
    if !(constant > 0.0) || !constant.is_finite() {
        return Err(Error::invalid("constant", format!("{constant} not positive")));
    }
    StableParams::new(p)
}

/// Pr[sum gamma_i |X_i|^p >= t alpha_p gamma] vs 2 ln(mt)/t. alpha_p is a
/// caller-supplied candidate (the conjectured value is 2^{p-1}).
pub fn check_pstable_upper(
    p: f64,
    alpha_p: f64,
    m: usize,
    gamma: &[f64],
    t: f64,
    trials: usize,
    seed: RngStream,
) -> Result<TailCheckReport> {
    let params = check_stable_params(p, alpha_p)?;
    check_upper_args(m, gamma, t, trials)?;
    let xs = weighted_sums(TailLaw::PStableAbsPow(params), gamma, trials, seed.substream(0));
    let total: f64 = gamma.iter().sum();
    let hits = xs.iter().filter(|&&x| x >= t * alpha_p * total).count();
    Ok(finish_report(
        LemmaId::PStableUpper,
        gamma,
        t,
        trials,
        hits,
        upper_bound_value(m, t),
        Some(p),
        Some(alpha_p),
    ))
}

/// Pr[sum gamma_i |X_i|^p <= beta_p (1-t) gamma] vs
/// exp(-gamma t^2 / (6 max_i gamma_i)). beta_p as above.
pub fn check_pstable_lower(
    p: f64,
    beta_p: f64,
    m: usize,
    gamma: &[f64],
    t: f64,
    trials: usize,
    seed: RngStream,
) -> Result<TailCheckReport> {
    let params = check_stable_params(p, beta_p)?;
    check_lower_args(m, gamma, t, trials)?;
    let xs = weighted_sums(TailLaw::PStableAbsPow(params), gamma, trials, seed.substream(0));
    let total: f64 = gamma.iter().sum();
    let hits = count_at_most(&xs, beta_p * (1.0 - t) * total);
    Ok(finish_report(
        LemmaId::PStableLower,
        gamma,
        t,
        trials,
        hits,
        lower_bound_value(gamma, t, 6.0),
        Some(p),
        Some(beta_p),
    ))
}

/// A grid of tail checks over m values, weight patterns, and thresholds.
/// One sample array per (m, weights) cell serves every threshold, which is
/// what makes the million-trial grids affordable.
#[derive(Clone, Debug)]
pub struct TailGridSpec {
    pub ms: Vec<usize>,
    pub gamma_kinds: Vec<GammaKind>,
    /// upper-tail thresholds, each >= 1
    pub upper_ts: Vec<f64>,
    /// lower-tail thresholds, each in (0, 1)
    pub lower_ts: Vec<f64>,
    pub trials: usize,
}

impl TailGridSpec {
    fn validate(&self, need_m3: bool) -> Result<()> {
        if self.ms.is_empty() || self.gamma_kinds.is_empty() {
            return Err(Error::invalid("grid", "empty m or weight axis"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "0"));
        }
        if need_m3 && !self.upper_ts.is_empty() && self.ms.iter().any(|&m| m < 3) {
            return Err(Error::invalid("m", "upper-tail grid requires m >= 3"));
        }
        if self.upper_ts.iter().any(|&t| t < 1.0) {
            return Err(Error::invalid("upper_ts", "thresholds must be >= 1"));
        }
        if self.lower_ts.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::invalid("lower_ts", "thresholds must lie in (0, 1)"));
        }
        Ok(())
    }

    fn cells(&self) -> impl Iterator<Item = (u64, usize, GammaKind)> + '_ {
        self.ms.iter().enumerate().flat_map(move |(i, &m)| {
            self.gamma_kinds
                .iter()
                .enumerate()
                .map(move |(j, &k)| ((i * self.gamma_kinds.len() + j) as u64, m, k))
        })
    }
}

/// Cauchy grid: upper and lower tails share each cell's samples.
pub fn run_cauchy_grid(spec: &TailGridSpec, seed: RngStream) -> Result<Vec<TailCheckReport>> {
    spec.validate(true)?;
    let mut out = Vec::new();
    for (cell, m, kind) in spec.cells() {
        let gamma = gamma_vector(kind, m);
        let xs = weighted_sums(TailLaw::CauchyAbs, &gamma, spec.trials, seed.substream(cell));
        let total: f64 = gamma.iter().sum();
        for &t in &spec.upper_ts {
            let hits = count_above(&xs, t * total);
            out.push(finish_report(
                LemmaId::CauchyUpper,
                &gamma,
                t,
                spec.trials,
                hits,
                upper_bound_value(m, t),
                None,
                None,
            ));
        }
        for &t in &spec.lower_ts {
            let hits = count_at_most(&xs, (1.0 - t) * total);
            out.push(finish_report(
                LemmaId::CauchyLower,
                &gamma,
                t,
                spec.trials,
                hits,
                lower_bound_value(&gamma, t, 3.0),
                None,
                None,
            ));
        }
    }
    Ok(out)
}

/// Gaussian grid: lower tails only (no upper-tail lemma to check).
pub fn run_gaussian_grid(spec: &TailGridSpec, seed: RngStream) -> Result<Vec<TailCheckReport>> {
    spec.validate(false)?;
    let mut out = Vec::new();
    for (cell, m, kind) in spec.cells() {
        let gamma = gamma_vector(kind, m);
        let xs = weighted_sums(TailLaw::GaussAbsSq, &gamma, spec.trials, seed.substream(cell));
        let total: f64 = gamma.iter().sum();
        for &t in &spec.lower_ts {
            let hits = count_at_most(&xs, (1.0 - t) * total);
            out.push(finish_report(
                LemmaId::GaussianLower,
                &gamma,
                t,
                spec.trials,
                hits,
                lower_bound_value(&gamma, t, 6.0),
                None,
                None,
            ));
        }
    }
    Ok(out)
}

/// p-stable grid with candidate constants alpha_p (upper) and beta_p
/// (lower); one sample array per cell serves both tails.
pub fn run_pstable_grid(
    p: f64,
    alpha_p: f64,
    beta_p: f64,
    spec: &TailGridSpec,
    seed: RngStream,
) -> Result<Vec<TailCheckReport>> {
    let params = check_stable_params(p, alpha_p)?;
    check_stable_params(p, beta_p)?;
    spec.validate(true)?;
    let mut out = Vec::new();
    for (cell, m, kind) in spec.cells() {
        let gamma = gamma_vector(kind, m);
        let xs = weighted_sums(
            TailLaw::PStableAbsPow(params),
            &gamma,
            spec.trials,
            seed.substream(cell),
        );
        let total: f64 = gamma.iter().sum();
        for &t in &spec.upper_ts {
            let hits = xs.iter().filter(|&&x| x >= t * alpha_p * total).count();
            out.push(finish_report(
                LemmaId::PStableUpper,
                &gamma,
                t,
                spec.trials,
                hits,
                upper_bound_value(m, t),
                Some(p),
                Some(alpha_p),
            ));
        }
        for &t in &spec.lower_ts {
            let hits = count_at_most(&xs, beta_p * (1.0 - t) * total);
            out.push(finish_report(
                LemmaId::PStableLower,
                &gamma,
                t,
                spec.trials,
                hits,
                lower_bound_value(&gamma, t, 6.0),
                Some(p),
                Some(beta_p),
            ));
        }
    }
    Ok(out)
}

/// Empirical CDFs of |X_p / 2|^p across a p grid, and the pairwise check
/// that the CDF curves are ordered: F_{p1}(t) <= F_{p2}(t) for p1 <= p2,
/// up to 3 joint MC standard errors. Equal p values reuse the same
/// substream, so their curves agree exactly.
#[derive(Clone, Debug, Serialize)]
pub struct CdfOrderingReport {
    pub p_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// cdf[i][j] = F-hat_{p_i}(t_j)
    pub cdf: Vec<Vec<f64>>,
    pub samples_per_p: usize,
    /// max over pairs and grid points of F-hat_{p1} - F-hat_{p2}, p1 <= p2
    pub max_violation: f64,
    /// grid points where the ordering fails beyond 3 joint stderr
    pub violations: usize,
    pub pass: bool,
}

impl CdfOrderingReport {
    /// "p,t,cdf" rows for external plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("p,t,cdf\n");
        for (i, &p) in self.p_grid.iter().enumerate() {
            for (j, &t) in self.t_grid.iter().enumerate() {
                s.push_str(&format!("{p},{t},{}\n", self.cdf[i][j]));
            }
        }
        s
    }
}

pub fn check_cdf_ordering(
    p_grid: &[f64],
    t_grid: &[f64],
    samples_per_p: usize,
    seed: RngStream,
) -> Result<CdfOrderingReport> {
    if p_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::EmptyInput {
            what: "check_cdf_ordering",
            reason: "empty p or t grid".into(),
        });
    }
    if p_grid.windows(2).any(|w| w[0] > w[1]) || t_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("grid", "grids must be sorted ascending"));
    }
    if t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::invalid("t_grid", "thresholds must be positive"));
    }
    if samples_per_p < 2 {
        return Err(Error::invalid("samples_per_p", "need at least 2"));
    }
    for &p in p_grid {
        StableParams::new(p)?;
    }
    let cdf: Vec<Vec<f64>> = p_grid
        .par_iter()
        .map(|&p| {
            let params = StableParams::new(p).expect("validated above");
            // substream keyed by the value of p: identical p, identical curve
            let xs = draw_abs_pow_halved(params, samples_per_p, seed.substream(p.to_bits()));
            rng::empirical_cdf(&xs, t_grid).expect("nonempty samples")
        })
        .collect();
    let n = samples_per_p as f64;
    let mut max_violation = f64::NEG_INFINITY;
    let mut violations = 0usize;
    for i in 0..p_grid.len() {
        for j in (i + 1)..p_grid.len() {
            for k in 0..t_grid.len() {
                let (fi, fj) = (cdf[i][k], cdf[j][k]);
                let gap = fi - fj;
                max_violation = max_violation.max(gap);
                let joint = ((fi * (1.0 - fi) + fj * (1.0 - fj)) / n).sqrt();
                if gap > 3.0 * joint {
                    violations += 1;
                }
            }
        }
    }
    if p_grid.len() < 2 {
        max_violation = 0.0;
    }
    Ok(CdfOrderingReport {
        p_grid: p_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        cdf,
        samples_per_p,
        max_violation,
        violations,
        pass: violations == 0,
    })
}

/// samples of |X_p / 2|^p, blockwise substreams as in weighted_sums.
fn draw_abs_pow_halved(params: StableParams, count: usize, seed: RngStream) -> Vec<f64> {
    const BLOCK: usize = 8192;
    let mut out = vec![0.0; count];
    out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
        let mut rng = seed.substream(b as u64).rng();
        for x in chunk.iter_mut() {
            *x = (rng::sample_pstable(params, &mut rng).abs() / 2.0).powf(params.p());
        }
    });
    out
}

/// Moment checks for X = (Pi U)^T (Pi U) under the sign sketch, U with
/// orthonormal columns:
///
///   E[x_kl]   = delta_kl
///   E[x_kk^2] = 1 + (2/s)(1 - ||U_k||_4^4)
///   E[x_kl^2] = (1/s)(1 - 2 <U_k^2, U_l^2>)      (k != l)
///   E||X-I||_F^2 = (2/s)(sum_k (1 - ||U_k||_4^4)
///                  + sum_{k<l} (1 - 2 <U_k^2, U_l^2>)) <= (d^2+d)/s
///
/// plus the Markov consequence Pr[||X-I||_F >= eps] <= (d^2+d)/(eps^2 s).
#[derive(Clone, Debug, Serialize)]
pub struct MomentCell {
    pub k: usize,
    pub l: usize,
    pub mean_emp: f64,
    pub mean_formula: f64,
    pub mean_stderr: f64,
    pub sq_emp: f64,
    pub sq_formula: f64,
    pub sq_stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub trials: usize,
    pub cells: Vec<MomentCell>,
    pub fro_emp: f64,
    pub fro_formula: f64,
    pub fro_bound: f64,
    pub fro_stderr: f64,
    pub fro_max: f64,
    pub markov_eps: f64,
    pub markov_emp: f64,
    pub markov_bound: f64,
    pub markov_pass: bool,
    pub pass: bool,
}

struct MomentPartial {
    sum_x: Vec<f64>,
    sum_x2: Vec<f64>,
    sum_x4: Vec<f64>,
    fro_sum: f64,
    fro_sum2: f64,
    fro_max: f64,
    markov_hits: usize,
}

pub fn check_l2_moments(
    u: &DenseMatrix,
    s: usize,
    trials: usize,
    seed: RngStream,
) -> Result<MomentReport> {
    let n = u.n_rows();
    let d = u.n_cols();
    if d == 0 || n == 0 {
        return Err(Error::EmptyInput {
            what: "check_l2_moments",
            reason: "empty basis".into(),
        });
    }
    if s == 0 {
        return Err(Error::invalid("s", "0"));
    }
    if trials < 2 {
        return Err(Error::invalid("trials", "need at least 2"));
    }
    let gram = u.gram();
    for k in 0..d {
        for l in 0..d {
            let want = if k == l { 1.0 } else { 0.0 };
            if (gram.get(k, l) - want).abs() > 1e-10 {
                return Err(Error::invalid(
                    "u",
                    format!("columns not orthonormal: (U^T U)[{k}][{l}] = {}", gram.get(k, l)),
                ));
            }
        }
    }

    // column statistics the formulas need
    let mut u44 = vec![0.0; d];
    let mut ip = DenseMatrix::zeros(d, d);
    for j in 0..n {
        let row = u.row(j);
        for k in 0..d {
            let uk2 = row[k] * row[k];
            u44[k] += uk2 * uk2;
            for l in 0..d {
                ip.set(k, l, ip.get(k, l) + uk2 * row[l] * row[l]);
            }
        }
    }
    let fro_formula = (2.0 / s as f64)
        * ((0..d).map(|k| 1.0 - u44[k]).sum::<f64>()
            + (0..d)
                .flat_map(|k| ((k + 1)..d).map(move |l| (k, l)))
                .map(|(k, l)| 1.0 - 2.0 * ip.get(k, l))
                .sum::<f64>());
    let fro_bound = (d * d + d) as f64 / s as f64;
    let markov_eps = (2.0 * fro_bound).sqrt();
    let markov_bound = fro_bound / (markov_eps * markov_eps); // = 1/2 by construction

    const BLOCK: usize = 256;
    let blocks = trials.div_ceil(BLOCK);
    let partials: Vec<MomentPartial> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(trials);
            let mut part = MomentPartial {
                sum_x: vec![0.0; d * d],
                sum_x2: vec![0.0; d * d],
                sum_x4: vec![0.0; d * d],
                fro_sum: 0.0,
                fro_sum2: 0.0,
                fro_max: 0.0,
                markov_hits: 0,
            };
            for trial in lo..hi {
                let plan = sketch::plan_sketch(
                    SketchKind::SignL2,
                    n,
                    s,
                    seed.substream(trial as u64),
                )
                .expect("sign plan");
                let pu = sketch::apply_sketch_dense(&plan, u).expect("dims agree");
                let x = pu.gram();
                let mut fro2 = 0.0;
                for k in 0..d {
                    for l in 0..d {
                        let v = x.get(k, l);
                        let idx = k * d + l;
                        part.sum_x[idx] += v;
                        part.sum_x2[idx] += v * v;
                        part.sum_x4[idx] += v * v * v * v;
                        let dev = v - if k == l { 1.0 } else { 0.0 };
                        fro2 += dev * dev;
                    }
                }
                part.fro_sum += fro2;
                part.fro_sum2 += fro2 * fro2;
                part.fro_max = part.fro_max.max(fro2.sqrt());
                if fro2.sqrt() >= markov_eps {
                    part.markov_hits += 1;
                }
            }
            part
        })
        .collect();

    let tn = trials as f64;
    let mut sum_x = vec![0.0; d * d];
    let mut sum_x2 = vec![0.0; d * d];
    let mut sum_x4 = vec![0.0; d * d];
    let mut fro_sum = 0.0;
    let mut fro_sum2 = 0.0;
    let mut fro_max = 0.0_f64;
    let mut markov_hits = 0usize;
    for part in partials {
        for i in 0..d * d {
            sum_x[i] += part.sum_x[i];
            sum_x2[i] += part.sum_x2[i];
            sum_x4[i] += part.sum_x4[i];
        }
        fro_sum += part.fro_sum;
        fro_sum2 += part.fro_sum2;
        fro_max = fro_max.max(part.fro_max);
        markov_hits += part.markov_hits;
    }

    let stderr_of = |m1: f64, m2: f64| ((m2 - m1 * m1).max(0.0) / tn).sqrt();
    let mut cells = Vec::with_capacity(d * d);
    let mut all_pass = true;
    for k in 0..d {
        for l in 0..d {
            let idx = k * d + l;
            let mean_emp = sum_x[idx] / tn;
            let sq_emp = sum_x2[idx] / tn;
            let mean_formula = if k == l { 1.0 } else { 0.0 };
            let sq_formula = if k == l {
                1.0 + 2.0 / s as f64 * (1.0 - u44[k])
            } else {
                (1.0 - 2.0 * ip.get(k, l)) / s as f64
            };
            let mean_stderr = stderr_of(mean_emp, sq_emp);
            let sq_stderr = stderr_of(sq_emp, sum_x4[idx] / tn);
            let pass = (mean_emp - mean_formula).abs() <= 3.0 * mean_stderr + 1e-9
                && (sq_emp - sq_formula).abs() <= 3.0 * sq_stderr + 1e-9;
            all_pass &= pass;
            cells.push(MomentCell {
                k,
                l,
                mean_emp,
                mean_formula,
                mean_stderr,
                sq_emp,
                sq_formula,
                sq_stderr,
                pass,
            });
        }
    }
    let fro_emp = fro_sum / tn;
    let fro_stderr = stderr_of(fro_emp, fro_sum2 / tn);
    let markov_emp = markov_hits as f64 / tn;
    let markov_pass = markov_emp <= markov_bound + 3.0 * mc_stderr(markov_emp, trials);
    let fro_pass = (fro_emp - fro_formula).abs() <= 3.0 * fro_stderr + 1e-9;
    Ok(MomentReport {
        n,
        d,
        s,
        trials,
        cells,
        fro_emp,
        fro_formula,
        fro_bound,
        fro_stderr,
        fro_max,
        markov_eps,
        markov_emp,
        markov_bound,
        markov_pass,
        pass: all_pass && fro_pass && markov_pass,
    })
}

/// Random n x d matrix with orthonormal columns (thin QR of a Gaussian).
pub fn random_orthonormal(n: usize, d: usize, seed: RngStream) -> Result<DenseMatrix> {
    if n < d || d == 0 {
        return Err(Error::invalid("shape", format!("need n >= d >= 1, got {n} x {d}")));
    }
    let mut rng = seed.rng();
    let g = nalgebra::DMatrix::from_fn(n, d, |_, _| rng::sample_gaussian(&mut rng));
    let qr = g.qr();
    Ok(DenseMatrix::from_na(&qr.q()))
}
