//! `lpembed` — sparse lp subspace embeddings, row sampling, fast lp
//! regression, and Monte Carlo verification of the underlying tail bounds,
//! from one binary.
//!
//! Every subcommand writes `<command>.json` (version, config echo, seed,
//! pass flag, results) plus any artifact files into the output directory,
//! so a report can be regenerated exactly from what it embeds. Exit codes:
//! 0 all checks pass, 1 a check failed, 2 invalid configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lpembed::rng::RngStream;

use config::{
    pick, pick_opt, Family, FileConfig, KindArg, MethodArg, SolverArg, WeightArg,
};

const VERSION: &str = concat!("lpembed ", env!("CARGO_PKG_VERSION"));
const DEFAULT_SEED: u64 = 1729;

#[derive(Parser)]
#[command(
    name = "lpembed",
    version,
    about = "sparse lp subspace embeddings, sampling, regression, and verification"
)]
struct Cli {
    /// TOML config file; explicit flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// master seed; every random draw derives from it
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// output directory for the JSON report and artifacts
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// force sequential reductions (one worker thread)
    #[arg(long, global = true)]
    deterministic: bool,

    /// worker threads (default: all cores)
    #[arg(long, global = true, conflicts_with = "deterministic")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a synthetic matrix and measure subspace distortion
    Sketch(SketchArgs),
    /// Precondition a matrix and estimate its conditioning ratio
    Condition(ConditionArgs),
    /// Leverage-based row sampling with a distortion check
    Sample(SampleArgs),
    /// Solve an lp regression problem to relative accuracy eps
    Regress(RegressArgs),
    /// Monte Carlo checks of the heavy-tail inequalities
    VerifyTails(TailsArgs),
    /// Stochastic-ordering check for halved p-stable powers
    CdfOrder(CdfArgs),
    /// Moment identities of the l2 embedding applied to a basis
    Moments(MomentsArgs),
    /// Wall-clock scaling of sketch application against nnz
    Bench(BenchArgs),
    /// Write a synthetic matrix (and rhs, if any) to disk
    Generate(GenerateArgs),
}

#[derive(Args)]
struct SketchArgs {
    /// matrix family to embed
    #[arg(long, value_enum)]
    family: Option<Family>,
    /// rows
    #[arg(long)]
    n: Option<usize>,
    /// columns
    #[arg(long)]
    d: Option<usize>,
    /// fraction of the d columns filled per row
    #[arg(long)]
    density: Option<f64>,
    /// embedding kind
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// norm index for the p-stable kinds
    /// norm index in [1, 2]
    #[arg(long)]
    p: Option<f64>,
    /// embedding rows; default comes from the theory presets
    /// sketch rows
    #[arg(long)]
    s: Option<usize>,
    /// target relative accuracy / distortion
    #[arg(long)]
    eps: Option<f64>,
    /// failure probability budget
    #[arg(long)]
    delta: Option<f64>,
    /// oversampling constant for the lp presets
    #[arg(long)]
    c: Option<f64>,
    /// random directions probed per measurement
    #[arg(long)]
    probes: Option<usize>,
    /// fail (exit 1) if the measured deviation from 1 exceeds this
    #[arg(long)]
    max_distortion: Option<f64>,
}

#[derive(Args)]
struct ConditionArgs {
    #[arg(long, value_enum)]
    family: Option<Family>,
    /// rows
    #[arg(long)]
    n: Option<usize>,
    /// columns
    #[arg(long)]
    d: Option<usize>,
    /// fraction of the d columns filled per row
    #[arg(long)]
    density: Option<f64>,
    /// norm index in [1, 2]
    #[arg(long)]
    p: Option<f64>,
    /// qr (sketch + QR) or rounding (ellipsoidal)
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// random directions probed per measurement
    #[arg(long)]
    probes: Option<usize>,
    /// ellipsoidal rounding iteration cap
    #[arg(long)]
    rounding_iters: Option<usize>,
    /// fail (exit 1) if the estimated conditioning exceeds this
    #[arg(long)]
    max_kappa_bar: Option<f64>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, value_enum)]
    family: Option<Family>,
    /// rows
    #[arg(long)]
    n: Option<usize>,
    /// columns
    #[arg(long)]
    d: Option<usize>,
    /// fraction of the d columns filled per row
    #[arg(long)]
    density: Option<f64>,
    /// norm index in [1, 2]
    #[arg(long)]
    p: Option<f64>,
    /// target relative accuracy / distortion
    #[arg(long)]
    eps: Option<f64>,
    /// target sample rows; default comes from the sampling formula
    /// sketch rows
    #[arg(long)]
    s: Option<usize>,
    /// constant in front of the sample-size formula
    #[arg(long)]
    constant: Option<f64>,
    #[arg(long, value_enum)]
    weights: Option<WeightArg>,
    /// sketch columns when weights = sketched
    #[arg(long)]
    sketch_columns: Option<usize>,
    /// random directions probed per measurement
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    max_distortion: Option<f64>,
}

#[derive(Args)]
struct RegressArgs {
    /// pair family providing both matrix and rhs
    #[arg(long, value_enum)]
    family: Option<Family>,
    /// rows
    #[arg(long)]
    n: Option<usize>,
    /// columns
    #[arg(long)]
    d: Option<usize>,
    /// fraction of the d columns filled per row
    #[arg(long)]
    density: Option<f64>,
    /// fraction of corrupted rows (noisy-pair)
    #[arg(long)]
    outlier_frac: Option<f64>,
    /// magnitude of the corruptions (noisy-pair)
    #[arg(long)]
    outlier_scale: Option<f64>,
    /// Matrix Market file for the design matrix (with --rhs)
    #[arg(long, value_name = "PATH", requires = "rhs")]
    matrix: Option<PathBuf>,
    /// whitespace-separated rhs vector (with --matrix)
    #[arg(long, value_name = "PATH", requires = "matrix")]
    rhs: Option<PathBuf>,
    /// norm index in [1, 2]
    #[arg(long)]
    p: Option<f64>,
    /// target relative accuracy / distortion
    #[arg(long)]
    eps: Option<f64>,
    /// failure probability budget
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// independent pipeline attempts; best objective wins
    #[arg(long)]
    retries: Option<usize>,
    /// oversampling constant for the pipeline's sketch
    #[arg(long)]
    sketch_c: Option<f64>,
    /// constant in front of the sample-size formula
    #[arg(long)]
    sample_constant: Option<f64>,
    /// random directions probed per measurement
    #[arg(long)]
    probes: Option<usize>,
    /// fail (exit 1) if the achieved objective exceeds this
    #[arg(long)]
    max_objective: Option<f64>,
}

#[derive(Args)]
struct TailsArgs {
    /// Monte Carlo trials per check
    /// Monte Carlo trials
    #[arg(long)]
    trials: Option<usize>,
    /// run the full parameter grid instead of the default suite
    #[arg(long)]
    grid: bool,
}

#[derive(Args)]
struct CdfArgs {
    /// samples per p value
    #[arg(long)]
    samples: Option<usize>,
    /// log-spaced thresholds in [1e-3, 1e3]
    #[arg(long)]
    t_points: Option<usize>,
    /// spacing of the p grid over [1, 2]
    #[arg(long)]
    p_step: Option<f64>,
}

#[derive(Args)]
struct MomentsArgs {
    /// rows
    #[arg(long)]
    n: Option<usize>,
    /// columns
    #[arg(long)]
    d: Option<usize>,
    /// sketch rows
    #[arg(long)]
    s: Option<usize>,
    /// Monte Carlo trials
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// rows
    #[arg(long)]
    n: Option<usize>,
    /// columns
    #[arg(long)]
    d: Option<usize>,
    /// sketch rows
    #[arg(long)]
    s: Option<usize>,
    /// ladder of nonzero counts, comma separated
    #[arg(long, value_delimiter = ',')]
    nnz: Option<Vec<usize>>,
    /// timed repetitions per rung (fastest wins)
    /// timed repetitions per rung (fastest wins)
    #[arg(long)]
    reps: Option<usize>,
    /// fail (exit 1) if the linear fit's R^2 falls below this
    #[arg(long)]
    min_r2: Option<f64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    family: Option<Family>,
    /// rows
    #[arg(long)]
    n: Option<usize>,
    /// columns
    #[arg(long)]
    d: Option<usize>,
    /// fraction of the d columns filled per row
    #[arg(long)]
    density: Option<f64>,
    /// fraction of corrupted rows (noisy-pair)
    #[arg(long)]
    outlier_frac: Option<f64>,
    /// magnitude of the corruptions (noisy-pair)
    #[arg(long)]
    outlier_scale: Option<f64>,
}

fn resolve_sketch(a: &SketchArgs, c: Option<&config::SketchSection>) -> commands::SketchParams {
    commands::SketchParams {
        family: pick(&a.family, c.and_then(|c| c.family.as_ref()), Family::RandomSparse),
        n: pick(&a.n, c.and_then(|c| c.n.as_ref()), 20_000),
        d: pick(&a.d, c.and_then(|c| c.d.as_ref()), 10),
        density: pick(&a.density, c.and_then(|c| c.density.as_ref()), 0.1),
        kind: pick(&a.kind, c.and_then(|c| c.kind.as_ref()), KindArg::SignL2),
        p: pick(&a.p, c.and_then(|c| c.p.as_ref()), 1.5),
        s: pick_opt(&a.s, c.and_then(|c| c.s.as_ref())),
        eps: pick(&a.eps, c.and_then(|c| c.eps.as_ref()), 0.5),
        delta: pick(&a.delta, c.and_then(|c| c.delta.as_ref()), 0.1),
        c: pick(&a.c, c.and_then(|c| c.c.as_ref()), 50.0),
        probes: pick(&a.probes, c.and_then(|c| c.probes.as_ref()), 200),
        max_distortion: pick_opt(&a.max_distortion, c.and_then(|c| c.max_distortion.as_ref())),
    }
}

fn resolve_condition(
    a: &ConditionArgs,
    c: Option<&config::ConditionSection>,
) -> commands::ConditionParams {
    commands::ConditionParams {
        family: pick(&a.family, c.and_then(|c| c.family.as_ref()), Family::SpikyLeverage),
        n: pick(&a.n, c.and_then(|c| c.n.as_ref()), 5_000),
        d: pick(&a.d, c.and_then(|c| c.d.as_ref()), 10),
        density: pick(&a.density, c.and_then(|c| c.density.as_ref()), 0.1),
        p: pick(&a.p, c.and_then(|c| c.p.as_ref()), 1.0),
        method: pick(&a.method, c.and_then(|c| c.method.as_ref()), MethodArg::Qr),
        probes: pick(&a.probes, c.and_then(|c| c.probes.as_ref()), 200),
        rounding_iters: pick(&a.rounding_iters, c.and_then(|c| c.rounding_iters.as_ref()), 50),
        max_kappa_bar: pick_opt(&a.max_kappa_bar, c.and_then(|c| c.max_kappa_bar.as_ref())),
    }
}

fn resolve_sample(a: &SampleArgs, c: Option<&config::SampleSection>) -> commands::SampleParams {
    commands::SampleParams {
        family: pick(&a.family, c.and_then(|c| c.family.as_ref()), Family::SpikyLeverage),
        n: pick(&a.n, c.and_then(|c| c.n.as_ref()), 50_000),
        d: pick(&a.d, c.and_then(|c| c.d.as_ref()), 10),
        density: pick(&a.density, c.and_then(|c| c.density.as_ref()), 0.1),
        p: pick(&a.p, c.and_then(|c| c.p.as_ref()), 1.0),
        eps: pick(&a.eps, c.and_then(|c| c.eps.as_ref()), 0.3),
        s: pick_opt(&a.s, c.and_then(|c| c.s.as_ref())),
        constant: pick(&a.constant, c.and_then(|c| c.constant.as_ref()), 1.0),
        weights: pick(&a.weights, c.and_then(|c| c.weights.as_ref()), WeightArg::Exact),
        sketch_columns: pick(&a.sketch_columns, c.and_then(|c| c.sketch_columns.as_ref()), 30),
        probes: pick(&a.probes, c.and_then(|c| c.probes.as_ref()), 200),
        max_distortion: pick_opt(&a.max_distortion, c.and_then(|c| c.max_distortion.as_ref())),
    }
}

fn resolve_regress(a: &RegressArgs, c: Option<&config::RegressSection>) -> commands::RegressParams {
    commands::RegressParams {
        family: pick_opt(&a.family, c.and_then(|c| c.family.as_ref())),
        n: pick(&a.n, c.and_then(|c| c.n.as_ref()), 10_000),
        d: pick(&a.d, c.and_then(|c| c.d.as_ref()), 10),
        density: pick(&a.density, c.and_then(|c| c.density.as_ref()), 0.1),
        outlier_frac: pick(&a.outlier_frac, c.and_then(|c| c.outlier_frac.as_ref()), 0.1),
        outlier_scale: pick(&a.outlier_scale, c.and_then(|c| c.outlier_scale.as_ref()), 100.0),
        matrix: pick_opt(&a.matrix, c.and_then(|c| c.matrix.as_ref())),
        rhs: pick_opt(&a.rhs, c.and_then(|c| c.rhs.as_ref())),
        p: pick(&a.p, c.and_then(|c| c.p.as_ref()), 1.0),
        eps: pick(&a.eps, c.and_then(|c| c.eps.as_ref()), 0.3),
        delta: pick(&a.delta, c.and_then(|c| c.delta.as_ref()), 0.1),
        solver: pick(&a.solver, c.and_then(|c| c.solver.as_ref()), SolverArg::Auto),
        retries: pick(&a.retries, c.and_then(|c| c.retries.as_ref()), 3),
        sketch_c: pick(&a.sketch_c, c.and_then(|c| c.sketch_c.as_ref()), 50.0),
        sample_constant: pick(&a.sample_constant, c.and_then(|c| c.sample_constant.as_ref()), 1.0),
        probes: pick(&a.probes, c.and_then(|c| c.probes.as_ref()), 200),
        max_objective: pick_opt(&a.max_objective, c.and_then(|c| c.max_objective.as_ref())),
    }
}

fn resolve_tails(a: &TailsArgs, c: Option<&config::TailsSection>) -> commands::TailsParams {
    commands::TailsParams {
        trials: pick(&a.trials, c.and_then(|c| c.trials.as_ref()), 200_000),
        grid: a.grid || c.and_then(|c| c.grid).unwrap_or(false),
    }
}

fn resolve_cdf(a: &CdfArgs, c: Option<&config::CdfSection>) -> commands::CdfParams {
    commands::CdfParams {
        samples: pick(&a.samples, c.and_then(|c| c.samples.as_ref()), 100_000),
        t_points: pick(&a.t_points, c.and_then(|c| c.t_points.as_ref()), 41),
        p_step: pick(&a.p_step, c.and_then(|c| c.p_step.as_ref()), 0.1),
    }
}

fn resolve_moments(a: &MomentsArgs, c: Option<&config::MomentsSection>) -> commands::MomentsParams {
    commands::MomentsParams {
        n: pick(&a.n, c.and_then(|c| c.n.as_ref()), 200),
        d: pick(&a.d, c.and_then(|c| c.d.as_ref()), 4),
        s: pick(&a.s, c.and_then(|c| c.s.as_ref()), 400),
        trials: pick(&a.trials, c.and_then(|c| c.trials.as_ref()), 5_000),
    }
}

fn resolve_bench(a: &BenchArgs, c: Option<&config::BenchSection>) -> commands::BenchParams {
    commands::BenchParams {
        n: pick(&a.n, c.and_then(|c| c.n.as_ref()), 100_000),
        d: pick(&a.d, c.and_then(|c| c.d.as_ref()), 200),
        s: pick(&a.s, c.and_then(|c| c.s.as_ref()), 2_000),
        nnz: pick(
            &a.nnz,
            c.and_then(|c| c.nnz.as_ref()),
            vec![100_000, 200_000, 500_000, 1_000_000, 2_000_000, 5_000_000, 10_000_000],
        ),
        reps: pick(&a.reps, c.and_then(|c| c.reps.as_ref()), 3),
        min_r2: pick_opt(&a.min_r2, c.and_then(|c| c.min_r2.as_ref())),
    }
}

fn resolve_generate(
    a: &GenerateArgs,
    c: Option<&config::GenerateSection>,
) -> commands::GenerateParams {
    commands::GenerateParams {
        family: pick(&a.family, c.and_then(|c| c.family.as_ref()), Family::RandomSparse),
        n: pick(&a.n, c.and_then(|c| c.n.as_ref()), 1_000),
        d: pick(&a.d, c.and_then(|c| c.d.as_ref()), 10),
        density: pick(&a.density, c.and_then(|c| c.density.as_ref()), 0.1),
        outlier_frac: pick(&a.outlier_frac, c.and_then(|c| c.outlier_frac.as_ref()), 0.1),
        outlier_scale: pick(&a.outlier_scale, c.and_then(|c| c.outlier_scale.as_ref()), 100.0),
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Sketch(_) => "sketch",
        Command::Condition(_) => "condition",
        Command::Sample(_) => "sample",
        Command::Regress(_) => "regress",
        Command::VerifyTails(_) => "verify_tails",
        Command::CdfOrder(_) => "cdf_order",
        Command::Moments(_) => "moments",
        Command::Bench(_) => "bench",
        Command::Generate(_) => "generate",
    }
}

fn run(cli: &Cli) -> Result<bool, String> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(t) = threads {
        if t == 0 {
            return Err("threads must be positive".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    let master_seed = cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;

    let seed = RngStream::new(master_seed);
    let name = command_name(&cli.command);
    let outcome = match &cli.command {
        Command::Sketch(a) => {
            commands::run_sketch(&resolve_sketch(a, file.sketch.as_ref()), seed, &out_dir)
        }
        Command::Condition(a) => {
            commands::run_condition(&resolve_condition(a, file.condition.as_ref()), seed, &out_dir)
        }
        Command::Sample(a) => {
            commands::run_sample(&resolve_sample(a, file.sample.as_ref()), seed, &out_dir)
        }
        Command::Regress(a) => {
            commands::run_regress(&resolve_regress(a, file.regress.as_ref()), seed, &out_dir)
        }
        Command::VerifyTails(a) => {
            commands::run_tails(&resolve_tails(a, file.verify_tails.as_ref()), seed, &out_dir)
        }
        Command::CdfOrder(a) => {
            commands::run_cdf_order(&resolve_cdf(a, file.cdf_order.as_ref()), seed, &out_dir)
        }
        Command::Moments(a) => {
            commands::run_moments(&resolve_moments(a, file.moments.as_ref()), seed, &out_dir)
        }
        Command::Bench(a) => {
            commands::run_bench(&resolve_bench(a, file.bench.as_ref()), seed, &out_dir)
        }
        Command::Generate(a) => {
            commands::run_generate(&resolve_generate(a, file.generate.as_ref()), seed, &out_dir)
        }
    }
    .map_err(|e| e.to_string())?;

    for line in &outcome.lines {
        println!("{line}");
    }
    let report = json!({
        "version": VERSION,
        "command": name,
        "master_seed": master_seed,
        "config": outcome.config_echo,
        "pass": outcome.pass,
        "results": outcome.results,
        "files": outcome.files,
    });
    let report_path = out_dir.join(format!("{name}.json"));
    let pretty = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, pretty + "\n")
        .map_err(|e| format!("cannot write {}: {e}", report_path.display()))?;
    println!(
        "{} -> {}",
        if outcome.pass { "PASS" } else { "FAIL" },
        report_path.display()
    );
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
