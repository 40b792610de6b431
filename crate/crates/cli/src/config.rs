//! TOML config file support. Every subcommand has a section whose keys
//! mirror its flags; explicit flags override config values, which override
//! the built-in defaults. Unknown keys anywhere are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    RandomSparse,
    SpikyLeverage,
    IdentityTop,
    ConsistentPair,
    NoisyPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    SignL2,
    CauchyL1,
    PStable,
    DensePStable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Qr,
    Rounding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightArg {
    Exact,
    Sketched,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverArg {
    /// fast pipeline picked by p
    Auto,
    /// full-data solver (normal equations or IRLS)
    Exact,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sketch: Option<SketchSection>,
    pub condition: Option<ConditionSection>,
    pub sample: Option<SampleSection>,
    pub regress: Option<RegressSection>,
    pub verify_tails: Option<TailsSection>,
    pub cdf_order: Option<CdfSection>,
    pub moments: Option<MomentsSection>,
    pub bench: Option<BenchSection>,
    pub generate: Option<GenerateSection>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SketchSection {
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub density: Option<f64>,
    pub kind: Option<KindArg>,
    pub p: Option<f64>,
    pub s: Option<usize>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub c: Option<f64>,
    pub probes: Option<usize>,
    pub max_distortion: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConditionSection {
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub density: Option<f64>,
    pub p: Option<f64>,
    pub method: Option<MethodArg>,
    pub probes: Option<usize>,
    pub rounding_iters: Option<usize>,
    pub max_kappa_bar: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SampleSection {
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub density: Option<f64>,
    pub p: Option<f64>,
    pub eps: Option<f64>,
    pub s: Option<usize>,
    pub constant: Option<f64>,
    pub weights: Option<WeightArg>,
    pub sketch_columns: Option<usize>,
    pub probes: Option<usize>,
    pub max_distortion: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RegressSection {
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub density: Option<f64>,
    pub outlier_frac: Option<f64>,
    pub outlier_scale: Option<f64>,
    pub matrix: Option<PathBuf>,
    pub rhs: Option<PathBuf>,
    pub p: Option<f64>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub solver: Option<SolverArg>,
    pub retries: Option<usize>,
    pub sketch_c: Option<f64>,
    pub sample_constant: Option<f64>,
    pub probes: Option<usize>,
    pub max_objective: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TailsSection {
    pub trials: Option<usize>,
    pub grid: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CdfSection {
    pub samples: Option<usize>,
    pub t_points: Option<usize>,
    pub p_step: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct MomentsSection {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub s: Option<usize>,
    pub trials: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct BenchSection {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub s: Option<usize>,
    pub nnz: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub min_r2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenerateSection {
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub density: Option<f64>,
    pub outlier_frac: Option<f64>,
    pub outlier_scale: Option<f64>,
}

/// flag value, else config value, else default.
pub fn pick<T: Clone>(flag: &Option<T>, cfg: Option<&T>, default: T) -> T {
    flag.clone().or_else(|| cfg.cloned()).unwrap_or(default)
}

/// flag value, else config value (both optional).
pub fn pick_opt<T: Clone>(flag: &Option<T>, cfg: Option<&T>) -> Option<T> {
    flag.clone().or_else(|| cfg.cloned())
}
