//! Run configuration: a strict TOML document describing a grid, a sample
//! budget and a list of scenarios.
//!
//! ```toml
//! seed = 7
//! samples = 200000
//! dim = 1
//!
//! [grid]
//! horizon = 1.0
//! n_steps = 256
//!
//! [options]            # optional, every key optional
//! tolerance = 0.02
//!
//! [[scenario]]
//! kind = "transf"
//! kernel = "rank1:b=0.3"
//! functional = "cos_end"
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenarios::{
    sweep_laplace, verify_cameron_martin, verify_finite_dim, verify_gencv_example, verify_harmonic,
    verify_integrability_bound, verify_inverse, verify_surjective, verify_transf, RunSetup, ScenarioOptions,
    ScenarioReport, Verdict, CSV_HEADER,
};
use crate::stochastic::TestFunctional;
use crate::zoo::KernelSpec;

pub const DEFAULT_SEED: u64 = 20_240_917;
pub const DEFAULT_SAMPLES: usize = 200_000;
pub const DEFAULT_HORIZON: f64 = 1.0;
pub const DEFAULT_STEPS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "both" => Ok(OutputFormat::Both),
            other => Err(field("format", format!("expected json, csv or both, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    FiniteDim,
    Transf,
    Inverse,
    Surjective,
    Laplace,
    Harmonic,
    CameronMartin,
    Gencv,
    Integrability,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 9] = [
        ScenarioKind::FiniteDim,
        ScenarioKind::Transf,
        ScenarioKind::Inverse,
        ScenarioKind::Surjective,
        ScenarioKind::Laplace,
        ScenarioKind::Harmonic,
        ScenarioKind::CameronMartin,
        ScenarioKind::Gencv,
        ScenarioKind::Integrability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FiniteDim => "finite-dim",
            ScenarioKind::Transf => "transf",
            ScenarioKind::Inverse => "inverse",
            ScenarioKind::Surjective => "surjective",
            ScenarioKind::Laplace => "laplace",
            ScenarioKind::Harmonic => "harmonic",
            ScenarioKind::CameronMartin => "cameron-martin",
            ScenarioKind::Gencv => "gencv",
            ScenarioKind::Integrability => "integrability",
        }
    }

    pub fn default_kernel(self) -> &'static str {
        match self {
            ScenarioKind::FiniteDim => "zero",
            ScenarioKind::Transf | ScenarioKind::Inverse => "rank1:b=0.3",
            ScenarioKind::Surjective | ScenarioKind::Laplace | ScenarioKind::Integrability => "rank1:b=0.5",
            ScenarioKind::Harmonic => "volterra",
            ScenarioKind::CameronMartin => "const_phi:c=1",
            ScenarioKind::Gencv => "remark_gencv:b1=-2,b2=-3",
        }
    }

    pub fn default_functional(self) -> TestFunctional {
        match self {
            ScenarioKind::FiniteDim
            | ScenarioKind::Transf
            | ScenarioKind::Inverse
            | ScenarioKind::CameronMartin
            | ScenarioKind::Gencv => TestFunctional::CosEnd { a: 1.0 },
            _ => TestFunctional::One,
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!("unknown scenario `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            n_steps: DEFAULT_STEPS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsConfig {
    pub tolerance: Option<f64>,
    pub operator_tolerance: Option<f64>,
    pub sigmas: Option<f64>,
    pub consistency_tolerance: Option<f64>,
    pub consistency_groups: Option<usize>,
    pub paired: Option<bool>,
}

impl OptionsConfig {
    fn apply(&self, mut opts: ScenarioOptions) -> ScenarioOptions {
        if let Some(v) = self.tolerance {
            opts.tolerance = v;
        }
        if let Some(v) = self.operator_tolerance {
            opts.operator_tolerance = v;
        }
        if let Some(v) = self.sigmas {
            opts.sigmas = v;
        }
        if let Some(v) = self.consistency_tolerance {
            opts.consistency_tolerance = v;
        }
        if let Some(v) = self.consistency_groups {
            opts.consistency_groups = v;
        }
        if let Some(v) = self.paired {
            opts.paired = v;
        }
        opts
    }

    fn validate(&self, prefix: &str) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x.is_finite() && x >= 0.0) => {
                Err(field(&format!("{prefix}{name}"), format!("must be a non-negative number, got {x}")))
            }
            _ => Ok(()),
        };
        positive("tolerance", self.tolerance)?;
        positive("operator_tolerance", self.operator_tolerance)?;
        positive("sigmas", self.sigmas)?;
        positive("consistency_tolerance", self.consistency_tolerance)?;
        if self.consistency_groups == Some(0) {
            return Err(field(&format!("{prefix}consistency_groups"), "must be at least 1"));
        }
        Ok(())
    }
}

/// One `[[scenario]]` table. Unset fields fall back to the run-level values
/// and to per-kind defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub name: Option<String>,
    pub kernel: Option<String>,
    pub functional: Option<String>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub n_steps: Option<usize>,
    pub horizon: Option<f64>,
    pub dim: Option<usize>,
    pub lambda: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub x: Option<Vec<f64>>,
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub options: OptionsConfig,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            name: None,
            kernel: None,
            functional: None,
            samples: None,
            seed: None,
            n_steps: None,
            horizon: None,
            dim: None,
            lambda: None,
            lambdas: None,
            x: None,
            matrix: None,
            options: OptionsConfig::default(),
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        self.kernel.as_deref().unwrap_or(self.kind.default_kernel()).parse()
    }

    pub fn test_functional(&self) -> Result<TestFunctional> {
        match &self.functional {
            Some(s) => s.parse(),
            None => Ok(self.kind.default_functional()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub options: OptionsConfig,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<ScenarioConfig>,
}

fn default_horizon() -> f64 {
    DEFAULT_HORIZON
}
fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_dim() -> usize {
    1
}
fn default_samples() -> usize {
    DEFAULT_SAMPLES
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn field(name: &str, message: impl Into<String>) -> Error {
    Error::ConfigField {
        field: name.to_string(),
        message: message.into(),
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            dim: 1,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            out_dir: None,
            format: OutputFormat::Both,
            options: OptionsConfig::default(),
            scenarios: Vec::new(),
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map(|l| l.chars().count()).unwrap_or(0) + 1;
    (line, column)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_column(text, s.start)).unwrap_or((0, 0));
        Error::ConfigParse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

fn check_grid(prefix: &str, horizon: f64, n_steps: usize) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(field(&format!("{prefix}horizon"), format!("must be positive, got {horizon}")));
    }
    if n_steps < 2 {
        return Err(field(&format!("{prefix}n_steps"), format!("must be at least 2, got {n_steps}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        check_grid("grid.", self.grid.horizon, self.grid.n_steps)?;
        if self.dim == 0 {
            return Err(field("dim", "must be at least 1"));
        }
        if self.samples == 0 {
            return Err(field("samples", "must be at least 1"));
        }
        self.options.validate("options.")?;
        for (k, s) in self.scenarios.iter().enumerate() {
            let p = format!("scenario[{k}].");
            check_grid(&p, s.horizon.unwrap_or(self.grid.horizon), s.n_steps.unwrap_or(self.grid.n_steps))?;
            if s.dim == Some(0) {
                return Err(field(&format!("{p}dim"), "must be at least 1"));
            }
            if s.samples == Some(0) {
                return Err(field(&format!("{p}samples"), "must be at least 1"));
            }
            s.kernel_spec().map_err(|e| field(&format!("{p}kernel"), e.to_string()))?;
            s.test_functional().map_err(|e| field(&format!("{p}functional"), e.to_string()))?;
            s.options.validate(&format!("{p}options."))?;
            if let Some(l) = s.lambda {
                if !(l.is_finite() && l >= 0.0) {
                    return Err(field(&format!("{p}lambda"), format!("must be non-negative, got {l}")));
                }
            }
            if let Some(ls) = &s.lambdas {
                if ls.is_empty() || ls.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return Err(field(&format!("{p}lambdas"), "must be a non-empty list of non-negative numbers"));
                }
            }
            if let Some(m) = &s.matrix {
                let n = m.len();
                if n == 0 || m.iter().any(|r| r.len() != n) || m.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(field(&format!("{p}matrix"), "must be a non-empty square matrix of finite numbers"));
                }
            }
            if s.kind == ScenarioKind::Gencv && !matches!(s.kernel_spec()?, KernelSpec::GenCv { .. }) {
                return Err(field(&format!("{p}kernel"), "gencv needs a remark_gencv kernel"));
            }
        }
        Ok(())
    }

    pub fn scenario_options(&self, s: &ScenarioConfig) -> ScenarioOptions {
        s.options.apply(self.options.apply(ScenarioOptions::default()))
    }

    pub fn setup_for(&self, s: &ScenarioConfig) -> Result<RunSetup> {
        RunSetup::new(
            s.horizon.unwrap_or(self.grid.horizon),
            s.n_steps.unwrap_or(self.grid.n_steps),
            s.dim.unwrap_or(self.dim),
            s.samples.unwrap_or(self.samples),
            s.seed.unwrap_or(self.seed),
        )
    }
}

/// Runs one configured scenario; the Laplace sweep yields one report per `λ`.
pub fn run_scenario(config: &RunConfig, s: &ScenarioConfig) -> Result<Vec<ScenarioReport>> {
    let setup = config.setup_for(s)?;
    let opts = config.scenario_options(s);
    let f = s.test_functional()?;
    let spec = s.kernel_spec()?;
    let mut reports = match s.kind {
        ScenarioKind::FiniteDim => {
            let rows = s
                .matrix
                .clone()
                .unwrap_or_else(|| vec![vec![0.2, 0.0], vec![0.0, -0.1]]);
            let n = rows.len();
            let a = DMatrix::from_row_iterator(n, n, rows.into_iter().flatten());
            vec![verify_finite_dim(&a, &f, setup.samples, setup.seed, &opts)?]
        }
        ScenarioKind::Transf => vec![verify_transf(&setup, &spec, &f, &opts)?],
        ScenarioKind::Inverse => vec![verify_inverse(&setup, &spec, &f, &opts)?],
        ScenarioKind::Surjective => vec![verify_surjective(&setup, &spec, &f, &opts)?],
        ScenarioKind::Laplace => {
            let lambdas = s.lambdas.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.75]);
            sweep_laplace(&setup, &spec, &lambdas, &f, &opts)?
        }
        ScenarioKind::Harmonic => vec![verify_harmonic(
            &setup,
            &spec,
            s.x.as_deref(),
            s.lambda.unwrap_or(1.0),
            &f,
            &opts,
        )?],
        ScenarioKind::CameronMartin => vec![verify_cameron_martin(&setup, &spec, &f, &opts)?],
        ScenarioKind::Gencv => {
            let KernelSpec::GenCv { b1, b2 } = spec else {
                unreachable!("validated")
            };
            vec![verify_gencv_example(&setup, b1, b2, &f, &opts)?]
        }
        ScenarioKind::Integrability => vec![verify_integrability_bound(&setup, &spec, &opts)?],
    };
    if let Some(name) = &s.name {
        for r in reports.iter_mut() {
            r.name = if r.name.starts_with("laplace[") {
                format!("{name}{}", &r.name["laplace".len()..])
            } else {
                name.clone()
            };
        }
    }
    Ok(reports)
}

/// Process exit status: 0 all pass, 1 any numerical failure, 2 any gate
/// rejection or singular operator (and no failure).
pub fn exit_code(reports: &[ScenarioReport]) -> i32 {
    if reports.iter().any(|r| r.verdict == Verdict::Fail) {
        1
    } else if reports.iter().any(|r| r.verdict != Verdict::Pass) {
        2
    } else {
        0
    }
}

pub const JSON_FILE: &str = "reports.json";
pub const CSV_FILE: &str = "summary.csv";

pub fn reports_json(reports: &[ScenarioReport]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(reports)?;
    s.push('\n');
    Ok(s)
}

pub fn reports_csv(reports: &[ScenarioReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Writes the reports into `dir`, returning the paths written.
pub fn write_reports(dir: &Path, format: OutputFormat, reports: &[ScenarioReport]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if matches!(format, OutputFormat::Json | OutputFormat::Both) {
        let p = dir.join(JSON_FILE);
        fs::write(&p, reports_json(reports)?)?;
        written.push(p);
    }
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        let p = dir.join(CSV_FILE);
        fs::write(&p, reports_csv(reports))?;
        written.push(p);
    }
    Ok(written)
}

/// Runs every scenario of `config` in order.
pub fn run(config: &RunConfig) -> Result<Vec<ScenarioReport>> {
    let mut reports = Vec::new();
    for s in &config.scenarios {
        reports.extend(run_scenario(config, s)?);
    }
    Ok(reports)
}
