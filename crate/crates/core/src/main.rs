use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use wiener_core::config::{
    exit_code, load_config, run, run_scenario, write_reports, OutputFormat, RunConfig, ScenarioConfig, ScenarioKind,
};
use wiener_core::operator::{inverse_kernel, inverse_residual, kappa_s, spectral_summary};
use wiener_core::scenarios::{ScenarioReport, Verdict};
use wiener_core::{assemble, Error, KernelSpec, SpectralSummary, TimeGrid};

const EXIT_GATE: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "wiener", version, about = "Transformations of order one on Wiener space")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo sample count M
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Number of grid cells N
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Horizon T
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Path dimension d
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Report directory
    #[arg(long, global = true, env = "WIENER_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["json", "csv", "both"])]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Λ(B_η(κ)), det₂(I+B_κ), tr B_κ and ‖κ‖₂
    Spectrum { kernel: String },
    /// det₂(I+B_κ) as sign and log-modulus
    Det2 { kernel: String },
    /// Summary of the inverse kernel κ̂
    KappaHat { kernel: String },
    /// Summary of the square-root kernel κ_S(η)
    KappaS { kernel: String },
    /// Run one scenario
    Verify {
        scenario: String,
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        functional: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        lambdas: Option<Vec<f64>>,
        /// Direction x for h(κ; x)
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x: Option<Vec<f64>>,
    },
    /// Laplace transform of q_η along λη, through the square-root kernel
    SweepLaplace {
        kernel: String,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0.25,0.5,0.75")]
        lambdas: Vec<f64>,
        #[arg(long)]
        functional: Option<String>,
    },
    /// Run every scenario of the configuration
    Run,
}

#[derive(Serialize)]
struct KernelReport {
    kernel: String,
    horizon: f64,
    n_steps: usize,
    dim: usize,
    l2_norm: f64,
    /// Eigenvalue of `B_η(κ)` with the largest modulus.
    eta_principal_eigenvalue: f64,
    det2_modulus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inverse_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta_residual: Option<f64>,
    summary: SpectralSummary,
}

enum Failure {
    Usage(String),
    Gate(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotContractive { .. } | Error::SingularOperator(_) | Error::PreconditionViolation(_) => {
                Failure::Gate(e.to_string())
            }
            Error::Io(_) | Error::Json(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn base_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut config = match &g.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = g.seed {
        config.seed = v;
    }
    if let Some(v) = g.paths {
        config.samples = v;
    }
    if let Some(v) = g.grid {
        config.grid.n_steps = v;
    }
    if let Some(v) = g.horizon {
        config.grid.horizon = v;
    }
    if let Some(v) = g.dim {
        config.dim = v;
    }
    if let Some(v) = &g.out {
        config.out_dir = Some(v.clone());
    }
    if let Some(v) = &g.format {
        config.format = v.parse::<OutputFormat>()?;
    }
    config.validate()?;
    Ok(config)
}

fn kernel_report(config: &RunConfig, text: &str, kind: &str) -> Result<KernelReport, Failure> {
    let spec: KernelSpec = text.parse()?;
    let grid = TimeGrid::new(config.grid.horizon, config.grid.n_steps)?;
    let kappa = spec.build(grid, config.dim)?;
    let (target, inverse_res, eta_res) = match kind {
        "kappa-hat" => {
            let hat = inverse_kernel(&kappa)?;
            let r = inverse_residual(&kappa, &hat)?;
            (hat, Some(r), None)
        }
        "kappa-s" => {
            let eta = kappa.into_symmetric()?;
            let ks = kappa_s(&eta)?;
            let r = ks.eta().sub(&eta)?.l2_norm();
            (ks, None, Some(r))
        }
        _ => (kappa, None, None),
    };
    Ok(KernelReport {
        kernel: spec.to_string(),
        horizon: grid.horizon(),
        n_steps: grid.n_steps(),
        dim: config.dim,
        l2_norm: target.l2_norm(),
        eta_principal_eigenvalue: principal(&target)?,
        det2_modulus: assemble(&target).det2().log_modulus().map(f64::exp),
        inverse_residual: inverse_res,
        eta_residual: eta_res,
        summary: spectral_summary(&target),
    })
}

fn principal(kappa: &wiener_core::MatrixKernel) -> Result<f64, Failure> {
    let ev = assemble(&kappa.eta()).eigenvalues()?;
    Ok(ev.into_iter().fold(0.0, |best: f64, v| if v.abs() > best.abs() { v } else { best }))
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "FAIL",
        Verdict::RejectedByHypothesis => "rejected-by-hypothesis",
        Verdict::Singular => "singular",
    }
}

fn print_table(reports: &[ScenarioReport]) {
    println!("{:<22} {:>12} {:>14} {:>9}  verdict", "scenario", "Λ(B_η)", "log|det₂|", "z");
    for r in reports {
        let p = &r.provenance;
        let lambda = p.lambda_eta.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        let det = p.det2_log.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        let z = r
            .primary
            .as_ref()
            .and_then(|c| c.z_score)
            .map(|v| format!("{v:+.3}"))
            .unwrap_or_else(|| "-".into());
        println!("{:<22} {:>12} {:>14} {:>9}  {}", r.name, lambda, det, z, verdict_label(r.verdict));
        for c in r.checks.iter().filter(|c| !c.passed) {
            println!("    check {} failed: value {} vs {} (error {:e} > {:e})", c.name, c.value, c.expected, c.error, c.tolerance);
        }
        for c in r.primary.iter().chain(&r.comparisons).filter(|c| !c.passed) {
            println!("    comparison {} failed: {} vs {}", c.name, c.lhs.mean, c.rhs.mean);
        }
        if let Some(note) = &r.note {
            println!("    {note}");
        }
    }
}

fn finish_run(config: &RunConfig, reports: &[ScenarioReport]) -> Result<u8, Failure> {
    print_table(reports);
    if let Some(dir) = &config.out_dir {
        for p in write_reports(dir, config.format, reports)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(exit_code(reports) as u8)
}

fn execute(cli: Cli) -> Result<u8, Failure> {
    let config = base_config(&cli.global)?;
    match cli.command {
        Command::Spectrum { kernel } | Command::Det2 { kernel } => {
            let report = kernel_report(&config, &kernel, "spectrum")?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            Ok(0)
        }
        Command::KappaHat { kernel } => {
            let report = kernel_report(&config, &kernel, "kappa-hat")?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            Ok(0)
        }
        Command::KappaS { kernel } => {
            let report = kernel_report(&config, &kernel, "kappa-s")?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            Ok(0)
        }
        Command::Verify {
            scenario,
            kernel,
            functional,
            lambda,
            lambdas,
            x,
        } => {
            let mut s = ScenarioConfig::new(scenario.parse::<ScenarioKind>()?);
            s.kernel = kernel;
            s.functional = functional;
            s.lambda = lambda;
            s.lambdas = lambdas;
            s.x = x;
            let mut config = config;
            config.scenarios = vec![s];
            config.validate()?;
            let reports = run_scenario(&config, &config.scenarios[0])?;
            finish_run(&config, &reports)
        }
        Command::SweepLaplace {
            kernel,
            lambdas,
            functional,
        } => {
            let mut s = ScenarioConfig::new(ScenarioKind::Laplace);
            s.kernel = Some(kernel);
            s.lambdas = Some(lambdas);
            s.functional = functional;
            let mut config = config;
            config.scenarios = vec![s];
            config.validate()?;
            let reports = run_scenario(&config, &config.scenarios[0])?;
            finish_run(&config, &reports)
        }
        Command::Run => {
            if config.scenarios.is_empty() {
                return Err(Failure::Usage("the configuration lists no [[scenario]]".into()));
            }
            let reports = run(&config)?;
            finish_run(&config, &reports)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Gate(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_GATE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
