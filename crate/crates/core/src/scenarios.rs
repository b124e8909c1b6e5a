//! End-to-end checks of the change-of-variables identities.
//!
//! Each scenario evaluates its hypothesis gate first; when the gate fails no
//! Monte Carlo is run and the report records the violated hypothesis. Both
//! sides of an identity are sampled from independent sub-seeds unless
//! [`ScenarioOptions::paired`] is set.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{c_kernels, kappa_from_phi, MatrixKernel};
use crate::operator::{
    assemble, eta_lambda, inverse_kernel, inverse_residual, kappa_s, regularized_det, Det2, LAMBDA_BAND,
};
use crate::stats::{group_means, median, variance, MCEstimate};
use crate::stochastic::{
    apply_transformation, cm_exponent, cm_transform, derive_seed, guard_for_lambda, h_functionals, map_paths,
    quadratic_form, sample_range, MomentGuard, PathBatch, SampleStreams, TestFunctional,
};
use crate::zoo::KernelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSetup {
    pub grid: TimeGrid,
    pub dim: usize,
    pub samples: usize,
    pub seed: u64,
}

impl RunSetup {
    pub fn new(horizon: f64, n_steps: usize, dim: usize, samples: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension d must be at least 1"));
        }
        if samples == 0 {
            return Err(invalid("sample count M must be at least 1"));
        }
        Ok(Self {
            grid: TimeGrid::new(horizon, n_steps)?,
            dim,
            samples,
            seed,
        })
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptions {
    /// Relative tolerance absorbing discretization bias in MC comparisons.
    pub tolerance: f64,
    /// Relative tolerance for deterministic operator identities.
    pub operator_tolerance: f64,
    /// Width of the statistical band, in standard errors.
    pub sigmas: f64,
    /// Relative tolerance for the median-of-group-means comparison used when
    /// the second moment is infinite.
    pub consistency_tolerance: f64,
    pub consistency_groups: usize,
    /// Sample both sides from one batch instead of independent sub-seeds.
    pub paired: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            tolerance: 0.02,
            operator_tolerance: 1e-8,
            sigmas: 3.0,
            consistency_tolerance: 0.05,
            consistency_groups: 20,
            paired: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    RejectedByHypothesis,
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `|Δ| ≤ max(tol·|rhs|, k·σ)`.
    ZScore,
    /// Medians of group means, for estimates without a valid error bar.
    Consistency,
}

/// One Monte Carlo comparison `lhs ≈ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub method: Method,
    pub lhs: MCEstimate,
    pub rhs: MCEstimate,
    pub difference: f64,
    pub relative_error: f64,
    pub z_score: Option<f64>,
    /// Absolute acceptance bound on `|difference|` (z-score method) or on the
    /// relative median gap (consistency method).
    pub threshold: f64,
    /// Combined sample standard error, reported even when it is not a valid
    /// error bar.
    pub nominal_std_error: f64,
    pub median_lhs: Option<f64>,
    pub median_rhs: Option<f64>,
    pub passed: bool,
}

/// One deterministic assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// `|value − expected| ≤ tol·max(|expected|, floor)`.
    pub fn relative(name: &str, value: f64, expected: f64, tol: f64) -> Self {
        let error = (value - expected).abs() / expected.abs().max(f64::MIN_POSITIVE);
        Self::with_error(name, value, expected, error, tol)
    }

    pub fn absolute(name: &str, value: f64, expected: f64, tol: f64) -> Self {
        Self::with_error(name, value, expected, (value - expected).abs(), tol)
    }

    /// `value ≤ bound`.
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            expected: bound,
            error: (value - bound).max(0.0),
            tolerance: 0.0,
            passed: value <= bound,
        }
    }

    pub fn with_error(name: &str, value: f64, expected: f64, error: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            expected,
            error,
            tolerance: tol,
            passed: error <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kernel_spec: String,
    pub functional: String,
    pub horizon: f64,
    pub n_steps: usize,
    pub dim: usize,
    pub samples: usize,
    pub seed: u64,
    pub lambda_eta: Option<f64>,
    pub det2_sign: Option<f64>,
    pub det2_log: Option<f64>,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub verdict: Verdict,
    pub primary: Option<Comparison>,
    pub comparisons: Vec<Comparison>,
    pub checks: Vec<Check>,
    pub provenance: Provenance,
    pub note: Option<String>,
}

impl ScenarioReport {
    fn new(name: &str, provenance: Provenance) -> Self {
        Self {
            name: name.to_string(),
            verdict: Verdict::Pass,
            primary: None,
            comparisons: Vec::new(),
            checks: Vec::new(),
            provenance,
            note: None,
        }
    }

    fn rejected(mut self, note: String) -> Self {
        self.verdict = Verdict::RejectedByHypothesis;
        self.note = Some(note);
        self
    }

    fn singular(mut self, note: String) -> Self {
        self.verdict = Verdict::Singular;
        self.note = Some(note);
        self
    }

    fn finish(mut self) -> Self {
        let ok = self.primary.iter().chain(&self.comparisons).all(|c| c.passed)
            && self.checks.iter().all(|c| c.passed);
        self.verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn comparison(&self, name: &str) -> Option<&Comparison> {
        self.primary
            .iter()
            .chain(&self.comparisons)
            .find(|c| c.name == name)
    }

    /// `name,lhs,rhs,se,z,verdict,lambda_eta,det2_log,seed`.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let (lhs, rhs, se, z) = match &self.primary {
            Some(c) => {
                let se = match (c.lhs.std_error, c.rhs.std_error) {
                    (Some(a), Some(b)) => Some(a.hypot(b)),
                    _ => None,
                };
                (Some(c.lhs.mean), Some(c.rhs.mean), se, c.z_score)
            }
            None => (None, None, None, None),
        };
        let verdict = serde_json::to_value(self.verdict)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.name,
            opt(lhs),
            opt(rhs),
            opt(se),
            opt(z),
            verdict,
            opt(self.provenance.lambda_eta),
            opt(self.provenance.det2_log),
            self.provenance.seed
        )
    }
}

pub const CSV_HEADER: &str = "name,lhs,rhs,se,z,verdict,lambda_eta,det2_log,seed";

/// Right-hand side of a comparison: another sample set or a known value.
pub enum Side {
    Samples { values: Vec<f64>, scale: f64 },
    Exact(f64),
}

/// Compares `lhs_scale · mean(lhs)` against `rhs`.
pub fn compare(name: &str, lhs: &[f64], lhs_scale: f64, rhs: Side, ci_valid: bool, opts: &ScenarioOptions) -> Comparison {
    let lhs_scaled: Vec<f64> = lhs.iter().map(|v| v * lhs_scale).collect();
    let rhs_scaled: Option<Vec<f64>> = match &rhs {
        Side::Samples { values, scale } => Some(values.iter().map(|v| v * scale).collect()),
        Side::Exact(_) => None,
    };
    let lhs_est = MCEstimate::from_samples(&lhs_scaled, ci_valid);
    let rhs_est = match (&rhs, &rhs_scaled) {
        (Side::Exact(v), _) => MCEstimate::exact(*v),
        (_, Some(values)) => MCEstimate::from_samples(values, true),
        _ => unreachable!(),
    };
    let difference = lhs_est.mean - rhs_est.mean;
    let sample_se = |v: &[f64]| (variance(v) / v.len() as f64).sqrt();
    let nominal_std_error = sample_se(&lhs_scaled).hypot(rhs_scaled.as_deref().map(sample_se).unwrap_or(0.0));
    let relative_error = difference / rhs_est.mean.abs().max(f64::MIN_POSITIVE);
    if ci_valid {
        let se = lhs_est.std_error.unwrap_or(0.0).hypot(rhs_est.std_error.unwrap_or(0.0));
        let threshold = (opts.tolerance * rhs_est.mean.abs()).max(opts.sigmas * se);
        Comparison {
            name: name.to_string(),
            method: Method::ZScore,
            z_score: (se > 0.0).then(|| difference / se),
            passed: difference.abs() <= threshold,
            lhs: lhs_est,
            rhs: rhs_est,
            difference,
            relative_error,
            threshold,
            nominal_std_error,
            median_lhs: None,
            median_rhs: None,
        }
    } else {
        let groups = opts.consistency_groups;
        let med_l = median(&group_means(&lhs_scaled, groups));
        let med_r = match &rhs_scaled {
            Some(values) => median(&group_means(values, groups)),
            None => rhs_est.mean,
        };
        let gap = (med_l - med_r).abs() / med_r.abs().max(f64::MIN_POSITIVE);
        Comparison {
            name: name.to_string(),
            method: Method::Consistency,
            z_score: None,
            passed: gap <= opts.consistency_tolerance,
            lhs: lhs_est,
            rhs: rhs_est,
            difference,
            relative_error,
            threshold: opts.consistency_tolerance,
            nominal_std_error,
            median_lhs: Some(med_l),
            median_rhs: Some(med_r),
        }
    }
}

fn side_seeds(seed: u64, opts: &ScenarioOptions) -> (u64, u64) {
    if opts.paired {
        let s = derive_seed(seed, "paired");
        (s, s)
    } else {
        (derive_seed(seed, "lhs"), derive_seed(seed, "rhs"))
    }
}

fn provenance(setup: &RunSetup, kernel_spec: String, functional: &TestFunctional) -> Provenance {
    Provenance {
        kernel_spec,
        functional: functional.to_string(),
        horizon: setup.grid.horizon(),
        n_steps: setup.grid.n_steps(),
        dim: setup.dim,
        samples: setup.samples,
        seed: setup.seed,
        lambda_eta: None,
        det2_sign: None,
        det2_log: None,
        values: BTreeMap::new(),
    }
}

fn record_det2(p: &mut Provenance, det: Det2) {
    p.det2_sign = Some(det.sign());
    p.det2_log = det.log_modulus();
}

fn samples_on<F>(setup: &RunSetup, seed: u64, per_chunk: F) -> Result<Vec<f64>>
where
    F: Fn(&PathBatch) -> Result<Vec<f64>> + Sync,
{
    map_paths(setup.grid, setup.dim, setup.samples, seed, per_chunk)
}

fn weighted(f: Vec<f64>, exponent: Vec<f64>) -> Vec<f64> {
    f.into_iter().zip(exponent).map(|(a, q)| a * q.exp()).collect()
}

fn gate_note(lambda: f64) -> String {
    format!(
        "hypothesis Λ(B_η) < 1 fails: Λ = {lambda} ≥ {}",
        1.0 - LAMBDA_BAND
    )
}

/// `det₂(I − B_η)` for a symmetric kernel.
pub fn det2_identity_minus(eta: &MatrixKernel) -> Det2 {
    regularized_det(&(-assemble(eta).matrix()))
}

/// `((1 − a)e^a)^{−1/2}`, the mean of `e^{(a/2)(G²−1)}` for `G ~ N(0,1)`, `a < 1`.
pub fn rank_one_exp_moment(a: f64) -> f64 {
    ((1.0 - a) * a.exp()).powf(-0.5)
}

/// `exp(½{½ + (0∨Λ)/(3(1−0∨Λ)³)}‖η‖₂²)`.
pub fn integrability_bound(lambda: f64, eta_norm: f64) -> f64 {
    let l = lambda.max(0.0);
    (0.5 * (0.5 + l / (3.0 * (1.0 - l).powi(3))) * eta_norm * eta_norm).exp()
}

// ---------------------------------------------------------------------------
// finite-dimensional identity

/// `|det(I+A)|·E[φ(x+Ax)e^{⟨Bx,x⟩/2}] = E[φ(x)]` for `x ~ N(0, I_n)`,
/// `B = −(A + Aᵀ + AᵀA)`.
pub fn verify_finite_dim(
    a: &DMatrix<f64>,
    f: &TestFunctional,
    samples: usize,
    seed: u64,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport> {
    crate::operator::check_square(a)?;
    if samples == 0 {
        return Err(invalid("sample count M must be at least 1"));
    }
    let n = a.nrows();
    let b = -(a + a.transpose() + a.transpose() * a);
    let b = (&b + b.transpose()) * 0.5;
    let lambda = b.clone().symmetric_eigenvalues().max();
    let det = regularized_det(a);
    let rows: Vec<String> = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
        .collect();
    let mut prov = Provenance {
        kernel_spec: format!("matrix:[{}]", rows.join(";")),
        functional: f.to_string(),
        horizon: 0.0,
        n_steps: n,
        dim: n,
        samples,
        seed,
        lambda_eta: Some(lambda),
        det2_sign: None,
        det2_log: None,
        values: BTreeMap::new(),
    };
    let log_det = det.log_modulus().map(|l| l + a.trace());
    prov.det2_sign = Some(det.sign());
    prov.det2_log = det.log_modulus();
    if let Some(l) = log_det {
        prov.values.insert("log_abs_det".into(), l);
    }
    let report = ScenarioReport::new("finite-dim", prov);
    if lambda >= 1.0 - LAMBDA_BAND {
        return Ok(report.rejected(gate_note(lambda)));
    }
    let Some(log_det) = log_det else {
        return Ok(report.singular("I + A is singular".into()));
    };
    let ci_valid = guard_for_lambda(lambda) == MomentGuard::Ok;
    let (seed_l, seed_r) = side_seeds(seed, opts);
    let draw = |s: u64| -> Vec<DVector<f64>> {
        let streams = SampleStreams::new(s);
        (0..samples)
            .into_par_iter()
            .map(|m| {
                let mut x = vec![0.0; n];
                streams.fill_normal(m as u64, 1.0, &mut x);
                DVector::from_vec(x)
            })
            .collect()
    };
    let ipa = DMatrix::<f64>::identity(n, n) + a;
    let lhs: Vec<f64> = draw(seed_l)
        .par_iter()
        .map(|x| {
            let y = &ipa * x;
            f.eval_point(y.as_slice()) * (0.5 * x.dot(&(&b * x))).exp()
        })
        .collect();
    let rhs: Vec<f64> = draw(seed_r).par_iter().map(|x| f.eval_point(x.as_slice())).collect();
    let mut report = report;
    report.primary = Some(compare(
        "identity",
        &lhs,
        log_det.exp(),
        Side::Samples { values: rhs, scale: 1.0 },
        ci_valid,
        opts,
    ));
    Ok(report.finish())
}

// ---------------------------------------------------------------------------
// transformation of order one

/// `|det₂(I+B_κ)|·E[f(ι+F_κ)e^{q_{η(κ)}}] = e^{‖κ‖₂²/2}·E[f]`.
pub fn verify_transf(setup: &RunSetup, spec: &KernelSpec, f: &TestFunctional, opts: &ScenarioOptions) -> Result<ScenarioReport> {
    let kappa = spec.build(setup.grid, setup.dim)?;
    transf_for_kernel(setup, &kappa, spec.to_string(), f, opts, "transf")
}

pub fn transf_for_kernel(
    setup: &RunSetup,
    kappa: &MatrixKernel,
    label: String,
    f: &TestFunctional,
    opts: &ScenarioOptions,
    name: &str,
) -> Result<ScenarioReport> {
    let eta = kappa.eta();
    let lambda = eta_lambda(kappa);
    let det = assemble(kappa).det2();
    let norm = kappa.l2_norm();
    let mut prov = provenance(setup, label, f);
    prov.lambda_eta = Some(lambda);
    record_det2(&mut prov, det);
    prov.values.insert("kappa_l2_norm".into(), norm);
    let mut report = ScenarioReport::new(name, prov);
    if lambda >= 1.0 - LAMBDA_BAND {
        return Ok(report.rejected(gate_note(lambda)));
    }
    let det_abs = match det.modulus_or("det₂(I + B_κ)") {
        Ok(v) => v,
        Err(e) => return Ok(report.singular(e.to_string())),
    };
    let rhs_const = (0.5 * norm * norm).exp();

    // f ≡ 1 in closed form: |det₂(I+B_κ)|·det₂(I−B_η(κ))^{−1/2} = e^{‖κ‖²/2}
    if let Some(l) = det2_identity_minus(&eta).log_modulus() {
        report.checks.push(Check::relative(
            "unit_functional_closed_form",
            det_abs * (-0.5 * l).exp(),
            rhs_const,
            opts.operator_tolerance,
        ));
    }

    let ci_valid = guard_for_lambda(lambda) == MomentGuard::Ok;
    let (seed_l, seed_r) = side_seeds(setup.seed, opts);
    let lhs = samples_on(setup, seed_l, |batch| {
        let moved = apply_transformation(kappa, batch)?;
        Ok(weighted(f.eval(&moved), quadratic_form(&eta, batch)?))
    })?;
    let rhs = samples_on(setup, seed_r, |batch| Ok(f.eval(batch)))?;
    report.primary = Some(compare(
        "identity",
        &lhs,
        det_abs,
        Side::Samples { values: rhs, scale: rhs_const },
        ci_valid,
        opts,
    ));
    Ok(report.finish())
}

// ---------------------------------------------------------------------------
// inverse transformation

/// Paths used for the pathwise composition check.
pub const ROUNDTRIP_PATHS: usize = 1000;

/// `|det₂(I+B_κ)|·E[f e^{q_{η(κ)}}] = e^{‖κ‖₂²/2}·E[f(ι+F_κ̂)]`, plus the
/// composition identity and both density normalizations.
pub fn verify_inverse(setup: &RunSetup, spec: &KernelSpec, f: &TestFunctional, opts: &ScenarioOptions) -> Result<ScenarioReport> {
    let kappa = spec.build(setup.grid, setup.dim)?;
    inverse_for_kernel(setup, &kappa, spec.to_string(), f, opts)
}

/// Largest relative node deviation of `(ι+F_second)∘(ι+F_first)` from the identity.
pub fn composition_deviation(first: &MatrixKernel, second: &MatrixKernel, paths: &PathBatch) -> Result<f64> {
    let there = apply_transformation(first, paths)?;
    let back = apply_transformation(second, &there)?;
    let w0 = paths.path_values();
    let w1 = back.path_values();
    let mut worst = 0.0_f64;
    for (a, b) in w0.column_iter().zip(w1.column_iter()) {
        let scale = a.amax().max(f64::MIN_POSITIVE);
        worst = worst.max((a - b).amax() / scale);
    }
    Ok(worst)
}

fn density_samples(setup: &RunSetup, kernel: &MatrixKernel, seed: u64) -> Result<(Vec<f64>, f64, bool)> {
    let eta = kernel.eta();
    let lambda = eta_lambda(kernel);
    let det = assemble(kernel).det2().modulus_or("det₂(I + B)")?;
    let norm = kernel.l2_norm();
    let scale = det * (-0.5 * norm * norm).exp();
    let values = samples_on(setup, seed, |batch| {
        Ok(quadratic_form(&eta, batch)?.into_iter().map(f64::exp).collect())
    })?;
    Ok((values, scale, guard_for_lambda(lambda) == MomentGuard::Ok))
}

pub fn inverse_for_kernel(
    setup: &RunSetup,
    kappa: &MatrixKernel,
    label: String,
    f: &TestFunctional,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport> {
    let eta = kappa.eta();
    let lambda = eta_lambda(kappa);
    let det = assemble(kappa).det2();
    let norm = kappa.l2_norm();
    let mut prov = provenance(setup, label, f);
    prov.lambda_eta = Some(lambda);
    record_det2(&mut prov, det);
    let mut report = ScenarioReport::new("inverse", prov);
    if lambda >= 1.0 - LAMBDA_BAND {
        return Ok(report.rejected(gate_note(lambda)));
    }
    let (det_abs, hat) = match det.modulus_or("det₂(I + B_κ)").and_then(|d| Ok((d, inverse_kernel(kappa)?))) {
        Ok(v) => v,
        Err(e) => return Ok(report.singular(e.to_string())),
    };
    let hat_lambda = eta_lambda(&hat);
    report.provenance.values.insert("kappa_hat_l2_norm".into(), hat.l2_norm());
    report.provenance.values.insert("lambda_eta_kappa_hat".into(), hat_lambda);

    report.checks.push(Check::absolute(
        "operator_inverse_residual",
        inverse_residual(kappa, &hat)?,
        0.0,
        1e-10,
    ));
    let probe = sample_range(
        setup.grid,
        setup.dim,
        derive_seed(setup.seed, "roundtrip"),
        0,
        ROUNDTRIP_PATHS.min(setup.samples),
    );
    let dev = composition_deviation(&hat, kappa, &probe)?.max(composition_deviation(kappa, &hat, &probe)?);
    report.checks.push(Check::absolute("pathwise_composition", dev, 0.0, 1e-8));
    report.checks.push(Check::at_most("hat_gate_lambda", hat_lambda, 1.0 - LAMBDA_BAND));

    let ci_valid = guard_for_lambda(lambda) == MomentGuard::Ok;
    let (seed_l, seed_r) = side_seeds(setup.seed, opts);
    let lhs = samples_on(setup, seed_l, |batch| Ok(weighted(f.eval(batch), quadratic_form(&eta, batch)?)))?;
    let rhs = samples_on(setup, seed_r, |batch| Ok(f.eval(&apply_transformation(&hat, batch)?)))?;
    report.primary = Some(compare(
        "identity",
        &lhs,
        det_abs,
        Side::Samples {
            values: rhs,
            scale: (0.5 * norm * norm).exp(),
        },
        ci_valid,
        opts,
    ));

    // density of ι + F_κ: |det₂(I+B_κ̂)| e^{−‖κ̂‖²/2} e^{q_{η(κ̂)}}
    let (values, scale, ci) = density_samples(setup, &hat, derive_seed(setup.seed, "density"))?;
    report
        .comparisons
        .push(compare("density_normalization", &values, scale, Side::Exact(1.0), ci, opts));
    // density of ι + F_κ̂, built from κ itself
    let (values, scale, ci) = density_samples(setup, kappa, derive_seed(setup.seed, "density-dual"))?;
    report
        .comparisons
        .push(compare("density_normalization_dual", &values, scale, Side::Exact(1.0), ci, opts));
    Ok(report.finish())
}

// ---------------------------------------------------------------------------
// square-root construction

/// `E[f e^{q_η}] = det₂(I−B_η)^{−1/2}·E[f(ι+F_{κ̂_S(η)})]`.
pub fn verify_surjective(setup: &RunSetup, spec: &KernelSpec, f: &TestFunctional, opts: &ScenarioOptions) -> Result<ScenarioReport> {
    let eta = spec.build(setup.grid, setup.dim)?.into_symmetric()?;
    surjective_for_kernel(setup, &eta, spec.to_string(), spec.rank_one_coefficient(), f, opts)
}

/// Runs [`verify_surjective`] on `λη` for each `λ`.
pub fn sweep_laplace(
    setup: &RunSetup,
    spec: &KernelSpec,
    lambdas: &[f64],
    f: &TestFunctional,
    opts: &ScenarioOptions,
) -> Result<Vec<ScenarioReport>> {
    let eta = spec.build(setup.grid, setup.dim)?.into_symmetric()?;
    lambdas
        .iter()
        .map(|&l| {
            let mut r = surjective_for_kernel(
                setup,
                &eta.scaled(l),
                format!("{spec}*{l}"),
                spec.rank_one_coefficient().map(|a| a * l),
                f,
                opts,
            )?;
            r.name = format!("laplace[{l}]");
            r.provenance.values.insert("laplace_lambda".into(), l);
            Ok(r)
        })
        .collect()
}

pub fn surjective_for_kernel(
    setup: &RunSetup,
    eta: &MatrixKernel,
    label: String,
    rank_one: Option<f64>,
    f: &TestFunctional,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport> {
    if !eta.is_symmetric() {
        return Err(Error::PreconditionViolation("η must be symmetric".into()));
    }
    let lambda = assemble(eta).lambda_max()?;
    let det_eta = det2_identity_minus(eta);
    let mut prov = provenance(setup, label, f);
    prov.lambda_eta = Some(lambda);
    record_det2(&mut prov, det_eta);
    let mut report = ScenarioReport::new("surjective", prov);
    if lambda >= 1.0 - LAMBDA_BAND {
        return Ok(report.rejected(gate_note(lambda)));
    }
    let det_eta = match det_eta.modulus_or("det₂(I − B_η)") {
        Ok(v) => v,
        Err(e) => return Ok(report.singular(e.to_string())),
    };
    let ks = kappa_s(eta)?;
    let ks_hat = inverse_kernel(&ks)?;
    let factor = det_eta.powf(-0.5);
    report.provenance.values.insert("det2_factor".into(), factor);

    let eta_norm = eta.l2_norm();
    let round = ks.eta().sub(eta)?.l2_norm();
    report.checks.push(Check::with_error(
        "eta_of_kappa_s",
        round,
        0.0,
        if eta_norm > 0.0 { round / eta_norm } else { round },
        opts.operator_tolerance,
    ));
    let ks_det = assemble(&ks).det2().modulus_or("det₂(I + B_κS)")?;
    let ks_norm = ks.l2_norm();
    let via_ks = (ks_det * (-0.5 * ks_norm * ks_norm).exp()).powi(2);
    report
        .checks
        .push(Check::relative("det2_square_root", via_ks, det_eta, opts.operator_tolerance));
    if let Some(a) = rank_one {
        report
            .checks
            .push(Check::relative("rank_one_closed_form", factor, rank_one_exp_moment(a), 1e-6));
    }

    let ci_valid = guard_for_lambda(lambda) == MomentGuard::Ok;
    let (seed_l, seed_r) = side_seeds(setup.seed, opts);
    let lhs = samples_on(setup, seed_l, |batch| Ok(weighted(f.eval(batch), quadratic_form(eta, batch)?)))?;
    let rhs = samples_on(setup, seed_r, |batch| Ok(f.eval(&apply_transformation(&ks_hat, batch)?)))?;
    report.primary = Some(compare(
        "identity",
        &lhs,
        1.0,
        Side::Samples { values: rhs, scale: factor },
        ci_valid,
        opts,
    ));
    Ok(report.finish())
}

// ---------------------------------------------------------------------------
// harmonic oscillator

/// `E[f e^{−λh}] = det(I+B_c)^{−1/2}·E[f(ι+F_{ĉ′})]` with `c = c(√λκ)` or
/// `c(√λκ; x)`.
pub fn verify_harmonic(
    setup: &RunSetup,
    spec: &KernelSpec,
    x: Option<&[f64]>,
    lambda: f64,
    f: &TestFunctional,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid(format!("λ must be non-negative, got {lambda}")));
    }
    let kappa = spec.build(setup.grid, setup.dim)?;
    let scaled = kappa.scaled(lambda.sqrt());
    let c = c_kernels(&scaled, x)?;
    let b_c = assemble(&c);
    let neg_lambda = b_c.eigenvalues()?.first().map(|v| -v).unwrap_or(0.0);
    let det = b_c.det();
    let mut prov = provenance(setup, spec.to_string(), f);
    record_det2(&mut prov, b_c.det2());
    prov.values.insert("lambda".into(), lambda);
    prov.values.insert("lambda_minus_c".into(), neg_lambda);
    let mut report = ScenarioReport::new("harmonic", prov);
    report
        .checks
        .push(Check::at_most("lambda_minus_c_nonpositive", neg_lambda, 1e-10));
    let det_abs = det.modulus_or("det(I + B_c)")?;
    let factor = det_abs.powf(-0.5);
    report.provenance.values.insert("det_factor".into(), factor);

    let closed = match (spec, x, setup.dim) {
        (KernelSpec::Volterra { scale }, None, 1) | (KernelSpec::Volterra { scale }, Some([_]), 1) => {
            let weight = x.map(|v| v[0] * v[0]).unwrap_or(1.0);
            let root = (lambda * weight).sqrt() * scale.abs() * setup.grid.horizon();
            Some(root.cosh().powf(-0.5))
        }
        _ => None,
    };
    if let Some(oracle) = closed {
        report.provenance.values.insert("cosh_oracle".into(), oracle);
        report
            .checks
            .push(Check::relative("cosh_closed_form", factor, oracle, 1e-2));
    }

    let cp = kappa_s(&c.scaled(-1.0))?;
    let cp_hat = inverse_kernel(&cp)?;
    let (seed_l, seed_r) = side_seeds(setup.seed, opts);
    let lhs = samples_on(setup, seed_l, |batch| {
        let h = h_functionals(&kappa, x, batch)?;
        Ok(weighted(f.eval(batch), h.into_iter().map(|v| -lambda * v).collect()))
    })?;
    let rhs = samples_on(setup, seed_r, |batch| Ok(f.eval(&apply_transformation(&cp_hat, batch)?)))?;
    if let (Some(oracle), TestFunctional::One) = (closed, f) {
        report
            .comparisons
            .push(compare("cosh_oracle", &lhs, 1.0, Side::Exact(oracle), true, opts));
    }
    report.primary = Some(compare(
        "identity",
        &lhs,
        1.0,
        Side::Samples { values: rhs, scale: factor },
        true,
        opts,
    ));
    Ok(report.finish())
}

// ---------------------------------------------------------------------------
// Cameron–Martin linear transformations

/// Largest node gap between `ι+𝔽_φ` and `ι+F_{κ_φ}`, relative to `max(1, sup|w|)`.
pub fn cm_pathwise_gap(phi: &MatrixKernel, kappa_phi: &MatrixKernel, paths: &PathBatch) -> Result<f64> {
    let a = cm_transform(phi, paths)?.path_values();
    let b = apply_transformation(kappa_phi, paths)?.path_values();
    let w = paths.path_values();
    let mut worst = 0.0_f64;
    for ((x, y), w) in a.column_iter().zip(b.column_iter()).zip(w.column_iter()) {
        worst = worst.max((x - y).amax() / w.amax().max(1.0));
    }
    Ok(worst)
}

/// `log|det(I + M)|` and sign from the eigenvalues of `M`.
fn spectral_log_det(m: &DMatrix<f64>) -> (f64, f64) {
    let mut sign = 1.0;
    let mut log = 0.0;
    for z in m.complex_eigenvalues().iter() {
        let w = nalgebra::Complex::new(1.0 + z.re, z.im);
        log += w.norm().ln();
        if z.im == 0.0 && w.re < 0.0 {
            sign = -sign;
        }
    }
    (sign, log)
}

/// `|det(I+B_{κ_φ})|·E[f(ι+𝔽_φ)e^{Ψ_φ}] = E[f]`.
pub fn verify_cameron_martin(setup: &RunSetup, spec: &KernelSpec, f: &TestFunctional, opts: &ScenarioOptions) -> Result<ScenarioReport> {
    let phi = spec.as_phi(setup.grid, setup.dim)?;
    let kappa = kappa_from_phi(&phi);
    let lambda = eta_lambda(&kappa);
    let b = assemble(&kappa);
    let det2 = b.det2();
    let mut prov = provenance(setup, spec.to_string(), f);
    prov.lambda_eta = Some(lambda);
    record_det2(&mut prov, det2);
    let mut report = ScenarioReport::new("cameron-martin", prov);
    if lambda >= 1.0 - LAMBDA_BAND {
        return Ok(report.rejected(gate_note(lambda)));
    }
    let det = b.det();
    let det_abs = match det.modulus_or("det(I + B_κφ)") {
        Ok(v) => v,
        Err(e) => return Ok(report.singular(e.to_string())),
    };
    report.provenance.values.insert("fredholm_det".into(), det.value());
    let step = setup.grid.step();

    let tr = b.trace();
    report.checks.push(Check::with_error(
        "trace_formula",
        tr,
        kappa.diagonal_trace(),
        (tr - kappa.diagonal_trace()).abs() / tr.abs().max(1.0),
        1e-12,
    ));
    let (sign, log) = spectral_log_det(b.matrix());
    report.checks.push(Check::with_error(
        "det_equals_det2_times_exp_trace",
        sign * log.exp(),
        det.value(),
        if sign == det.sign() { (log - det.log_modulus().unwrap_or(f64::NAN)).exp_m1().abs() } else { f64::INFINITY },
        opts.operator_tolerance,
    ));
    // B_κφ = B_φ(B_ψ + ΔI): the inclusive tail sum adds one diagonal cell
    let psi = KernelSpec::Volterra { scale: 1.0 }.build(setup.grid, setup.dim)?;
    let m_phi = assemble(&phi);
    let factored = m_phi.matrix() * assemble(&psi).matrix() + m_phi.matrix() * step;
    let gap = (b.matrix() - factored).amax() / b.matrix().amax().max(1.0);
    report.checks.push(Check::absolute("trace_class_factorization", gap, 0.0, 1e-12));
    if let KernelSpec::ConstPhi { c } = spec {
        let t = setup.grid.horizon();
        let oracle = (1.0 + c * t * t / 2.0).powi(setup.dim as i32);
        report.provenance.values.insert("fredholm_oracle".into(), oracle);
        report
            .checks
            .push(Check::relative("fredholm_closed_form", det.value(), oracle, 1e-3));
    }
    let probe = sample_range(
        setup.grid,
        setup.dim,
        derive_seed(setup.seed, "cm-pathwise"),
        0,
        ROUNDTRIP_PATHS.min(setup.samples),
    );
    report.checks.push(Check::absolute(
        "pathwise_cm_equals_f_kappa_phi",
        cm_pathwise_gap(&phi, &kappa, &probe)?,
        0.0,
        5.0 * step.sqrt(),
    ));

    let ci_valid = guard_for_lambda(lambda) == MomentGuard::Ok;
    let (seed_l, seed_r) = side_seeds(setup.seed, opts);
    let lhs = samples_on(setup, seed_l, |batch| {
        let moved = cm_transform(&phi, batch)?;
        Ok(weighted(f.eval(&moved), cm_exponent(&phi, batch)?.psi))
    })?;
    let rhs = samples_on(setup, seed_r, |batch| Ok(f.eval(batch)))?;
    report.primary = Some(compare(
        "identity",
        &lhs,
        det_abs,
        Side::Samples { values: rhs, scale: 1.0 },
        ci_valid,
        opts,
    ));
    Ok(report.finish())
}

// ---------------------------------------------------------------------------
// wider class than the general change of variables

/// Spectral facts of `κ = b₁h₁′⊗h₁′ + b₂h₂′⊗h₂′` followed by [`verify_transf`].
pub fn verify_gencv_example(
    setup: &RunSetup,
    b1: f64,
    b2: f64,
    f: &TestFunctional,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport> {
    let spec = KernelSpec::GenCv { b1, b2 };
    let kappa = spec.build(setup.grid, setup.dim)?;
    let s_lambda = assemble(&kappa.s()).lambda_max()?;
    let eta_l = eta_lambda(&kappa);
    let det = assemble(&kappa).det2();
    let expected_det = (1.0 + b1) * (1.0 + b2) * (-(b1 + b2)).exp();
    let expected_eta = [0.0, -(2.0 * b1 + b1 * b1), -(2.0 * b2 + b2 * b2)]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let expected_s = [0.0, -2.0 * b1, -2.0 * b2].into_iter().fold(f64::NEG_INFINITY, f64::max);

    let mut checks = vec![
        Check::relative("lambda_s_kappa", s_lambda, expected_s, 1e-6),
        Check::absolute("lambda_eta_kappa", eta_l, expected_eta, 1e-6),
    ];
    if det.is_singular() {
        let mut prov = provenance(setup, spec.to_string(), f);
        prov.lambda_eta = Some(eta_l);
        record_det2(&mut prov, det);
        let mut report = ScenarioReport::new("gencv", prov).singular(format!(
            "det₂(I + B_κ) = (1+b₁)(1+b₂)e^{{−(b₁+b₂)}} = {expected_det} vanishes"
        ));
        report.checks = checks;
        return Ok(report);
    }
    checks.push(Check::relative("det2_closed_form", det.value(), expected_det, 1e-6));
    let mut report = transf_for_kernel(setup, &kappa, spec.to_string(), f, opts, "gencv")?;
    report.provenance.values.insert("lambda_s_kappa".into(), s_lambda);
    checks.append(&mut report.checks);
    report.checks = checks;
    Ok(match report.verdict {
        Verdict::Pass | Verdict::Fail => report.finish(),
        _ => report,
    })
}

// ---------------------------------------------------------------------------
// integrability bound

/// `E[e^{q_η}] ≤ exp(½{½ + (0∨Λ)/(3(1−0∨Λ)³)}‖η‖₂²)`, with the exact value
/// `det₂(I − B_η)^{−1/2}` as oracle.
pub fn verify_integrability_bound(setup: &RunSetup, spec: &KernelSpec, opts: &ScenarioOptions) -> Result<ScenarioReport> {
    let eta = spec.build(setup.grid, setup.dim)?.into_symmetric()?;
    let lambda = assemble(&eta).lambda_max()?;
    let norm = eta.l2_norm();
    let det_eta = det2_identity_minus(&eta);
    let mut prov = provenance(setup, spec.to_string(), &TestFunctional::One);
    prov.lambda_eta = Some(lambda);
    record_det2(&mut prov, det_eta);
    let guard = guard_for_lambda(lambda);
    prov.values.insert("guard_ci_valid".into(), f64::from(u8::from(guard == MomentGuard::Ok)));
    let mut report = ScenarioReport::new("integrability", prov);
    if guard == MomentGuard::Reject {
        return Ok(report.rejected(format!("e^{{q_η}} is not integrable: {}", gate_note(lambda))));
    }
    let bound = integrability_bound(lambda, norm);
    let exact = match det_eta.modulus_or("det₂(I − B_η)") {
        Ok(v) => v.powf(-0.5),
        Err(e) => return Ok(report.singular(e.to_string())),
    };
    report.provenance.values.insert("bound".into(), bound);
    report.provenance.values.insert("exact".into(), exact);
    report.checks.push(Check::at_most("exact_below_bound", exact, bound));
    if let Some(a) = spec.rank_one_coefficient() {
        report
            .checks
            .push(Check::relative("rank_one_closed_form", exact, rank_one_exp_moment(a), 1e-6));
    }
    let values = samples_on(setup, derive_seed(setup.seed, "lhs"), |batch| {
        Ok(quadratic_form(&eta, batch)?.into_iter().map(f64::exp).collect())
    })?;
    let cmp = compare("identity", &values, 1.0, Side::Exact(exact), guard == MomentGuard::Ok, opts);
    let slack = cmp.lhs.std_error.map(|s| opts.sigmas * s).unwrap_or(0.0);
    report
        .checks
        .push(Check::at_most("estimate_below_bound", cmp.lhs.mean, bound + slack));
    report.primary = Some(cmp);
    Ok(report.finish())
}
