//! Wiener functionals evaluated path by path on a batch.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::paths::PathBatch;
use crate::error::{invalid, Error, Result};
use crate::kernel::MatrixKernel;
use crate::operator::{assemble, LAMBDA_BAND};

fn check_batch(kernel: &MatrixKernel, paths: &PathBatch) -> Result<()> {
    if kernel.grid() != paths.grid() {
        return Err(invalid("kernel and paths live on different grids"));
    }
    if kernel.dim() != paths.dim() {
        return Err(invalid(format!(
            "kernel dimension {} does not match path dimension {}",
            kernel.dim(),
            paths.dim()
        )));
    }
    Ok(())
}

/// `I[m][i] = Σ_j κ(t_i,t_j) ΔW[m][j]`, one column per path.
pub fn wiener_integral(kernel: &MatrixKernel, paths: &PathBatch) -> Result<DMatrix<f64>> {
    check_batch(kernel, paths)?;
    Ok(kernel.values() * paths.increments())
}

/// `ι + F_κ`: increments become `ΔW + I·Δ`.
pub fn apply_transformation(kernel: &MatrixKernel, paths: &PathBatch) -> Result<PathBatch> {
    let integral = wiener_integral(kernel, paths)?;
    let step = kernel.grid().step();
    Ok(paths.with_increments(paths.increments() + integral * step))
}

fn column_dots(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    a.column_iter().zip(b.column_iter()).map(|(x, y)| x.dot(&y)).collect()
}

/// `q_η = Σ_i ⟨Σ_{j<i} η(t_i,t_j) ΔW_j, ΔW_i⟩`, the strictly lower (Itô) double sum.
pub fn quadratic_form(eta: &MatrixKernel, paths: &PathBatch) -> Result<Vec<f64>> {
    check_batch(eta, paths)?;
    if !eta.is_symmetric() {
        return Err(Error::PreconditionViolation("q_η needs a symmetric η".into()));
    }
    let d = eta.dim();
    let mut lower = eta.values().clone();
    for c in 0..lower.ncols() {
        let block = c / d;
        for r in 0..((block + 1) * d).min(lower.nrows()) {
            lower[(r, c)] = 0.0;
        }
    }
    let applied = lower * paths.increments();
    Ok(column_dots(paths.increments(), &applied))
}

/// `h(κ;x) = ½ Σ_i ⟨x, I_i⟩² Δ`, or `h(κ) = ½ Σ_i |I_i|² Δ` without `x`.
pub fn h_functionals(kernel: &MatrixKernel, x: Option<&[f64]>, paths: &PathBatch) -> Result<Vec<f64>> {
    if let Some(x) = x {
        if x.len() != kernel.dim() {
            return Err(invalid(format!(
                "direction has length {} but kernel dimension is {}",
                x.len(),
                kernel.dim()
            )));
        }
    }
    let integral = wiener_integral(kernel, paths)?;
    let d = kernel.dim();
    let half_step = 0.5 * kernel.grid().step();
    Ok(integral
        .column_iter()
        .map(|col| {
            let total: f64 = match x {
                None => col.norm_squared(),
                Some(x) => col
                    .as_slice()
                    .chunks(d)
                    .map(|v| {
                        let p: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum();
                        p * p
                    })
                    .sum(),
            };
            half_step * total
        })
        .collect())
}

/// Per-path `Ψ_φ` and `Ψ̃_φ = Ψ_φ + trace_term`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmExponent {
    pub psi: Vec<f64>,
    pub psi_tilde: Vec<f64>,
    /// `Σ_j (Σ_{i<j} tr φ(t_i,t_j) Δ) Δ`, deterministic.
    pub trace_term: f64,
    /// First (stochastic cross) term of `Ψ_φ`, per path.
    pub cross_term: Vec<f64>,
}

/// `∫₀ᵀ(∫₀ˢ tr φ(t,s) dt) ds` on the grid.
pub fn cm_trace_term(phi: &MatrixKernel) -> f64 {
    let n = phi.grid().n_steps();
    let d = phi.dim();
    let step = phi.grid().step();
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..j {
            for a in 0..d {
                total += phi.get(i, j, a, a);
            }
        }
    }
    total * step * step
}

/// `Ψ_φ = −Σ_j ⟨Σ_i φ(t_i,t_j)† ΔW_i, W_j⟩ Δ − ½ Σ_i |Σ_j φ(t_i,t_j) W_j Δ|² Δ`
/// with `W` at left nodes.
pub fn cm_exponent(phi: &MatrixKernel, paths: &PathBatch) -> Result<CmExponent> {
    check_batch(phi, paths)?;
    let step = phi.grid().step();
    let w = paths.path_values();
    // (Σ_j φ(t_i,t_j) W_j Δ)_i
    let drift = phi.values() * &w * step;
    let cross: Vec<f64> = column_dots(paths.increments(), &drift)
        .into_iter()
        .map(|v| -v)
        .collect();
    let trace_term = cm_trace_term(phi);
    let psi: Vec<f64> = cross
        .iter()
        .zip(drift.column_iter())
        .map(|(c, col)| c - 0.5 * col.norm_squared() * step)
        .collect();
    let psi_tilde = psi.iter().map(|p| p + trace_term).collect();
    Ok(CmExponent {
        psi,
        psi_tilde,
        trace_term,
        cross_term: cross,
    })
}

/// `ι + 𝔽_φ`: increments become `ΔW + (Σ_j φ(t_i,t_j) W_j Δ)·Δ`.
pub fn cm_transform(phi: &MatrixKernel, paths: &PathBatch) -> Result<PathBatch> {
    check_batch(phi, paths)?;
    let step = phi.grid().step();
    let drift = phi.values() * paths.path_values() * (step * step);
    Ok(paths.with_increments(paths.increments() + drift))
}

/// Bounded test functionals `f ∈ C_b(W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TestFunctional {
    /// `f ≡ 1`
    One,
    /// `cos(a · Σ_k w(T)_k)`
    CosEnd { a: f64 },
    /// `exp(−|w(T)|²)`
    ExpNegSq,
    /// `cos(a · w(τ)₁)`
    CosMid { a: f64, tau: f64 },
}

impl TestFunctional {
    pub fn eval(&self, paths: &PathBatch) -> Vec<f64> {
        match self {
            TestFunctional::One => vec![1.0; paths.len()],
            TestFunctional::CosEnd { a } => paths
                .terminal_values()
                .column_iter()
                .map(|w| (a * w.sum()).cos())
                .collect(),
            TestFunctional::ExpNegSq => paths
                .terminal_values()
                .column_iter()
                .map(|w| (-w.norm_squared()).exp())
                .collect(),
            TestFunctional::CosMid { a, tau } => {
                let k = paths.grid().index_at(*tau);
                paths
                    .values_at(k)
                    .column_iter()
                    .map(|w| (a * w[0]).cos())
                    .collect()
            }
        }
    }

    /// Same family on `R^n` points, reading the point as `w(T)`.
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        match self {
            TestFunctional::One => 1.0,
            TestFunctional::CosEnd { a } => (a * x.iter().sum::<f64>()).cos(),
            TestFunctional::ExpNegSq => (-x.iter().map(|v| v * v).sum::<f64>()).exp(),
            TestFunctional::CosMid { a, .. } => (a * x[0]).cos(),
        }
    }
}

impl fmt::Display for TestFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunctional::One => write!(f, "one"),
            TestFunctional::CosEnd { a } => write!(f, "cos_end:a={a}"),
            TestFunctional::ExpNegSq => write!(f, "exp_negsq"),
            TestFunctional::CosMid { a, tau } => write!(f, "cos_mid:a={a},tau={tau}"),
        }
    }
}

impl FromStr for TestFunctional {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, body) = text.split_once(':').unwrap_or((text, ""));
        let mut a = None;
        let mut tau = None;
        for part in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| invalid(format!("functional parameter `{part}` is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("functional parameter `{part}` is not numeric")))?;
            match k.trim() {
                "a" => a = Some(v),
                "tau" => tau = Some(v),
                other => return Err(invalid(format!("unknown functional parameter `{other}`"))),
            }
        }
        let functional = match name {
            "one" => TestFunctional::One,
            "cos_end" => TestFunctional::CosEnd { a: a.unwrap_or(1.0) },
            "exp_negsq" => TestFunctional::ExpNegSq,
            "cos_mid" => TestFunctional::CosMid {
                a: a.unwrap_or(1.0),
                tau: tau.ok_or_else(|| invalid("cos_mid needs tau"))?,
            },
            other => {
                return Err(invalid(format!(
                    "unknown functional `{other}` (one | cos_end[:a=<r>] | exp_negsq | cos_mid:a=<r>,tau=<r>)"
                )))
            }
        };
        let uses_a = matches!(functional, TestFunctional::CosEnd { .. } | TestFunctional::CosMid { .. });
        if (a.is_some() && !uses_a) || (tau.is_some() && !matches!(functional, TestFunctional::CosMid { .. })) {
            return Err(invalid(format!("functional `{name}` takes no such parameter")));
        }
        Ok(functional)
    }
}

/// Integrability class of `e^{q_η}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentGuard {
    /// Mean and variance finite.
    Ok,
    /// Mean finite, second moment infinite (`2Λ ≥ 1`).
    OkNoCi,
    /// `Λ ≥ 1`: `e^{q_η}` is not integrable.
    Reject,
}

/// Classifies `e^{q_η}` by `Λ = Λ(B_η)`, returning the class and `Λ`.
pub fn exp_q_moment_guard(eta: &MatrixKernel) -> Result<(MomentGuard, f64)> {
    let lambda = assemble(eta).lambda_max()?;
    Ok((guard_for_lambda(lambda), lambda))
}

pub fn guard_for_lambda(lambda: f64) -> MomentGuard {
    if lambda >= 1.0 - LAMBDA_BAND {
        MomentGuard::Reject
    } else if 2.0 * lambda >= 1.0 - LAMBDA_BAND {
        MomentGuard::OkNoCi
    } else {
        MomentGuard::Ok
    }
}
