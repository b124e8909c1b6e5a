//! Nyström realization of `B_κ` and its spectral calculus.
//!
//! Under `h ↔ h′` the Cameron–Martin space is `L²([0,T];R^d)`, and `B_κ` acts
//! by `h′ ↦ ∫ κ(·,s) h′(s) ds`. On the grid that is the block matrix
//! `M = κ·Δ`; the Frobenius norm of `M` equals the quadrature value of
//! `‖κ‖₂`, and the matrix of a symmetric kernel stays symmetric because the
//! weight is uniform.

use nalgebra::{DMatrix, SymmetricEigen, LU};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::MatrixKernel;

/// Every "Λ < 1" gate is evaluated as `Λ < 1 − LAMBDA_BAND`.
pub const LAMBDA_BAND: f64 = 1e-8;
/// Relative pivot size below which `I + M` counts as singular.
pub const SINGULAR_PIVOT: f64 = 1e-14;
/// Eigenvalue floor when square-rooting `I − M_η`.
pub const PSD_FLOOR: f64 = 1e-14;
/// Slack on `I + M ≥ 0` when testing membership in `S₂,₊`.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct HSMatrix {
    grid: TimeGrid,
    dim: usize,
    matrix: DMatrix<f64>,
    symmetric: bool,
}

/// Outcome of a (regularized) determinant evaluation, kept in log domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Det2 {
    Regular { sign: f64, log_modulus: f64 },
    Singular,
}

impl Det2 {
    pub fn is_singular(&self) -> bool {
        matches!(self, Det2::Singular)
    }

    pub fn log_modulus(&self) -> Option<f64> {
        match self {
            Det2::Regular { log_modulus, .. } => Some(*log_modulus),
            Det2::Singular => None,
        }
    }

    /// `+1`, `−1`, or `0` for a singular operator.
    pub fn sign(&self) -> f64 {
        match self {
            Det2::Regular { sign, .. } => *sign,
            Det2::Singular => 0.0,
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Det2::Regular { sign, log_modulus } => sign * log_modulus.exp(),
            Det2::Singular => 0.0,
        }
    }

    /// `|value|`, or an error naming `what` when singular.
    pub fn modulus_or(&self, what: &str) -> Result<f64> {
        match self {
            Det2::Regular { log_modulus, .. } => Ok(log_modulus.exp()),
            Det2::Singular => Err(Error::SingularOperator(format!("{what} is singular"))),
        }
    }
}

/// Flat summary of a kernel: `Λ(B_{η(κ)})`, `det₂(I + B_κ)`, `tr B_κ`, `‖κ‖₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub lambda_max: f64,
    pub det2_sign: i8,
    pub det2_log_modulus: Option<f64>,
    pub trace: f64,
    pub hs_norm: f64,
}

impl HSMatrix {
    pub fn from_matrix(grid: TimeGrid, dim: usize, matrix: DMatrix<f64>, symmetric: bool) -> Result<Self> {
        let kernel = MatrixKernel::from_values(grid, dim, matrix / grid.step(), symmetric)?;
        Ok(assemble(&kernel))
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    #[inline]
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// Hilbert–Schmidt norm, i.e. the Frobenius norm of `M`.
    pub fn hs_norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// `tr M`, which equals `Σ_i tr κ(t_i,t_i) Δ` for the source kernel.
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn transpose(&self) -> Self {
        Self {
            grid: self.grid,
            dim: self.dim,
            matrix: self.matrix.transpose(),
            symmetric: self.symmetric,
        }
    }

    /// Inverse of [`assemble`]: divides by `Δ`.
    pub fn recover_kernel(&self) -> MatrixKernel {
        let values = &self.matrix / self.grid.step();
        if self.symmetric {
            MatrixKernel::symmetrized(self.grid, self.dim, values)
        } else {
            MatrixKernel::raw(self.grid, self.dim, values)
        }
    }

    fn require_symmetric(&self, op: &str) -> Result<()> {
        if self.symmetric {
            Ok(())
        } else {
            Err(Error::PreconditionViolation(format!(
                "{op} needs a self-adjoint operator (kernel in S₂)"
            )))
        }
    }

    /// Ascending eigenvalues of a symmetric `M`.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.require_symmetric("eigenvalues")?;
        let mut ev: Vec<f64> = self.matrix.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    /// `Λ(B) = sup_{‖h‖=1} ⟨Bh,h⟩`.
    pub fn lambda_max(&self) -> Result<f64> {
        Ok(*self.eigenvalues()?.last().expect("non-empty grid"))
    }

    /// `det₂(I + B) = det(I + B)·e^{−tr B}`.
    pub fn det2(&self) -> Det2 {
        regularized_det(&self.matrix)
    }

    /// Fredholm determinant `det(I + B)` for the trace-class case.
    pub fn det(&self) -> Det2 {
        match self.det2() {
            Det2::Regular { sign, log_modulus } => Det2::Regular {
                sign,
                log_modulus: log_modulus + self.trace(),
            },
            Det2::Singular => Det2::Singular,
        }
    }

    /// `inf_{‖h‖=1} ‖(I + B)h‖²`: the smallest eigenvalue of `(I+M)ᵀ(I+M)`.
    pub fn lower_frame_bound(&self) -> f64 {
        let ipm = identity_plus(&self.matrix);
        let gram = ipm.transpose() * &ipm;
        let gram = (&gram + gram.transpose()) * 0.5;
        gram.symmetric_eigenvalues().min()
    }
}

/// `M = κ·Δ`.
pub fn assemble(kernel: &MatrixKernel) -> HSMatrix {
    HSMatrix {
        grid: *kernel.grid(),
        dim: kernel.dim(),
        matrix: kernel.values() * kernel.grid().step(),
        symmetric: kernel.is_symmetric(),
    }
}

pub fn lambda_max(b: &HSMatrix) -> Result<f64> {
    b.lambda_max()
}

pub fn det2(b: &HSMatrix) -> Det2 {
    b.det2()
}

fn identity_plus(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += 1.0;
    }
    out
}

/// Below this relative pivot the LU factors are not trusted to decide
/// singularity and the smallest singular value is consulted instead.
const PIVOT_SUSPECT: f64 = 1e-6;

/// `log |det(I + A)|` with sign, or `Singular` when `I + A` is rank deficient.
///
/// Partial pivoting smears a null direction over several moderate pivots, so a
/// small pivot only triggers the singular-value test `σ_min ≤ 10⁻¹⁴·σ_max`.
fn log_det_identity_plus(a: &DMatrix<f64>) -> Det2 {
    let ipa = identity_plus(a);
    let scale = ipa.amax().max(1.0);
    let lu = LU::new(ipa.clone());
    let u = lu.u();
    let mut sign: f64 = lu.p().determinant();
    let mut log_modulus = 0.0;
    let mut smallest = f64::INFINITY;
    for i in 0..u.nrows() {
        let pivot = u[(i, i)];
        if !pivot.is_finite() || pivot == 0.0 {
            return Det2::Singular;
        }
        smallest = smallest.min(pivot.abs());
        if pivot < 0.0 {
            sign = -sign;
        }
        log_modulus += pivot.abs().ln();
    }
    if smallest <= PIVOT_SUSPECT * scale {
        let sv = ipa.singular_values();
        if sv.min() <= SINGULAR_PIVOT * sv.max().max(1.0) {
            return Det2::Singular;
        }
    }
    Det2::Regular { sign, log_modulus }
}

/// `det₂(I + A)` for a dense matrix `A`.
pub fn regularized_det(a: &DMatrix<f64>) -> Det2 {
    match log_det_identity_plus(a) {
        Det2::Regular { sign, log_modulus } => Det2::Regular {
            sign,
            log_modulus: log_modulus - a.trace(),
        },
        Det2::Singular => Det2::Singular,
    }
}

/// Both routes of `det₂((I+B*)(I+B)) = det₂(I+B)·det₂(I+B*)·e^{−tr B*B}`, plus the
/// kernel route `det₂(I − B_{η(κ)})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductIdentityReport {
    pub product_det2: Det2,
    pub factored_det2: Det2,
    pub eta_det2: Det2,
    /// `|product/factored − 1|`; infinite on a sign or singularity mismatch.
    pub relative_discrepancy: f64,
    /// `|product/eta − 1|`.
    pub eta_relative_discrepancy: f64,
}

fn relative_gap(a: Det2, b: Det2) -> f64 {
    match (a, b) {
        (Det2::Singular, Det2::Singular) => 0.0,
        (
            Det2::Regular { sign: sa, log_modulus: la },
            Det2::Regular { sign: sb, log_modulus: lb },
        ) if sa == sb => (la - lb).exp_m1().abs(),
        _ => f64::INFINITY,
    }
}

pub fn det2_product_identity_check(kernel: &MatrixKernel) -> ProductIdentityReport {
    let b = assemble(kernel);
    let m = b.matrix();
    let mtm = m.transpose() * m;
    // (I+Mᵀ)(I+M) − I
    let product = m + m.transpose() + &mtm;
    let product_det2 = regularized_det(&product);

    let factored_det2 = match (regularized_det(m), regularized_det(&m.transpose())) {
        (
            Det2::Regular { sign: s1, log_modulus: l1 },
            Det2::Regular { sign: s2, log_modulus: l2 },
        ) => Det2::Regular {
            sign: s1 * s2,
            log_modulus: l1 + l2 - mtm.trace(),
        },
        _ => Det2::Singular,
    };

    let eta = assemble(&kernel.eta());
    let eta_det2 = regularized_det(&(-eta.matrix()));

    ProductIdentityReport {
        product_det2,
        factored_det2,
        eta_det2,
        relative_discrepancy: relative_gap(product_det2, factored_det2),
        eta_relative_discrepancy: relative_gap(product_det2, eta_det2),
    }
}

/// `tr B_κ` through the diagonal integral `∫ tr κ(s,s) ds`.
pub fn trace(kernel: &MatrixKernel) -> f64 {
    kernel.diagonal_trace()
}

/// `κ̂` with `B_κ̂ = (I + B_κ)⁻¹ − I`.
pub fn inverse_kernel(kernel: &MatrixKernel) -> Result<MatrixKernel> {
    let b = assemble(kernel);
    if b.det2().is_singular() {
        return Err(Error::SingularOperator("I + B_κ has no inverse".into()));
    }
    let ipm = identity_plus(b.matrix());
    let inv = LU::new(ipm)
        .try_inverse()
        .ok_or_else(|| Error::SingularOperator("I + B_κ has no inverse".into()))?;
    let mut hat = inv;
    for i in 0..hat.nrows() {
        hat[(i, i)] -= 1.0;
    }
    let values = hat / kernel.grid().step();
    Ok(if kernel.is_symmetric() {
        MatrixKernel::symmetrized(*kernel.grid(), kernel.dim(), values)
    } else {
        MatrixKernel::raw(*kernel.grid(), kernel.dim(), values)
    })
}

/// `max(‖(I+M)(I+M̂) − I‖_max, ‖(I+M̂)(I+M) − I‖_max)`.
pub fn inverse_residual(kernel: &MatrixKernel, hat: &MatrixKernel) -> Result<f64> {
    kernel.check_compatible(hat)?;
    let a = identity_plus(assemble(kernel).matrix());
    let b = identity_plus(assemble(hat).matrix());
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let left = (&a * &b - &id).amax();
    let right = (&b * &a - &id).amax();
    Ok(left.max(right))
}

/// `κ_S(η)`: the symmetric kernel with `B_{κ_S} = (I − B_η)^{1/2} − I`.
pub fn kappa_s(eta: &MatrixKernel) -> Result<MatrixKernel> {
    kappa_s_with_band(eta, LAMBDA_BAND)
}

/// [`kappa_s`] with an explicit gate `Λ < 1 − band`. A band of zero only
/// requires `Λ < 1`.
pub fn kappa_s_with_band(eta: &MatrixKernel, band: f64) -> Result<MatrixKernel> {
    if !eta.is_symmetric() {
        return Err(Error::PreconditionViolation("κ_S needs a symmetric η".into()));
    }
    let b = assemble(eta);
    let eig = SymmetricEigen::new(b.matrix().clone());
    let lambda = eig.eigenvalues.max();
    let limit = 1.0 - band;
    if !(lambda < limit) {
        return Err(Error::NotContractive { lambda, limit });
    }
    let scale = eig.eigenvalues.amax().max(1.0);
    let roots = eig
        .eigenvalues
        .map(|v| (1.0 - v).max(PSD_FLOOR * scale).sqrt() - 1.0);
    let v = &eig.eigenvectors;
    let m = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok(MatrixKernel::symmetrized(*eta.grid(), eta.dim(), m / eta.grid().step()))
}

/// `Λ(B_{η(κ)})`, the gate quantity of every change-of-variables identity.
pub fn eta_lambda(kernel: &MatrixKernel) -> f64 {
    assemble(&kernel.eta())
        .lambda_max()
        .expect("η(κ) is symmetric by construction")
}

/// `Λ(B_{η(κ)})`, `det₂(I+B_κ)`, `tr B_κ`, and `‖κ‖₂` for a kernel.
pub fn spectral_summary(kernel: &MatrixKernel) -> SpectralSummary {
    let b = assemble(kernel);
    let det = b.det2();
    SpectralSummary {
        lambda_max: eta_lambda(kernel),
        det2_sign: det.sign() as i8,
        det2_log_modulus: det.log_modulus(),
        trace: b.trace(),
        hs_norm: b.hs_norm(),
    }
}

/// Whether `κ ∈ S₂,₊`, i.e. symmetric with `I + B_κ ≥ 0`.
pub fn in_s2_plus(kernel: &MatrixKernel) -> bool {
    if !kernel.is_symmetric() {
        return false;
    }
    let b = assemble(kernel);
    let min = b.eigenvalues().map(|ev| ev[0]).unwrap_or(f64::NEG_INFINITY);
    1.0 + min >= -MEMBERSHIP_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub eta_distance: f64,
    pub kappa_distance: f64,
    pub first_in_s2_plus: bool,
    pub second_in_s2_plus: bool,
}

impl InjectivityReport {
    /// `‖η(κ₁) − η(κ₂)‖₂ ≤ tol ⇒ ‖κ₁ − κ₂‖₂ ≤ tol·cond`.
    pub fn implication_holds(&self, tol: f64, cond: f64) -> bool {
        self.eta_distance > tol || self.kappa_distance <= tol * cond
    }
}

/// Distances `‖η(κ₁) − η(κ₂)‖₂` and `‖κ₁ − κ₂‖₂` with membership flags, for
/// any pair of kernels.
pub fn injectivity_report(k1: &MatrixKernel, k2: &MatrixKernel) -> Result<InjectivityReport> {
    k1.check_compatible(k2)?;
    Ok(InjectivityReport {
        eta_distance: k1.eta().sub(&k2.eta())?.l2_norm(),
        kappa_distance: k1.sub(k2)?.l2_norm(),
        first_in_s2_plus: in_s2_plus(k1),
        second_in_s2_plus: in_s2_plus(k2),
    })
}

/// [`injectivity_report`] restricted to `S₂,₊`, where `κ ↦ η(κ)` is injective.
pub fn injectivity_witness(k1: &MatrixKernel, k2: &MatrixKernel) -> Result<InjectivityReport> {
    let report = injectivity_report(k1, k2)?;
    if !(report.first_in_s2_plus && report.second_in_s2_plus) {
        return Err(Error::PreconditionViolation(
            "both kernels must be symmetric with I + B_κ ≥ 0".into(),
        ));
    }
    Ok(report)
}

/// Rejects non-square or mismatched matrices before building an operator.
pub fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(invalid(format!("expected a non-empty square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{kernel_zoo, trig_basis};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    fn rank_one(g: TimeGrid, b: f64) -> MatrixKernel {
        kernel_zoo(&format!("rank1:b={b}"), g, 1).unwrap()
    }

    /// Leibniz expansion; independent of any factorization.
    fn leibniz_det(a: &DMatrix<f64>) -> f64 {
        fn go(a: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, sign: f64) -> f64 {
            let n = a.nrows();
            if row == n {
                return sign;
            }
            let mut total = 0.0;
            let mut inversions_before = 0;
            for col in 0..n {
                if used[col] {
                    continue;
                }
                // columns still free to the left of `col` each add one inversion
                let s = if inversions_before % 2 == 0 { sign } else { -sign };
                used[col] = true;
                total += a[(row, col)] * go(a, row + 1, used, s);
                used[col] = false;
                inversions_before += 1;
            }
            total
        }
        go(a, 0, &mut vec![false; a.nrows()], 1.0)
    }

    /// Denman–Beavers iteration for the principal square root.
    fn sqrtm(a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = a.clone();
        let mut z = DMatrix::identity(a.nrows(), a.ncols());
        for _ in 0..60 {
            let yi = y.clone().try_inverse().unwrap();
            let zi = z.clone().try_inverse().unwrap();
            y = (&y + zi) * 0.5;
            z = (&z + yi) * 0.5;
        }
        y
    }

    fn random_kernel(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> MatrixKernel {
        let g = grid(n);
        let nd = n * d;
        let v = DMatrix::from_fn(nd, nd, |_, _| scale * (rng.random::<f64>() - 0.5));
        MatrixKernel::from_values(g, d, v, false).unwrap()
    }

    fn random_eta(rng: &mut ChaCha8Rng, n: usize, d: usize, lambda: f64) -> MatrixKernel {
        let k = random_kernel(rng, n, d, 4.0);
        let sym = MatrixKernel::from_values(*k.grid(), d, k.values() + k.values().transpose(), true).unwrap();
        let ev = assemble(&sym).eigenvalues().unwrap();
        let top = *ev.last().unwrap();
        let sym = if top > 0.0 { sym } else { sym.scaled(-1.0) };
        let top = assemble(&sym).lambda_max().unwrap();
        sym.scaled(lambda / top)
    }

    #[test]
    fn assemble_basic_shapes() {
        let z = MatrixKernel::zeros(grid(6), 2).unwrap();
        assert_eq!(assemble(&z).matrix().amax(), 0.0);

        let v = kernel_zoo("volterra", grid(4), 1).unwrap();
        let m = assemble(&v);
        for i in 0..4 {
            for j in 0..4 {
                let want = if j < i { 0.25 } else { 0.0 };
                assert_eq!(m.matrix()[(i, j)], want);
            }
        }
    }

    #[test]
    fn rank_one_spectrum() {
        let ev = assemble(&rank_one(grid(64), 0.7)).eigenvalues().unwrap();
        assert_relative_eq!(*ev.last().unwrap(), 0.7, max_relative = 1e-12);
        assert!(ev[..63].iter().all(|v| v.abs() < 1e-12));
        assert_relative_eq!(assemble(&rank_one(grid(64), 0.5)).lambda_max().unwrap(), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn lambda_max_needs_symmetry() {
        let v = kernel_zoo("volterra", grid(4), 1).unwrap();
        assert!(matches!(assemble(&v).lambda_max(), Err(Error::PreconditionViolation(_))));
        assert_eq!(assemble(&MatrixKernel::zeros(grid(4), 1).unwrap()).lambda_max().unwrap(), 0.0);
    }

    #[test]
    fn gencv_spectral_facts() {
        let k = kernel_zoo("remark_gencv:b1=-2,b2=-3", grid(128), 1).unwrap();
        assert_relative_eq!(assemble(&k.s()).lambda_max().unwrap(), 6.0, max_relative = 1e-10);
        assert!(eta_lambda(&k).abs() < 1e-10);
        let det = assemble(&k).det2();
        assert_eq!(det.sign(), 1.0);
        assert_relative_eq!(det.value(), 2.0 * 5f64.exp(), max_relative = 1e-10);
        assert_relative_eq!(det.log_modulus().unwrap(), 2f64.ln() + 5.0, max_relative = 1e-12);
    }

    #[test]
    fn det2_rank_one_and_singular() {
        assert_eq!(assemble(&MatrixKernel::zeros(grid(8), 1).unwrap()).det2(), Det2::Regular { sign: 1.0, log_modulus: 0.0 });
        for b in [0.3, -0.5, -2.0] {
            let det = assemble(&rank_one(grid(128), b)).det2();
            assert_relative_eq!(det.value(), (1.0 + b) * (-b).exp(), max_relative = 1e-10);
        }
        assert!(assemble(&rank_one(grid(128), -1.0)).det2().is_singular());
        assert!(assemble(&kernel_zoo("remark_gencv:b1=-1,b2=-1", grid(128), 1).unwrap()).det2().is_singular());
        assert!(matches!(inverse_kernel(&rank_one(grid(32), -1.0)), Err(Error::SingularOperator(_))));
    }

    #[test]
    fn det2_matches_leibniz_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let k = random_kernel(&mut rng, 8, 1, 6.0);
            let m = assemble(&k);
            let ipm = DMatrix::identity(8, 8) + m.matrix();
            let oracle = leibniz_det(&ipm) * (-m.trace()).exp();
            assert_relative_eq!(m.det2().value(), oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn product_identity() {
        let zero = det2_product_identity_check(&MatrixKernel::zeros(grid(5), 1).unwrap());
        assert_eq!(zero.relative_discrepancy, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let k = random_kernel(&mut rng, 8, 1, 6.0);
            let r = det2_product_identity_check(&k);
            assert!(r.relative_discrepancy <= 1e-10, "{r:?}");
            assert!(r.eta_relative_discrepancy <= 1e-10, "{r:?}");
            // oracle for the left side: det((I+M)ᵀ(I+M))·e^{−tr(M+Mᵀ+MᵀM)}
            let m = assemble(&k).matrix().clone();
            let ipm = DMatrix::identity(8, 8) + &m;
            let prod = leibniz_det(&ipm).powi(2) * (-(2.0 * m.trace() + m.norm_squared())).exp();
            assert_relative_eq!(r.product_det2.value(), prod, max_relative = 1e-10);
        }
        let b = 0.3;
        let r = det2_product_identity_check(&rank_one(grid(64), b));
        let want = (1.0 + b).powi(2) * (-(2.0 * b + b * b)).exp();
        assert_relative_eq!(r.product_det2.value(), want, max_relative = 1e-10);
        assert!(r.relative_discrepancy <= 1e-10);
    }

    #[test]
    fn traces() {
        let g = grid(200);
        assert_eq!(trace(&MatrixKernel::zeros(g, 1).unwrap()), 0.0);
        assert_relative_eq!(trace(&rank_one(g, 0.8)), 0.8, max_relative = 1e-12);
        let c = 2.0;
        let k = kernel_zoo(&format!("const_phi:c={c}"), g, 1).unwrap();
        assert!((trace(&k) - c / 2.0).abs() <= c * g.step());
        assert!((trace(&k) - assemble(&k).trace()).abs() < 1e-12);
    }

    #[test]
    fn inverse_kernels() {
        let g = grid(64);
        assert!(inverse_kernel(&MatrixKernel::zeros(g, 1).unwrap()).unwrap().is_zero());
        let b = 0.3;
        let hat = inverse_kernel(&rank_one(g, b)).unwrap();
        let want = rank_one(g, -b / (1.0 + b));
        assert!((hat.values() - want.values()).amax() < 1e-10);
        assert!(hat.is_symmetric());
        let k = kernel_zoo("expdiag:p=[0.5,-0.5]", g, 2).unwrap();
        let hat = inverse_kernel(&k).unwrap();
        assert!(inverse_residual(&k, &hat).unwrap() < 1e-10);
        let back = inverse_kernel(&hat).unwrap();
        assert!((back.values() - k.values()).amax() < 1e-10 * k.values().amax());
    }

    #[test]
    fn square_root_kernels() {
        let g = grid(64);
        assert!(kappa_s(&MatrixKernel::zeros(g, 1).unwrap()).unwrap().values().amax() < 1e-14);
        let ks = kappa_s(&rank_one(g, 0.5)).unwrap();
        let want = rank_one(g, 0.5f64.sqrt() - 1.0);
        assert!((ks.values() - want.values()).amax() < 1e-10);
        assert!(matches!(kappa_s(&rank_one(g, 1.0)), Err(Error::NotContractive { .. })));
        assert!(kappa_s(&kernel_zoo("volterra", g, 1).unwrap()).is_err());
        // a band of zero admits Λ just below one
        assert!(kappa_s_with_band(&rank_one(g, 1.0 - 1e-9), 0.0).is_ok());
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in 0..6 {
            let (n, d) = [(16, 1), (8, 2), (32, 1), (12, 3), (24, 2), (64, 1)][k];
            let eta = random_eta(&mut rng, n, d, 0.9);
            assert_relative_eq!(assemble(&eta).lambda_max().unwrap(), 0.9, max_relative = 1e-10);
            let ks = kappa_s(&eta).unwrap();
            assert!(ks.eta().sub(&eta).unwrap().l2_norm() <= 1e-8 * eta.l2_norm());
            let hat = inverse_kernel(&ks).unwrap();
            assert!(inverse_residual(&ks, &hat).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn kappa_s_agrees_with_independent_square_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eta = random_eta(&mut rng, 20, 1, 0.8);
        let n = 20;
        let root = sqrtm(&(DMatrix::identity(n, n) - assemble(&eta).matrix()));
        let other = HSMatrix::from_matrix(*eta.grid(), 1, root - DMatrix::identity(n, n), false)
            .unwrap()
            .recover_kernel();
        let other = other.into_symmetric().unwrap();
        let ks = kappa_s(&eta).unwrap();
        let r = injectivity_witness(&ks, &other).unwrap();
        assert!(r.kappa_distance <= 1e-8, "{r:?}");
        assert!(r.eta_distance <= 1e-8);
        assert!(r.implication_holds(1e-8, 1.0));
    }

    #[test]
    fn injectivity_fails_outside_s2_plus() {
        let g = grid(256);
        let same = injectivity_report(&rank_one(g, 0.2), &rank_one(g, 0.2)).unwrap();
        assert_eq!((same.eta_distance, same.kappa_distance), (0.0, 0.0));
        let b = 2f64.sqrt() - 1.0;
        let (k1, k2) = crate::zoo::remark_pair(g, 1, b, 1.0).unwrap();
        let r = injectivity_report(&k1, &k2).unwrap();
        assert!(r.eta_distance <= 1e-10);
        assert_relative_eq!(r.kappa_distance, (8.0 - 4.0 * 2f64.sqrt()).sqrt(), max_relative = 1e-8);
        assert!(!r.second_in_s2_plus);
        assert!(!r.implication_holds(1e-8, 10.0));
        assert!(matches!(injectivity_witness(&k1, &k2), Err(Error::PreconditionViolation(_))));
    }

    #[test]
    fn spectral_summary_serializes_flat() {
        let s = spectral_summary(&rank_one(grid(32), 0.3));
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        for key in ["lambda_max", "det2_sign", "det2_log_modulus", "trace", "hs_norm"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_relative_eq!(s.hs_norm, 0.3, max_relative = 1e-12);
    }

    #[test]
    fn orthonormal_family_on_grid() {
        let g = grid(100);
        for n in 1..5 {
            for m in 1..5 {
                let ip: f64 = trig_basis(&g, n).iter().zip(trig_basis(&g, m)).map(|(a, b)| a * b).sum::<f64>() * g.step();
                let want = if n == m { 1.0 } else { 0.0 };
                assert!((ip - want).abs() <= 10.0 * g.step());
            }
        }
    }

    fn arb_kernel() -> impl Strategy<Value = MatrixKernel> {
        (2usize..9, 1usize..3, any::<u64>()).prop_map(|(n, d, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_kernel(&mut rng, n, d, 3.0)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn eta_assembles_to_polynomial_in_m(k in arb_kernel()) {
            let m = assemble(&k).matrix().clone();
            let want = -(&m + m.transpose() + m.transpose() * &m);
            let got = assemble(&k.eta()).matrix().clone();
            prop_assert!((got - &want).amax() <= 1e-10 * want.amax().max(1.0));
        }

        #[test]
        fn assemble_commutes_with_adjoint(k in arb_kernel()) {
            let adj = assemble(&k.adjoint());
            prop_assert_eq!(adj.matrix(), &assemble(&k).matrix().transpose());
            let b = assemble(&k);
            prop_assert!((b.hs_norm() - k.l2_norm()).abs() <= 1e-12 * k.l2_norm().max(1.0));
            let back = b.recover_kernel();
            prop_assert!((back.values() - k.values()).amax() <= 1e-12 * k.values().amax().max(1.0));
        }

        #[test]
        fn frame_bound_is_one_minus_lambda(k in arb_kernel()) {
            let lambda = eta_lambda(&k);
            prop_assume!(lambda < 1.0 - 1e-6);
            let frame = assemble(&k).lower_frame_bound();
            prop_assert!((frame - (1.0 - lambda)).abs() <= 1e-8);
        }

        #[test]
        fn inverse_is_two_sided(k in arb_kernel()) {
            let b = assemble(&k);
            prop_assume!(b.det2().log_modulus().map(|l| l > -10.0).unwrap_or(false));
            let hat = inverse_kernel(&k).unwrap();
            prop_assert!(inverse_residual(&k, &hat).unwrap() <= 1e-10 * b.matrix().amax().max(1.0).powi(2));
        }

        #[test]
        fn det2_is_permutation_invariant(k in arb_kernel(), shift in 1usize..8) {
            let b = assemble(&k);
            let det = b.det2();
            prop_assume!(!det.is_singular());
            let n = k.grid().n_steps();
            let d = k.dim();
            // cyclic shift of the time blocks, a similarity by a permutation
            let idx = |r: usize| ((r / d + shift) % n) * d + r % d;
            let p = DMatrix::from_fn(n * d, n * d, |r, c| b.matrix()[(idx(r), idx(c))]);
            let shuffled = regularized_det(&p);
            prop_assert_eq!(shuffled.sign(), det.sign());
            prop_assert!((shuffled.log_modulus().unwrap() - det.log_modulus().unwrap()).abs() <= 1e-10);
        }

        #[test]
        fn kappa_s_lands_in_s2_plus(n in 2usize..12, seed in any::<u64>(), lambda in 0.01..0.99f64, neg in 0.0..5.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_kernel(&mut rng, n, 1, 2.0);
            // subtract a positive semidefinite part to reach strongly negative spectra
            let eta = random_eta(&mut rng, n, 1, lambda).sub(&k.c().scaled(neg)).unwrap();
            let ks = kappa_s(&eta).unwrap();
            prop_assert!(ks.is_symmetric());
            prop_assert!(in_s2_plus(&ks));
            prop_assert!(ks.eta().sub(&eta).unwrap().l2_norm() <= 1e-8 * eta.l2_norm().max(1.0));
        }
    }
}
