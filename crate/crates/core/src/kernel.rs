//! Matrix-valued kernels sampled on `grid × grid` and the algebra on them.
//!
//! A kernel `κ: [0,T]² → R^{d×d}` is stored as one dense `(N·d) × (N·d)` matrix
//! whose entry at row `i·d + a`, column `j·d + b` is `κᵃ_b(t_i, t_j)`. In this
//! layout the adjoint kernel `κ*(t,s) = κ(s,t)†` is the plain transpose, and
//! every `u`-integral is a matrix product scaled by `Δ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;

/// Absolute tolerance for the `κ(t,s)† = κ(s,t)` claim.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixKernel {
    grid: TimeGrid,
    dim: usize,
    values: DMatrix<f64>,
    symmetric: bool,
}

impl MatrixKernel {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let n = grid.n_steps() * dim;
        Ok(Self {
            grid,
            dim,
            values: DMatrix::zeros(n, n),
            symmetric: true,
        })
    }

    /// Samples `f(i, j, a, b) = κᵃ_b(t_i, t_j)` over every node pair.
    pub fn from_fn<F>(grid: TimeGrid, dim: usize, symmetric: bool, f: F) -> Result<Self>
    where
        F: Fn(usize, usize, usize, usize) -> f64,
    {
        check_dim(dim)?;
        let n = grid.n_steps() * dim;
        let values = DMatrix::from_fn(n, n, |r, c| f(r / dim, c / dim, r % dim, c % dim));
        Self::from_values(grid, dim, values, symmetric)
    }

    /// Wraps tabulated values, validating shape, finiteness and the symmetry claim.
    pub fn from_values(grid: TimeGrid, dim: usize, values: DMatrix<f64>, symmetric: bool) -> Result<Self> {
        check_dim(dim)?;
        let n = grid.n_steps() * dim;
        if values.nrows() != n || values.ncols() != n {
            return Err(invalid(format!(
                "kernel values must be {n}x{n} for N={} and d={dim}, got {}x{}",
                grid.n_steps(),
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("kernel values must be finite"));
        }
        let kernel = Self {
            grid,
            dim,
            values,
            symmetric,
        };
        if symmetric {
            let asym = kernel.asymmetry();
            if asym > SYMMETRY_TOL {
                return Err(Error::PreconditionViolation(format!(
                    "kernel flagged symmetric but max |κ(t,s)† − κ(s,t)| = {asym:e}"
                )));
            }
            return Ok(Self::symmetrized(grid, dim, kernel.values));
        }
        Ok(kernel)
    }

    /// Builds a kernel flagged symmetric after averaging with its adjoint, which
    /// removes roundoff asymmetry from products like `κ*κ`.
    pub(crate) fn symmetrized(grid: TimeGrid, dim: usize, values: DMatrix<f64>) -> Self {
        let values = (&values + values.transpose()) * 0.5;
        Self {
            grid,
            dim,
            values,
            symmetric: true,
        }
    }

    pub(crate) fn raw(grid: TimeGrid, dim: usize, values: DMatrix<f64>) -> Self {
        Self {
            grid,
            dim,
            values,
            symmetric: false,
        }
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Side length `N·d` of the block matrix.
    #[inline]
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    #[inline]
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.values[(i * self.dim + a, j * self.dim + b)]
    }

    /// The `d×d` matrix `κ(t_i, t_j)`.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.values
            .view((i * self.dim, j * self.dim), (self.dim, self.dim))
            .into_owned()
    }

    /// `max_{i,j} |κ(t_i,t_j)† − κ(t_j,t_i)|` over all entries.
    pub fn asymmetry(&self) -> f64 {
        let n = self.size();
        let mut worst = 0.0_f64;
        for c in 0..n {
            for r in (c + 1)..n {
                worst = worst.max((self.values[(r, c)] - self.values[(c, r)]).abs());
            }
        }
        worst
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Declares the kernel a member of `S₂` if it passes the symmetry check.
    pub fn into_symmetric(self) -> Result<Self> {
        Self::from_values(self.grid, self.dim, self.values, true)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            dim: self.dim,
            values: &self.values * factor,
            symmetric: self.symmetric,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            grid: self.grid,
            dim: self.dim,
            values: &self.values + &other.values,
            symmetric: self.symmetric && other.symmetric,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    pub(crate) fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(invalid("kernels live on different grids"));
        }
        if self.dim != other.dim {
            return Err(invalid(format!("kernel dimensions differ: {} vs {}", self.dim, other.dim)));
        }
        Ok(())
    }

    /// Quadrature value of `‖κ‖₂ = (∫∫|κ(t,s)|² ds dt)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        self.values.norm() * self.grid.step()
    }

    /// `κ*(t,s) = κ(s,t)†`.
    pub fn adjoint(&self) -> Self {
        Self {
            grid: self.grid,
            dim: self.dim,
            values: self.values.transpose(),
            symmetric: self.symmetric,
        }
    }

    /// `(a∘b)(t,s) = ∫ a(t,u) b(u,s) du`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self::raw(self.grid, self.dim, &self.values * &other.values * self.grid.step()))
    }

    /// `∫₀ᵀ tr κ(s,s) ds` by the node sum.
    pub fn diagonal_trace(&self) -> f64 {
        self.values.trace() * self.grid.step()
    }

    /// `η(κ) = −{κ + κ* + κ*∘κ}`.
    pub fn eta(&self) -> Self {
        let k = &self.values;
        let quad = k.transpose() * k * self.grid.step();
        let values = -(k + k.transpose() + quad);
        Self::symmetrized(self.grid, self.dim, values)
    }

    /// `s(κ) = −{κ + κ*}`.
    pub fn s(&self) -> Self {
        let values = -(&self.values + self.values.transpose());
        Self::symmetrized(self.grid, self.dim, values)
    }

    /// `c(κ)(t,s) = ∫ κ(u,t)† κ(u,s) du`, the kernel of `B_κ* B_κ`.
    pub fn c(&self) -> Self {
        let values = self.values.transpose() * &self.values * self.grid.step();
        Self::symmetrized(self.grid, self.dim, values)
    }

    /// `c(κ;x)(t,s) = ∫ (κ(u,s)†x) ⊗ (κ(u,t)†x) du`. Summing over an
    /// orthonormal basis of `R^d` recovers [`MatrixKernel::c`].
    pub fn c_along(&self, x: &[f64]) -> Result<Self> {
        if x.len() != self.dim {
            return Err(invalid(format!(
                "direction has length {} but kernel dimension is {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("direction must be finite"));
        }
        let n = self.grid.n_steps();
        let d = self.dim;
        // row u of `proj` is (κ(t_u, ·)† x) laid out over (j, b)
        let proj = DMatrix::from_fn(n, n * d, |u, col| {
            (0..d).map(|c| x[c] * self.values[(u * d + c, col)]).sum::<f64>()
        });
        let values = proj.transpose() * proj * self.grid.step();
        Ok(Self::symmetrized(self.grid, d, values))
    }

    /// Applies `κ` to a vector laid out over `(j, b)`: `Σ_j κ(t_i,t_j) v_j`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.values * v
    }
}

/// `c(κ)` or `c(κ;x)` depending on whether a direction is given.
pub fn c_kernels(kappa: &MatrixKernel, x: Option<&[f64]>) -> Result<MatrixKernel> {
    match x {
        Some(x) => kappa.c_along(x),
        None => Ok(kappa.c()),
    }
}

/// `κ_φ(t,s) = ∫_s^T φ(t,u) du`, discretized by the inclusive tail sum
/// `Σ_{u ≥ j} φ(t_i, t_u) Δ`.
pub fn kappa_from_phi(phi: &MatrixKernel) -> MatrixKernel {
    let grid = *phi.grid();
    let n = grid.n_steps();
    let d = phi.dim();
    let step = grid.step();
    let src = phi.values();
    let mut out = DMatrix::zeros(n * d, n * d);
    for row in 0..n * d {
        for b in 0..d {
            let mut acc = 0.0;
            for u in (0..n).rev() {
                acc += src[(row, u * d + b)] * step;
                out[(row, u * d + b)] = acc;
            }
        }
    }
    MatrixKernel::raw(grid, d, out)
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(invalid("dimension d must be at least 1"))
    } else {
        Ok(())
    }
}
