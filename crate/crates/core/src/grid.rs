//! Uniform left-endpoint discretization of `[0, T]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `N` cells of width `Δ = T/N`; nodes are the left endpoints `t_i = iΔ`.
///
/// Left endpoints put the Volterra indicator's diagonal at zero and keep every
/// stochastic sum non-anticipating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    step: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive and finite, got {horizon}")));
        }
        if n_steps < 2 {
            return Err(invalid(format!("n_steps must be at least 2, got {n_steps}")));
        }
        Ok(Self {
            horizon,
            n_steps,
            step: horizon / n_steps as f64,
        })
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Quadrature weight `Δ`.
    #[inline]
    pub fn step(&self) -> f64 {
        self.step
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    /// Cell midpoint `(i + ½)Δ`.
    #[inline]
    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.step
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_steps).map(|i| self.node(i)).collect()
    }

    /// Left node index at or below `t`, clamped to the grid.
    pub fn index_at(&self, t: f64) -> usize {
        let k = (t / self.step + 1e-9).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_steps)
        }
    }
}

/// Convenience constructor mirroring [`TimeGrid::new`].
pub fn make_grid(horizon: f64, n_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, n_steps)
}
