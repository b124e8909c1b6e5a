//! Batches of Wiener increments and the binary replay format.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::rng::SampleStreams;
use crate::error::{invalid, Result};
use crate::grid::TimeGrid;

/// Paths per work unit when streaming large batches.
pub const CHUNK: usize = 1024;

const DUMP_MAGIC: &[u8; 4] = b"WPB1";

/// `M` sampled paths; column `m` holds the increments `ΔW[m][i][a]` laid out
/// over `(i, a)`, each `~ N(0, Δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    grid: TimeGrid,
    dim: usize,
    seed: u64,
    first_index: u64,
    increments: DMatrix<f64>,
}

impl PathBatch {
    pub fn from_increments(grid: TimeGrid, dim: usize, seed: u64, first_index: u64, increments: DMatrix<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension d must be at least 1"));
        }
        if increments.nrows() != grid.n_steps() * dim {
            return Err(invalid(format!(
                "increments need {} rows, got {}",
                grid.n_steps() * dim,
                increments.nrows()
            )));
        }
        Ok(Self {
            grid,
            dim,
            seed,
            first_index,
            increments,
        })
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
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Global index of the first path, for batches cut out of a larger run.
    #[inline]
    pub fn first_index(&self) -> u64 {
        self.first_index
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.increments.ncols()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn increments(&self) -> &DMatrix<f64> {
        &self.increments
    }

    pub(crate) fn with_increments(&self, increments: DMatrix<f64>) -> Self {
        Self {
            increments,
            ..self.clone()
        }
    }

    /// `W[m][k] = Σ_{i<k} ΔW[m][i]` at the left nodes, so `W[m][0] = 0`.
    pub fn path_values(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut w = DMatrix::zeros(self.increments.nrows(), self.len());
        for (mut out, inc) in w.column_iter_mut().zip(self.increments.column_iter()) {
            let mut acc = vec![0.0; d];
            for k in 0..self.grid.n_steps() {
                for a in 0..d {
                    out[k * d + a] = acc[a];
                    acc[a] += inc[k * d + a];
                }
            }
        }
        w
    }

    /// `w(T)` for every path, as a `d × M` matrix.
    pub fn terminal_values(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut out = DMatrix::zeros(d, self.len());
        for (m, inc) in self.increments.column_iter().enumerate() {
            for k in 0..self.grid.n_steps() {
                for a in 0..d {
                    out[(a, m)] += inc[k * d + a];
                }
            }
        }
        out
    }

    /// `w(t_k)` at the left node `k` (or `w(T)` for `k = N`), as `d × M`.
    pub fn values_at(&self, k: usize) -> DMatrix<f64> {
        let d = self.dim;
        let k = k.min(self.grid.n_steps());
        let mut out = DMatrix::zeros(d, self.len());
        for (m, inc) in self.increments.column_iter().enumerate() {
            for i in 0..k {
                for a in 0..d {
                    out[(a, m)] += inc[i * d + a];
                }
            }
        }
        out
    }

    /// Writes the replay dump: magic `WPB1`, then `T` (f64), `N`, `d`, `M`,
    /// `seed` (u64), then `M·N·d` increments ordered `[m][i][a]`, all
    /// little-endian.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(DUMP_MAGIC)?;
        out.write_all(&self.grid.horizon().to_le_bytes())?;
        out.write_all(&(self.grid.n_steps() as u64).to_le_bytes())?;
        out.write_all(&(self.dim as u64).to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for v in self.increments.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(invalid("not a path-batch dump (bad magic)"));
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> Result<[u8; 8]> {
            input.read_exact(&mut word)?;
            Ok(word)
        };
        let horizon = f64::from_le_bytes(next(&mut input)?);
        let n = u64::from_le_bytes(next(&mut input)?) as usize;
        let dim = u64::from_le_bytes(next(&mut input)?) as usize;
        let m = u64::from_le_bytes(next(&mut input)?) as usize;
        let seed = u64::from_le_bytes(next(&mut input)?);
        let grid = TimeGrid::new(horizon, n)?;
        let mut data = vec![0.0; n * dim * m];
        for v in data.iter_mut() {
            *v = f64::from_le_bytes(next(&mut input)?);
        }
        Self::from_increments(grid, dim, seed, 0, DMatrix::from_vec(n * dim, m, data))
    }
}

/// Paths `first..first+count` of the run keyed by `seed`.
pub fn sample_range(grid: TimeGrid, dim: usize, seed: u64, first: u64, count: usize) -> PathBatch {
    let nd = grid.n_steps() * dim;
    let streams = SampleStreams::new(seed);
    let mut increments = DMatrix::zeros(nd, count);
    increments
        .as_mut_slice()
        .par_chunks_mut(nd)
        .enumerate()
        .for_each(|(k, col)| streams.fill_normal(first + k as u64, grid.step(), col));
    PathBatch {
        grid,
        dim,
        seed,
        first_index: first,
        increments,
    }
}

pub fn sample_paths(grid: TimeGrid, dim: usize, samples: usize, seed: u64) -> Result<PathBatch> {
    if samples == 0 {
        return Err(invalid("sample count M must be at least 1"));
    }
    if dim == 0 {
        return Err(invalid("dimension d must be at least 1"));
    }
    Ok(sample_range(grid, dim, seed, 0, samples))
}

/// Streams `samples` paths through `per_chunk` in chunks of [`CHUNK`] and
/// concatenates the per-path outputs in sample order.
pub fn map_paths<T, F>(grid: TimeGrid, dim: usize, samples: usize, seed: u64, per_chunk: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&PathBatch) -> Result<Vec<T>> + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let first = c * CHUNK;
            let count = CHUNK.min(samples - first);
            let batch = sample_range(grid, dim, seed, first as u64, count);
            per_chunk(&batch)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}
