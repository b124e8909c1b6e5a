//! Sample statistics with a fixed summation order.

use serde::{Deserialize, Serialize};

/// Pairwise summation; the order depends only on the slice length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&sq) / (n - 1) as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Monte Carlo mean with standard error; the error is absent when the second
/// moment of the sampled quantity is known to be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: Option<f64>,
    pub n_samples: usize,
    pub ci_valid: bool,
}

impl MCEstimate {
    pub fn from_samples(values: &[f64], ci_valid: bool) -> Self {
        let n = values.len();
        let m = mean(values);
        let std_error = ci_valid.then(|| (variance(values) / n as f64).sqrt());
        Self {
            mean: m,
            std_error,
            n_samples: n,
            ci_valid,
        }
    }

    /// A known value carried as an estimate with zero error.
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: Some(0.0),
            n_samples: 0,
            ci_valid: true,
        }
    }

    /// Multiplies by a deterministic constant.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            std_error: self.std_error.map(|s| s * factor.abs()),
            ..self.clone()
        }
    }
}

/// Means of `groups` contiguous, equally sized slices (remainder dropped).
pub fn group_means(values: &[f64], groups: usize) -> Vec<f64> {
    let size = values.len() / groups.max(1);
    if size == 0 {
        return vec![mean(values)];
    }
    values.chunks_exact(size).take(groups).map(mean).collect()
}
