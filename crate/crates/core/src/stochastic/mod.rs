//! Monte Carlo engine over discretized Wiener paths.

pub mod functionals;
pub mod paths;
pub mod rng;

pub use functionals::{
    apply_transformation, cm_exponent, cm_trace_term, cm_transform, exp_q_moment_guard, guard_for_lambda,
    h_functionals, quadratic_form, wiener_integral, CmExponent, MomentGuard, TestFunctional,
};
pub use paths::{map_paths, sample_paths, sample_range, PathBatch, CHUNK};
pub use rng::{derive_seed, SampleStreams};
