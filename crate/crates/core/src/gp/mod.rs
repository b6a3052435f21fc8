//! Gaussian-process regression on quantitative inputs.
//!
//! The correlation between two inputs is `exp(-sum_i phi_i (x_i - x'_i)^2)`.
//! Training maximizes the log-likelihood with the constant mean `mu` and
//! process variance `sigma2` replaced by their closed-form estimates, so the
//! optimizer only searches over `log10(phi)`.

mod kernel;
mod model;

pub use kernel::{
    build_correlation_matrix, correlation, correlation_matrix, Factorized, KernelParams,
    DEFAULT_NUGGET, MAX_NUGGET,
};
pub use model::{
    fit_gp, neg_log_likelihood, neg_log_likelihood_with_nugget, GpConfig, GpModel, OutputScaling,
    Prediction, VARIANCE_FLOOR,
};
pub(crate) use model::{lhs_starts, Conditioned};
