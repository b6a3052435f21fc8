//! Anisotropic Gaussian correlation and correlation-matrix factorization.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest nugget tried before a factorization is declared failed.
pub const MAX_NUGGET: f64 = 1e-3;
/// Nugget used when none is configured.
pub const DEFAULT_NUGGET: f64 = 1e-8;

/// Positive per-dimension scales `phi` of the Gaussian correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub phi: Vec<f64>,
}

impl KernelParams {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if let Some(bad) = phi.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Config(format!("kernel scale must be positive, got {bad}")));
        }
        Ok(KernelParams { phi })
    }

    pub fn from_log10(log_phi: &[f64]) -> Self {
        KernelParams {
            phi: log_phi.iter().map(|v| 10f64.powf(*v)).collect(),
        }
    }

    pub fn log10(&self) -> Vec<f64> {
        self.phi.iter().map(|p| p.log10()).collect()
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }
}

#[inline]
pub(crate) fn weighted_sq_dist<'a>(
    a: impl Iterator<Item = &'a f64>,
    b: impl Iterator<Item = &'a f64>,
    weights: &[f64],
) -> f64 {
    a.zip(b)
        .zip(weights)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum()
}

/// `exp(-sum_i phi_i (w_i - w2_i)^2)`.
pub fn correlation(w: &[f64], w2: &[f64], params: &KernelParams) -> Result<f64> {
    if w.len() != w2.len() || w.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: if w.len() != params.dim() { w.len() } else { w2.len() },
        });
    }
    Ok((-weighted_sq_dist(w.iter(), w2.iter(), &params.phi)).exp())
}

/// Dense correlation matrix over the rows of `features`, with `nugget` on the
/// diagonal. Symmetric by construction: only the lower triangle is computed.
pub fn correlation_matrix(features: &DMatrix<f64>, weights: &[f64], nugget: f64) -> DMatrix<f64> {
    let n = features.nrows();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        c[(i, i)] = 1.0 + nugget;
        for j in 0..i {
            let v = (-weighted_sq_dist(features.row(i).iter(), features.row(j).iter(), weights)).exp();
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Cross-correlations between query rows and training rows (`m x n`).
/// The nugget is part of the correlation at zero lag, so a query that
/// coincides exactly with a training row gets `1 + nugget` there.
pub(crate) fn cross_correlation(
    queries: &DMatrix<f64>,
    train: &DMatrix<f64>,
    weights: &[f64],
    nugget: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(queries.nrows(), train.nrows(), |i, j| {
        if queries.row(i) == train.row(j) {
            1.0 + nugget
        } else {
            (-weighted_sq_dist(queries.row(i).iter(), train.row(j).iter(), weights)).exp()
        }
    })
}

/// A correlation matrix together with its Cholesky factor and the nugget
/// that made the factorization succeed.
#[derive(Clone, Debug)]
pub struct Factorized {
    pub matrix: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub nugget: f64,
}

/// Nugget schedule: the requested value, then x10 steps up to [`MAX_NUGGET`].
/// A zero request continues from [`DEFAULT_NUGGET`].
pub(crate) fn nugget_schedule(start: f64) -> Vec<f64> {
    let mut out = vec![start];
    let mut v = if start > 0.0 { start * 10.0 } else { DEFAULT_NUGGET };
    while v <= MAX_NUGGET * (1.0 + 1e-9) {
        out.push(v);
        v *= 10.0;
    }
    out
}

pub(crate) fn factorize_weighted(
    features: &DMatrix<f64>,
    weights: &[f64],
    nugget: f64,
) -> Result<Factorized> {
    let base = correlation_matrix(features, weights, 0.0);
    let mut last = nugget;
    for nug in nugget_schedule(nugget) {
        last = nug;
        let mut m = base.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += nug;
        }
        if let Some(chol) = m.clone().cholesky() {
            if chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok(Factorized {
                    matrix: m,
                    chol,
                    nugget: nug,
                });
            }
        }
    }
    Err(Error::NotPositiveDefinite { nugget: last })
}

/// Builds `C + nugget I` for the rows of `x` and factorizes it, escalating
/// the nugget x10 (up to [`MAX_NUGGET`]) while the factorization fails.
pub fn build_correlation_matrix(
    x: &DMatrix<f64>,
    params: &KernelParams,
    nugget: f64,
) -> Result<Factorized> {
    if x.ncols() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: x.ncols(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(nugget >= 0.0) {
        return Err(Error::Config(format!("nugget must be >= 0, got {nugget}")));
    }
    factorize_weighted(x, &params.phi, nugget)
}
