use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{cross_correlation, factorize_weighted, KernelParams, DEFAULT_NUGGET};
use crate::dataset::Standardizer;
use crate::error::{Error, Result};
use crate::optim::{latin_hypercube, multi_start, Bounds, NelderMeadOptions, TraceSummary};

/// Smallest process variance used when profiling; keeps the likelihood
/// finite for constant responses.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Optimizer budget and numerical settings for GP training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub restarts: usize,
    pub max_evals: usize,
    pub log10_phi_lower: f64,
    pub log10_phi_upper: f64,
    pub nugget: f64,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            restarts: 8,
            max_evals: 500,
            log10_phi_lower: -6.0,
            log10_phi_upper: 4.0,
            nugget: DEFAULT_NUGGET,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub(crate) fn phi_bounds(&self, dim: usize) -> Bounds {
        Bounds::uniform(dim, self.log10_phi_lower, self.log10_phi_upper)
    }

    pub(crate) fn nm_options(&self) -> NelderMeadOptions {
        NelderMeadOptions {
            max_evals: self.max_evals,
            ..Default::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_evals == 0 {
            return Err(Error::Config("restarts and max_evals must be positive".into()));
        }
        if !(self.log10_phi_lower < self.log10_phi_upper) {
            return Err(Error::Config("empty log10(phi) box".into()));
        }
        if !(self.nugget >= 0.0) {
            return Err(Error::Config("nugget must be >= 0".into()));
        }
        Ok(())
    }
}

/// Affine output scaling: `standardized = (y - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub center: f64,
    pub scale: f64,
}

impl OutputScaling {
    /// Mean and population standard deviation; a constant response keeps scale 1.
    pub fn fit(y: &DVector<f64>) -> Self {
        let n = y.len() as f64;
        let center = y.sum() / n;
        let sd = (y.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if sd > 1e-12 * center.abs().max(f64::MIN_POSITIVE) && sd > 0.0 {
            sd
        } else {
            1.0
        };
        OutputScaling { center, scale }
    }

    pub fn standardize(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.center) / self.scale)
    }

    pub fn restore(&self, z: f64) -> f64 {
        z * self.scale + self.center
    }
}

/// Predictive means and variances, one entry per query row.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

impl Prediction {
    pub fn std_dev(&self) -> DVector<f64> {
        self.variance.map(f64::sqrt)
    }
}

/// A GP conditioned on feature rows at fixed correlation weights, with the
/// constant mean and process variance profiled out in closed form.
#[derive(Clone, Debug)]
pub(crate) struct Conditioned {
    pub features: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub nugget: f64,
    pub mu: f64,
    pub sigma2: f64,
    chol: Cholesky<f64, Dyn>,
    /// C^-1 (y - mu 1)
    alpha: DVector<f64>,
    /// L^-1 1
    l_inv_one: DVector<f64>,
    one_cinv_one: f64,
    log_det: f64,
    quad: f64,
}

impl Conditioned {
    pub fn new(
        features: DMatrix<f64>,
        targets: &DVector<f64>,
        weights: Vec<f64>,
        nugget: f64,
    ) -> Result<Self> {
        let n = features.nrows();
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: targets.len(),
            });
        }
        let fact = factorize_weighted(&features, &weights, nugget)?;
        let chol = fact.chol;
        let ones = DVector::from_element(n, 1.0);
        let l = chol.l_dirty();
        let l_inv_one = l
            .solve_lower_triangular(&ones)
            .ok_or(Error::NotPositiveDefinite { nugget: fact.nugget })?;
        let l_inv_y = l
            .solve_lower_triangular(targets)
            .ok_or(Error::NotPositiveDefinite { nugget: fact.nugget })?;
        let one_cinv_one = l_inv_one.dot(&l_inv_one);
        let mu = l_inv_one.dot(&l_inv_y) / one_cinv_one;
        let l_inv_resid = &l_inv_y - &l_inv_one * mu;
        let quad = l_inv_resid.dot(&l_inv_resid);
        let sigma2 = (quad / n as f64).max(VARIANCE_FLOOR);
        let resid = targets.map(|v| v - mu);
        let alpha = chol.solve(&resid);
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Conditioned {
            features,
            weights,
            nugget: fact.nugget,
            mu,
            sigma2,
            chol,
            alpha,
            l_inv_one,
            one_cinv_one,
            log_det,
            quad,
        })
    }

    /// Negative profiled log-likelihood.
    pub fn neg_log_likelihood(&self) -> f64 {
        let n = self.features.nrows() as f64;
        0.5 * n * (2.0 * std::f64::consts::PI * self.sigma2).ln()
            + 0.5 * self.log_det
            + 0.5 * self.quad / self.sigma2
    }

    /// Mean and variance in standardized output units. Exact at training rows.
    pub fn predict(&self, queries: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
        let r = cross_correlation(queries, &self.features, &self.weights, self.nugget);
        let mean = (&r * &self.alpha).map(|v| v + self.mu);
        let l = self.chol.l_dirty();
        let mut variance = DVector::zeros(queries.nrows());
        for i in 0..queries.nrows() {
            let ri = r.row(i).transpose();
            let v = l
                .solve_lower_triangular(&ri)
                .expect("factor has a positive diagonal");
            let explained = v.dot(&v);
            let mean_corr = 1.0 - self.l_inv_one.dot(&v);
            let prior = 1.0 + self.nugget;
            let var = self.sigma2 * (prior - explained + mean_corr * mean_corr / self.one_cinv_one);
            variance[i] = var.max(0.0);
        }
        (mean, variance)
    }
}

/// Negative profiled log-likelihood of `y` under a GP on the rows of `x`:
/// `n/2 ln(2 pi s2) + 1/2 ln|C| + (y - mu 1)' C^-1 (y - mu 1) / (2 s2)` with
/// `mu` and `s2` at their closed-form maximizers. `x` and `y` are used as
/// given (no standardization). The nugget starts at [`DEFAULT_NUGGET`].
pub fn neg_log_likelihood(params: &KernelParams, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    neg_log_likelihood_with_nugget(params, x, y, DEFAULT_NUGGET)
}

pub fn neg_log_likelihood_with_nugget(
    params: &KernelParams,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    nugget: f64,
) -> Result<f64> {
    if x.nrows() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            found: x.nrows(),
        });
    }
    if x.ncols() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: x.ncols(),
        });
    }
    let c = Conditioned::new(x.clone(), y, params.phi.clone(), nugget)?;
    let v = c.neg_log_likelihood();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLikelihood {
            params: params.phi.clone(),
        })
    }
}

/// Trained GP surrogate over quantitative inputs.
///
/// `mu` and `sigma2` are in standardized output units; predictions are
/// returned in the original units.
#[derive(Clone, Debug)]
pub struct GpModel {
    pub params: KernelParams,
    pub input: Standardizer,
    pub output: OutputScaling,
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub seed: u64,
    pub trace: Option<TraceSummary>,
    pub(crate) core: Conditioned,
}

impl GpModel {
    /// Conditions a GP on `(x, y)` at fixed kernel scales, without training.
    pub fn from_params(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        params: KernelParams,
        nugget: f64,
    ) -> Result<Self> {
        let input = Standardizer::fit(x)?;
        let output = OutputScaling::fit(y);
        Self::assemble(x, y, input, output, params, nugget, 0, None)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        input: Standardizer,
        output: OutputScaling,
        params: KernelParams,
        nugget: f64,
        seed: u64,
        trace: Option<TraceSummary>,
    ) -> Result<Self> {
        if params.dim() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                found: params.dim(),
            });
        }
        let features = input.transform(x)?;
        let targets = output.standardize(y);
        let core = Conditioned::new(features, &targets, params.phi.clone(), nugget)?;
        Ok(GpModel {
            params,
            input,
            output,
            x_train: x.clone(),
            y_train: y.clone(),
            seed,
            trace,
            core,
        })
    }

    pub fn mu(&self) -> f64 {
        self.core.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.core.sigma2
    }

    pub fn nugget(&self) -> f64 {
        self.core.nugget
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }

    /// Negative log-likelihood of the standardized training data at the stored parameters.
    pub fn neg_log_likelihood(&self) -> f64 {
        self.core.neg_log_likelihood()
    }

    /// Predicts at raw (unstandardized) query inputs.
    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<Prediction> {
        let q = self.input.transform(xq)?;
        Ok(self.predict_features(&q))
    }

    /// Predicts at queries already expressed in this model's normalized input space.
    pub fn predict_normalized(&self, xq_norm: &DMatrix<f64>) -> Result<Prediction> {
        if xq_norm.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: xq_norm.ncols(),
            });
        }
        Ok(self.predict_features(xq_norm))
    }

    /// Predictive mean in standardized output units at normalized inputs.
    pub(crate) fn predict_standardized_mean(&self, xq_norm: &DMatrix<f64>) -> DVector<f64> {
        let r = cross_correlation(xq_norm, &self.core.features, &self.core.weights, self.core.nugget);
        (&r * &self.core.alpha).map(|v| v + self.core.mu)
    }

    fn predict_features(&self, q: &DMatrix<f64>) -> Prediction {
        let (m, v) = self.core.predict(q);
        let s2 = self.output.scale * self.output.scale;
        Prediction {
            mean: m.map(|z| self.output.restore(z)),
            variance: v.map(|z| z * s2),
        }
    }
}

/// Multi-start starting points over a box: a Latin hypercube design.
pub(crate) fn lhs_starts(bounds: &Bounds, restarts: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    latin_hypercube(restarts, bounds, rng)
}

/// Trains a GP by multi-start maximization of the profiled likelihood over
/// `log10(phi)`. Inputs are z-scored and outputs centered/scaled internally.
pub fn fit_gp(x: &DMatrix<f64>, y: &DVector<f64>, config: &GpConfig) -> Result<GpModel> {
    config.validate()?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, found: n });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    let input = Standardizer::fit(x)?;
    let output = OutputScaling::fit(y);
    let features = input.transform(x)?;
    let targets = output.standardize(y);
    let dim = x.ncols();

    let bounds = config.phi_bounds(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts = lhs_starts(&bounds, config.restarts, &mut rng);
    let objective = |theta: &[f64]| {
        let weights = KernelParams::from_log10(theta).phi;
        Conditioned::new(features.clone(), &targets, weights, config.nugget)
            .map(|c| c.neg_log_likelihood())
            .unwrap_or(f64::INFINITY)
    };
    let (best, outcomes) = multi_start(objective, &starts, &bounds, &config.nm_options())?;
    let params = KernelParams::from_log10(&outcomes[best].x);
    let trace = TraceSummary::from_outcomes(best, &outcomes);
    GpModel::assemble(x, y, input, output, params, config.nugget, config.seed, Some(trace))
}
