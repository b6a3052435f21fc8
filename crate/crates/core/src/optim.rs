//! Derivative-free bounded minimization used for likelihood training.
//!
//! Each restart is an independent Nelder-Mead descent projected onto the
//! parameter box. Restarts run in parallel; the winner is picked by a
//! sequential scan so the result does not depend on completion order.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed box `[lower_i, upper_i]` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        debug_assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        Bounds { lower, upper }
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Bounds::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn concat(mut self, other: &Bounds) -> Self {
        self.lower.extend_from_slice(&other.lower);
        self.upper.extend_from_slice(&other.upper);
        self
    }
}

/// Latin hypercube design of `n` points in the box, one point per stratum
/// in every coordinate, jittered uniformly within the stratum.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, bounds: &Bounds, rng: &mut R) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        // Fisher-Yates on the strata for this coordinate.
        for i in (1..n).rev() {
            let k = rng.random_range(0..=i);
            perm.swap(i, k);
        }
        for (i, p) in points.iter_mut().enumerate() {
            let u: f64 = rng.random();
            let t = (perm[i] as f64 + u) / n as f64;
            p[j] = bounds.lower[j] + t * bounds.width(j);
        }
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 500,
            initial_step: 0.1,
            f_tol: 1e-10,
            x_tol: 1e-8,
        }
    }
}

/// Result of one local descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub start: Vec<f64>,
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Minimizes `f` from `start` with a Nelder-Mead simplex whose trial points
/// are projected onto `bounds`. Non-finite objective values count as +inf.
pub fn nelder_mead<F>(f: F, start: &[f64], bounds: &Bounds, opts: &NelderMeadOptions) -> RestartOutcome
where
    F: Fn(&[f64]) -> f64,
{
    let d = start.len();
    let evals = std::cell::Cell::new(0usize);
    // Trial points past the budget are rejected without evaluation.
    let eval = |x: &[f64]| {
        if evals.get() >= opts.max_evals {
            return f64::INFINITY;
        }
        evals.set(evals.get() + 1);
        sanitize(f(x))
    };

    let mut x0 = start.to_vec();
    bounds.clamp(&mut x0);
    if d == 0 {
        let v = eval(&x0);
        return RestartOutcome {
            start: start.to_vec(),
            x: x0,
            value: v,
            evals: evals.get(),
        };
    }

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(x0.clone());
    for i in 0..d {
        let mut v = x0.clone();
        let step = opts.initial_step * bounds.width(i);
        v[i] = if v[i] + step <= bounds.upper[i] {
            v[i] + step
        } else {
            v[i] - step
        };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let point = |base: &[f64], dir: &[f64], t: f64| -> Vec<f64> {
        let mut p: Vec<f64> = base.iter().zip(dir).map(|(b, c)| b + t * (c - b)).collect();
        bounds.clamp(&mut p);
        p
    };

    while evals.get() < opts.max_evals {
        // Stable sort keeps the earlier vertex first on ties.
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let f_spread = values[d] - values[0];
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if values[0].is_finite()
            && f_spread.is_finite()
            && f_spread <= opts.f_tol * (1.0 + values[0].abs())
            && x_spread <= opts.x_tol.max(1e-3 * opts.initial_step)
        {
            break;
        }
        if x_spread == 0.0 {
            break;
        }

        let mut centroid = vec![0.0; d];
        for v in &simplex[..d] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / d as f64;
            }
        }

        // Reflection is x_c + alpha (x_c - x_worst), i.e. a step from the
        // worst vertex through the centroid.
        let reflected = point(&simplex[d], &centroid, 1.0 + alpha);
        let f_r = eval(&reflected);
        if f_r < values[0] {
            let expanded = point(&simplex[d], &centroid, 1.0 + alpha * gamma);
            let f_e = eval(&expanded);
            if f_e < f_r {
                simplex[d] = expanded;
                values[d] = f_e;
            } else {
                simplex[d] = reflected;
                values[d] = f_r;
            }
            continue;
        }
        if f_r < values[d - 1] {
            simplex[d] = reflected;
            values[d] = f_r;
            continue;
        }
        let (contracted, f_c) = if f_r < values[d] {
            let c = point(&centroid, &reflected, rho);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = point(&centroid, &simplex[d], rho);
            let fc = eval(&c);
            (c, fc)
        };
        if f_c < values[d].min(f_r) {
            simplex[d] = contracted;
            values[d] = f_c;
            continue;
        }
        for i in 1..=d {
            let shrunk = point(&simplex[0], &simplex[i], sigma);
            values[i] = eval(&shrunk);
            simplex[i] = shrunk;
        }
    }

    let best = (0..=d).fold(0, |b, i| if values[i] < values[b] { i } else { b });
    RestartOutcome {
        start: start.to_vec(),
        x: simplex[best].clone(),
        value: values[best],
        evals: evals.get(),
    }
}

/// Runs one descent per start point (in parallel) and returns all outcomes
/// plus the index of the best. Ties go to the lowest restart index.
pub fn multi_start<F>(
    f: F,
    starts: &[Vec<f64>],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> Result<(usize, Vec<RestartOutcome>)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let outcomes: Vec<RestartOutcome> = starts
        .par_iter()
        .map(|s| nelder_mead(&f, s, bounds, opts))
        .collect();
    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if !o.value.is_finite() {
            continue;
        }
        match best {
            Some(b) if outcomes[b].value <= o.value => {}
            _ => best = Some(i),
        }
    }
    best.map(|b| (b, outcomes))
        .ok_or(Error::OptimizerFailed)
}

/// Compact record of a multi-start run, stored in model artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub restarts: usize,
    pub best_restart: usize,
    pub best_value: f64,
    pub total_evals: usize,
    pub restart_values: Vec<Option<f64>>,
}

impl TraceSummary {
    pub fn from_outcomes(best: usize, outcomes: &[RestartOutcome]) -> Self {
        TraceSummary {
            restarts: outcomes.len(),
            best_restart: best,
            best_value: outcomes[best].value,
            total_evals: outcomes.iter().map(|o| o.evals).sum(),
            restart_values: outcomes
                .iter()
                .map(|o| o.value.is_finite().then_some(o.value))
                .collect(),
        }
    }
}
