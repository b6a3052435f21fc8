mod common;

use hetfuse::gp::{fit_gp, neg_log_likelihood, neg_log_likelihood_with_nugget, GpConfig, KernelParams};
use hetfuse::optim::latin_hypercube;
use hetfuse::optim::Bounds;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn nll_three_point_oracle() {
    let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.9, 0.5, 0.2, 0.8, 0.6]);
    let y = DVector::from_vec(vec![1.3, -0.4, 0.7]);
    let phi = [1.7, 0.6];
    let p = KernelParams::new(phi.to_vec()).unwrap();
    let got = neg_log_likelihood(&p, &x, &y).unwrap();
    let want = common::dense_nll(&x, &y, &phi, 1e-8);
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");
}

#[test]
fn cholesky_succeeds_on_random_designs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(2..15);
        let d = rng.random_range(1..4);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let lp: Vec<f64> = (0..d).map(|_| rng.random_range(-6.0..4.0)).collect();
        let f = hetfuse::gp::build_correlation_matrix(&x, &KernelParams::from_log10(&lp), 1e-8).unwrap();
        assert!(f.nugget <= hetfuse::gp::MAX_NUGGET);
    }
}

fn gp_draw(x: &DMatrix<f64>, phi: &[f64], rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = x.nrows();
    let c = DMatrix::from_fn(n, n, |i, j| {
        let s: f64 = (0..x.ncols()).map(|k| phi[k] * (x[(i, k)] - x[(j, k)]).powi(2)).sum();
        (-s).exp() + if i == j { 1e-8 } else { 0.0 }
    });
    let l = c.cholesky().unwrap().l();
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    l * z
}

#[test]
fn optimizer_dominates_true_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts = latin_hypercube(40, &Bounds::uniform(2, 0.0, 1.0), &mut rng);
    let raw = DMatrix::from_fn(40, 2, |i, j| pts[i][j]);
    let y = gp_draw(&raw, &[3.0, 8.0], &mut rng);
    let model = fit_gp(&raw, &y, &GpConfig::default()).unwrap();
    // Compare in the model's own standardized coordinates.
    let xs = model.input.transform(&raw).unwrap();
    let ys = model.output.standardize(&y);
    let true_phi: Vec<f64> = [3.0, 8.0]
        .iter()
        .zip(&model.input.stds)
        .map(|(p, s)| p * s * s)
        .collect();
    let at_truth = neg_log_likelihood(&KernelParams::new(true_phi).unwrap(), &xs, &ys).unwrap();
    assert!(model.neg_log_likelihood() <= at_truth + 1e-9);
}

#[test]
fn sine_fit_matches_grid_search() {
    let x = DMatrix::from_fn(12, 1, |i, _| i as f64 / 11.0);
    let y = x.map(|v: f64| (2.0 * std::f64::consts::PI * v).sin()).column(0).into_owned();
    let model = fit_gp(&x, &y, &GpConfig::default()).unwrap();

    let xs = model.input.transform(&x).unwrap();
    let ys = model.output.standardize(&y);
    let grid_best = (0..=1000)
        .map(|k| -6.0 + 10.0 * k as f64 / 1000.0)
        .filter_map(|lp| neg_log_likelihood(&KernelParams::from_log10(&[lp]), &xs, &ys).ok())
        .fold(f64::INFINITY, f64::min);
    assert!(model.neg_log_likelihood() <= grid_best + 1e-3);

    let q = DMatrix::from_fn(101, 1, |i, _| i as f64 / 100.0);
    let p = model.predict(&q).unwrap();
    let rmse = (0..101)
        .map(|i| (p.mean[i] - (2.0 * std::f64::consts::PI * q[(i, 0)]).sin()).powi(2))
        .sum::<f64>()
        / 101.0;
    assert!(rmse.sqrt() < 0.05, "rmse {}", rmse.sqrt());
}

#[test]
fn far_query_reverts_to_mean_with_inflated_variance() {
    let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.4, 1.0]);
    let y = DVector::from_vec(vec![1.0, 2.0, 0.5]);
    let model = hetfuse::gp::GpModel::from_params(&x, &y, KernelParams::new(vec![2.0]).unwrap(), 1e-8).unwrap();
    let p = model.predict(&DMatrix::from_row_slice(1, 1, &[1e3])).unwrap();
    assert!((p.mean[0] - model.output.restore(model.mu())).abs() < 1e-12);

    // sigma2 (1 + 1 / (1' C^-1 1)), from the explicit inverse.
    let xs = model.input.transform(&x).unwrap();
    let c = DMatrix::from_fn(3, 3, |i, j| (-2.0 * (xs[(i, 0)] - xs[(j, 0)]).powi(2)).exp() + if i == j { 1e-8 } else { 0.0 });
    let one = DVector::from_element(3, 1.0);
    let denom = (one.transpose() * c.try_inverse().unwrap() * &one)[0];
    let want = model.sigma2() * (1.0 + 1e-8 + 1.0 / denom) * model.output.scale.powi(2);
    assert!((p.variance[0] - want).abs() <= 1e-9 * want);
}

#[test]
fn nll_errors() {
    let p = KernelParams::new(vec![1.0]).unwrap();
    let x = DMatrix::from_row_slice(1, 1, &[0.0]);
    assert!(neg_log_likelihood(&p, &x, &DVector::from_vec(vec![1.0])).is_err());
    let x2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    assert!(neg_log_likelihood_with_nugget(&p, &x2, &DVector::from_vec(vec![1.0, 2.0]), 1e-8).is_err());
}
