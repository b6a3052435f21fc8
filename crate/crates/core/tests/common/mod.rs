#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Profiled negative log-likelihood evaluated the slow way: explicit
/// correlation matrix, LU determinant and explicit inverse.
pub fn dense_nll(x: &DMatrix<f64>, y: &DVector<f64>, phi: &[f64], nugget: f64) -> f64 {
    let n = x.nrows();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..x.ncols() {
                let d = x[(i, k)] - x[(j, k)];
                s += phi[k] * d * d;
            }
            c[(i, j)] = (-s).exp() + if i == j { nugget } else { 0.0 };
        }
    }
    let inv = c.clone().try_inverse().expect("invertible");
    let det = c.determinant();
    let one = DVector::from_element(n, 1.0);
    let mu = (one.transpose() * &inv * y)[0] / (one.transpose() * &inv * &one)[0];
    let r = y - &one * mu;
    let quad = (r.transpose() * &inv * &r)[0];
    let s2 = (quad / n as f64).max(1e-12);
    0.5 * n as f64 * (2.0 * std::f64::consts::PI * s2).ln() + 0.5 * det.ln() + quad / (2.0 * s2)
}

/// Condition number of the correlation matrix (with nugget).
pub fn condition(x: &DMatrix<f64>, phi: &[f64], nugget: f64) -> f64 {
    let n = x.nrows();
    let c = DMatrix::from_fn(n, n, |i, j| {
        let s: f64 = (0..x.ncols()).map(|k| phi[k] * (x[(i, k)] - x[(j, k)]).powi(2)).sum();
        (-s).exp() + if i == j { nugget } else { 0.0 }
    });
    let e = c.symmetric_eigenvalues();
    e.max() / e.min()
}

/// `|pred - y| <= tol * max(|y|, std(y))` for every row.
pub fn interpolates(pred: &DVector<f64>, y: &DVector<f64>, tol: f64) -> bool {
    let n = y.len() as f64;
    let mean = y.sum() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    pred.iter()
        .zip(y.iter())
        .all(|(p, t)| (p - t).abs() <= tol * t.abs().max(sd))
}

pub fn std_dev(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// The generating hidden map rewritten in normalized coordinates:
/// `A_n = diag(1/s_r) A diag(s_s)`, `b_n = (A m_s + b - m_r) / s_r`.
pub fn normalized_hidden_map(
    hidden: &hetfuse::benchmarks::HiddenMap,
    source: &hetfuse::dataset::SourceDataset,
    ref_gp: &hetfuse::gp::GpModel,
    ref_id: &str,
) -> hetfuse::imc::LinearMap {
    let src = hetfuse::dataset::Standardizer::fit(&source.x).unwrap();
    let (mr, sr) = (&ref_gp.input.means, &ref_gp.input.stds);
    let a = DMatrix::from_fn(hidden.a.nrows(), hidden.a.ncols(), |i, j| hidden.a[(i, j)] * src.stds[j] / sr[i]);
    let ms = DVector::from_vec(src.means.clone());
    let shifted = &hidden.a * ms + &hidden.b;
    let b = DVector::from_fn(hidden.b.len(), |i, _| (shifted[i] - mr[i]) / sr[i]);
    hetfuse::imc::LinearMap {
        source_id: source.source_id.clone(),
        ref_id: ref_id.to_string(),
        a,
        b,
        loss: f64::NAN,
        source_standardizer: src,
    }
}
