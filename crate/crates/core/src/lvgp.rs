//! Latent-variable GP: a GP whose single categorical input (the source id)
//! is embedded as a learned point in a 2-D latent plane.
//!
//! A query `(x, level)` becomes `w = [x_norm, z1(level), z2(level)]` and the
//! correlation adds the plain squared latent distance to the weighted
//! quantitative distance:
//!
//! `c(w, w') = exp(-sum_i phi_i (x_i - x'_i)^2 - |z - z'|^2)`
//!
//! The anchor level is pinned at the origin and the second level has
//! `z2 = 0`, which removes the translation and rotation freedom of the plane.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_records, Standardizer};
use crate::error::{Error, Result};
use crate::gp::{lhs_starts, Conditioned, GpConfig, KernelParams, OutputScaling, Prediction};
use crate::optim::{multi_start, Bounds, TraceSummary};

/// Half-width of the latent box: every coordinate lies in `[-3, 3]`.
pub const LATENT_BOUND: f64 = 3.0;

/// Largest latent distance from an origin-anchored reference, `3 sqrt(2)`.
pub const MAX_LATENT_DISTANCE: f64 = LATENT_BOUND * std::f64::consts::SQRT_2;

/// One 2-D latent point per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMap {
    /// Anchor first, then the remaining levels in label order.
    pub levels: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub anchor_level: String,
}

impl LatentMap {
    /// Builds the level order used for fitting: anchor first, others sorted.
    pub fn ordered_levels(labels: &[String], anchor: &str) -> Result<Vec<String>> {
        let mut rest: Vec<String> = labels.iter().filter(|l| *l != anchor).cloned().collect();
        rest.sort();
        rest.dedup();
        if !labels.iter().any(|l| l == anchor) {
            return Err(Error::UnknownLevel {
                level: anchor.to_string(),
                known: rest,
            });
        }
        let mut levels = vec![anchor.to_string()];
        levels.extend(rest);
        Ok(levels)
    }

    /// Number of free coordinates for `n_levels` levels under the anchor constraints.
    pub fn free_count(n_levels: usize) -> usize {
        match n_levels {
            0 | 1 => 0,
            n => 1 + 2 * (n - 2),
        }
    }

    /// Places the free coordinates: level 1 gets `(t0, 0)`, level k >= 2 gets
    /// `(t_{2k-3}, t_{2k-2})`.
    pub fn from_free(levels: Vec<String>, free: &[f64]) -> Self {
        let mut coords = vec![[0.0, 0.0]; levels.len()];
        if levels.len() > 1 {
            coords[1] = [free[0], 0.0];
            for k in 2..levels.len() {
                coords[k] = [free[2 * k - 3], free[2 * k - 2]];
            }
        }
        LatentMap {
            anchor_level: levels[0].clone(),
            levels,
            coords,
        }
    }

    pub fn index_of(&self, level: &str) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| Error::UnknownLevel {
                level: level.to_string(),
                known: self.levels.clone(),
            })
    }

    pub fn coord(&self, level: &str) -> Result<[f64; 2]> {
        Ok(self.coords[self.index_of(level)?])
    }

    /// True when the anchor, rotation and box constraints all hold.
    pub fn satisfies_constraints(&self) -> bool {
        let anchored = self.coords.first() == Some(&[0.0, 0.0]) && self.levels[0] == self.anchor_level;
        let rotation = self.coords.len() < 2 || self.coords[1][1] == 0.0;
        let boxed = self
            .coords
            .iter()
            .flatten()
            .all(|v| (-LATENT_BOUND..=LATENT_BOUND).contains(v));
        anchored && rotation && boxed
    }
}

/// Appends the latent coordinates of `level` to `x`.
pub fn embed(x: &[f64], level: &str, latent: &LatentMap) -> Result<Vec<f64>> {
    let z = latent.coord(level)?;
    let mut w = x.to_vec();
    w.extend_from_slice(&z);
    Ok(w)
}

fn embed_rows(x_norm: &DMatrix<f64>, idx: &[usize], coords: &[[f64; 2]]) -> DMatrix<f64> {
    let m = x_norm.ncols();
    DMatrix::from_fn(x_norm.nrows(), m + 2, |i, j| {
        if j < m {
            x_norm[(i, j)]
        } else {
            coords[idx[i]][j - m]
        }
    })
}

/// Training settings: the quantitative optimizer settings plus the anchor
/// choice and the number of restarts for the joint search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LvgpConfig {
    pub gp: GpConfig,
    /// Defaults to the fusion reference source when not set.
    pub anchor_level: Option<String>,
    /// Keep every latent point at the origin (only `phi` is optimized).
    pub collapse_latent: bool,
}

impl Default for LvgpConfig {
    fn default() -> Self {
        LvgpConfig {
            gp: GpConfig {
                restarts: 12,
                ..GpConfig::default()
            },
            anchor_level: None,
            collapse_latent: false,
        }
    }
}

/// Trained latent-variable GP.
#[derive(Clone, Debug)]
pub struct LvgpModel {
    pub params: KernelParams,
    pub latent: LatentMap,
    pub input: Standardizer,
    pub output: OutputScaling,
    pub x_train: DMatrix<f64>,
    pub s_train: Vec<String>,
    pub y_train: DVector<f64>,
    pub seed: u64,
    pub trace: Option<TraceSummary>,
    pub(crate) core: Conditioned,
}

fn level_indices(labels: &[String], latent: &LatentMap) -> Result<Vec<usize>> {
    labels.iter().map(|l| latent.index_of(l)).collect()
}

fn weights_for(params: &KernelParams) -> Vec<f64> {
    let mut w = params.phi.clone();
    w.extend_from_slice(&[1.0, 1.0]);
    w
}

impl LvgpModel {
    /// Conditions an LVGP at fixed kernel scales and latent coordinates.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        x: &DMatrix<f64>,
        s: &[String],
        y: &DVector<f64>,
        input: Standardizer,
        output: OutputScaling,
        params: KernelParams,
        latent: LatentMap,
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
        let idx = level_indices(s, &latent)?;
        let features = embed_rows(&input.transform(x)?, &idx, &latent.coords);
        let core = Conditioned::new(features, &output.standardize(y), weights_for(&params), nugget)?;
        Ok(LvgpModel {
            params,
            latent,
            input,
            output,
            x_train: x.clone(),
            s_train: s.to_vec(),
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

    pub fn levels(&self) -> &[String] {
        &self.latent.levels
    }

    pub fn neg_log_likelihood(&self) -> f64 {
        self.core.neg_log_likelihood()
    }

    /// The embedded training matrix `[x_norm, z(s)]` the model was conditioned on.
    pub fn training_features(&self) -> &DMatrix<f64> {
        &self.core.features
    }

    /// Re-embeds the training rows from the stored latent map.
    pub fn reembed_training(&self) -> Result<DMatrix<f64>> {
        let idx = level_indices(&self.s_train, &self.latent)?;
        Ok(embed_rows(&self.input.transform(&self.x_train)?, &idx, &self.latent.coords))
    }

    /// Source-specific prediction at quantitative inputs `xq` with labels `sq`.
    pub fn predict(&self, xq: &DMatrix<f64>, sq: &[String]) -> Result<Prediction> {
        if sq.len() != xq.nrows() {
            return Err(Error::DimensionMismatch {
                expected: xq.nrows(),
                found: sq.len(),
            });
        }
        let idx = level_indices(sq, &self.latent)?;
        let q = embed_rows(&self.input.transform(xq)?, &idx, &self.latent.coords);
        let (m, v) = self.core.predict(&q);
        let s2 = self.output.scale * self.output.scale;
        Ok(Prediction {
            mean: m.map(|z| self.output.restore(z)),
            variance: v.map(|z| z * s2),
        })
    }

    /// Normalized latent distance of every level from `ref_level`.
    pub fn dissimilarity(&self, ref_level: &str) -> Result<BTreeMap<String, f64>> {
        dissimilarity(&self.latent, ref_level)
    }

    /// One row per level, sorted by label, with D measured from `ref_level`
    /// (the anchor when `None`).
    pub fn export_latent(&self, ref_level: Option<&str>) -> Result<Vec<LatentRow>> {
        export_latent(&self.latent, ref_level.unwrap_or(&self.latent.anchor_level))
    }
}

/// `D(l) = |z(l) - z(ref)| / (3 sqrt 2)`. Values above 1 are possible when
/// the reference is not at the origin and are reported as is.
pub fn dissimilarity(latent: &LatentMap, ref_level: &str) -> Result<BTreeMap<String, f64>> {
    let zr = latent.coord(ref_level)?;
    Ok(latent
        .levels
        .iter()
        .zip(&latent.coords)
        .map(|(l, z)| (l.clone(), latent_distance(*z, zr) / MAX_LATENT_DISTANCE))
        .collect())
}

pub fn latent_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub level: String,
    pub z1: f64,
    pub z2: f64,
    #[serde(rename = "D")]
    pub d: f64,
}

pub fn export_latent(latent: &LatentMap, ref_level: &str) -> Result<Vec<LatentRow>> {
    let d = dissimilarity(latent, ref_level)?;
    let mut rows: Vec<LatentRow> = latent
        .levels
        .iter()
        .zip(&latent.coords)
        .map(|(l, z)| LatentRow {
            level: l.clone(),
            z1: z[0],
            z2: z[1],
            d: d[l],
        })
        .collect();
    rows.sort_by(|a, b| a.level.cmp(&b.level));
    Ok(rows)
}

pub fn write_latent_csv(rows: &[LatentRow], path: &Path) -> Result<()> {
    let header: Vec<String> = ["level", "z1", "z2", "D"].iter().map(|s| s.to_string()).collect();
    write_records(
        path,
        &header,
        rows.iter().map(|r| {
            vec![
                r.level.clone(),
                r.z1.to_string(),
                r.z2.to_string(),
                r.d.to_string(),
            ]
        }),
    )
}

pub fn read_latent_csv(path: &Path) -> Result<Vec<LatentRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Trains an LVGP by joint multi-start maximization of the profiled
/// likelihood over `[log10(phi); free latent coordinates]`.
pub fn fit_lvgp(
    x: &DMatrix<f64>,
    s: &[String],
    y: &DVector<f64>,
    config: &LvgpConfig,
) -> Result<LvgpModel> {
    config.gp.validate()?;
    let n = x.nrows();
    if s.len() != n || y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if s.len() != n { s.len() } else { y.len() },
        });
    }
    if n < 3 {
        return Err(Error::TooFewRows { needed: 3, found: n });
    }
    if let Some(bad) = s.iter().find(|l| l.is_empty()) {
        return Err(Error::UnknownLevel {
            level: bad.clone(),
            known: vec![],
        });
    }
    let mut distinct: Vec<String> = s.to_vec();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::TooFewLevels {
            needed: 2,
            found: distinct.len(),
        });
    }
    let anchor = config.anchor_level.clone().unwrap_or_else(|| distinct[0].clone());
    let levels = LatentMap::ordered_levels(s, &anchor)?;
    let idx: Vec<usize> = s
        .iter()
        .map(|l| levels.iter().position(|v| v == l).expect("level present"))
        .collect();

    let input = Standardizer::fit(x)?;
    let output = OutputScaling::fit(y);
    let x_norm = input.transform(x)?;
    let targets = output.standardize(y);
    let m = x.ncols();
    let n_free = if config.collapse_latent {
        0
    } else {
        LatentMap::free_count(levels.len())
    };

    let phi_bounds = config.gp.phi_bounds(m);
    let bounds = phi_bounds
        .clone()
        .concat(&Bounds::uniform(n_free, -LATENT_BOUND, LATENT_BOUND));

    let mut rng = ChaCha8Rng::seed_from_u64(config.gp.seed);
    let mut starts = lhs_starts(&phi_bounds, config.gp.restarts, &mut rng);
    for st in starts.iter_mut() {
        for _ in 0..n_free {
            st.push(rng.random_range(-LATENT_BOUND..=LATENT_BOUND));
        }
    }

    let collapsed_free = vec![0.0; LatentMap::free_count(levels.len())];
    let coords_of = |theta: &[f64]| -> Vec<[f64; 2]> {
        let free = if n_free == 0 {
            &collapsed_free[..]
        } else {
            &theta[m..]
        };
        LatentMap::from_free(levels.clone(), free).coords
    };
    let objective = |theta: &[f64]| {
        let params = KernelParams::from_log10(&theta[..m]);
        let features = embed_rows(&x_norm, &idx, &coords_of(theta));
        Conditioned::new(features, &targets, weights_for(&params), config.gp.nugget)
            .map(|c| c.neg_log_likelihood())
            .unwrap_or(f64::INFINITY)
    };
    let (best, outcomes) = multi_start(objective, &starts, &bounds, &config.gp.nm_options())?;
    let theta = &outcomes[best].x;
    let params = KernelParams::from_log10(&theta[..m]);
    let latent = LatentMap {
        anchor_level: anchor,
        levels: levels.clone(),
        coords: coords_of(theta),
    };
    LvgpModel::from_parts(
        x,
        s,
        y,
        input,
        output,
        params,
        latent,
        config.gp.nugget,
        config.gp.seed,
        Some(TraceSummary::from_outcomes(best, &outcomes)),
    )
}
