//! Input mapping calibration.
//!
//! Each non-reference source gets an affine map `x_ref = A x_s + b` between
//! normalized input spaces. The map is chosen so that the reference GP,
//! evaluated at the mapped source inputs, reproduces the source's own
//! responses; the mean squared mismatch is minimized with a real-coded
//! genetic algorithm.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{check_shared_output, FusedDataset, SourceDataset, Standardizer};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, GpConfig, GpModel};

/// Affine map from a source's normalized inputs to the reference's.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub source_id: String,
    pub ref_id: String,
    /// `d_ref x d_s`
    pub a: DMatrix<f64>,
    /// length `d_ref`
    pub b: DVector<f64>,
    /// Mean squared mismatch on the calibration rows, in standardized output units.
    pub loss: f64,
    /// z-score statistics of the source's calibration inputs.
    pub source_standardizer: Standardizer,
}

impl LinearMap {
    pub fn identity(source_id: &str, ref_id: &str, dim: usize) -> Self {
        LinearMap {
            source_id: source_id.to_string(),
            ref_id: ref_id.to_string(),
            a: DMatrix::identity(dim, dim),
            b: DVector::zeros(dim),
            loss: 0.0,
            source_standardizer: Standardizer::identity(dim),
        }
    }

    pub fn d_ref(&self) -> usize {
        self.a.nrows()
    }

    pub fn d_source(&self) -> usize {
        self.a.ncols()
    }

    fn from_genes(genes: &[f64], d_ref: usize, d_s: usize) -> (DMatrix<f64>, DVector<f64>) {
        let a = DMatrix::from_row_slice(d_ref, d_s, &genes[..d_ref * d_s]);
        let b = DVector::from_column_slice(&genes[d_ref * d_s..]);
        (a, b)
    }

    /// Maps raw source inputs: standardize with the source statistics, then apply `A x + b`.
    pub fn map_raw(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        apply_map(self, &self.source_standardizer.transform(xs)?)
    }
}

/// Rows `x` of `xs_norm` become `A x + b`.
pub fn apply_map(map: &LinearMap, xs_norm: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    apply_affine(&map.a, &map.b, xs_norm)
}

fn apply_affine(a: &DMatrix<f64>, b: &DVector<f64>, xs_norm: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if xs_norm.ncols() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: xs_norm.ncols(),
        });
    }
    let mut out = xs_norm * a.transpose();
    for mut row in out.row_iter_mut() {
        row += b.transpose();
    }
    Ok(out)
}

/// Mean of `(ys_i - ref_gp(A x_i + b))^2` with `ys` already in the reference
/// GP's standardized output units.
pub fn imc_loss(
    map: &LinearMap,
    xs_norm: &DMatrix<f64>,
    ys_std: &DVector<f64>,
    ref_gp: &GpModel,
) -> Result<f64> {
    affine_loss(&map.a, &map.b, xs_norm, ys_std, ref_gp)
}

fn affine_loss(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    xs_norm: &DMatrix<f64>,
    ys_std: &DVector<f64>,
    ref_gp: &GpModel,
) -> Result<f64> {
    if a.nrows() != ref_gp.dim() {
        return Err(Error::DimensionMismatch {
            expected: ref_gp.dim(),
            found: a.nrows(),
        });
    }
    let mapped = apply_affine(a, b, xs_norm)?;
    let pred = ref_gp.predict_standardized_mean(&mapped);
    let loss = (ys_std - pred).norm_squared() / ys_std.len() as f64;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLikelihood {
            params: a.iter().chain(b.iter()).copied().collect(),
        })
    }
}

/// Genetic-algorithm settings. Every entry of `A` and `b` is searched in
/// `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImcConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Gaussian mutation step; `None` means a tenth of the box width.
    pub mutation_sigma: Option<f64>,
    pub tournament_size: usize,
    pub elitism: usize,
    pub lower: f64,
    pub upper: f64,
    pub seed: u64,
}

impl Default for ImcConfig {
    fn default() -> Self {
        ImcConfig {
            population: 60,
            generations: 200,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            mutation_sigma: None,
            tournament_size: 3,
            elitism: 2,
            lower: -5.0,
            upper: 5.0,
            seed: 0,
        }
    }
}

impl ImcConfig {
    pub fn sigma(&self) -> f64 {
        self.mutation_sigma.unwrap_or(0.1 * (self.upper - self.lower))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.population == 0 || self.generations == 0 {
            return bad("population and generations must be positive");
        }
        if self.elitism == 0 || self.elitism > self.population {
            return bad("elitism must be in 1..=population");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("crossover and mutation rates must lie in [0, 1]");
        }
        if !(self.sigma() > 0.0) {
            return bad("mutation sigma must be positive");
        }
        if !(self.lower < self.upper) || self.lower > 0.0 || self.upper < 0.0 {
            return bad("parameter box must be non-empty and contain 0");
        }
        if self.tournament_size == 0 {
            return bad("tournament size must be positive");
        }
        Ok(())
    }
}

/// Best and mean loss of one generation (generation 0 is the initial population).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_loss: f64,
    pub mean_loss: f64,
}

/// Result of calibrating one source.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub map: LinearMap,
    pub trace: Vec<GenerationStats>,
    pub config: ImcConfig,
}

fn tournament<R: Rng>(losses: &[f64], size: usize, rng: &mut R) -> usize {
    let mut best = rng.random_range(0..losses.len());
    for _ in 1..size {
        let c = rng.random_range(0..losses.len());
        if losses[c] < losses[best] || (losses[c] == losses[best] && c < best) {
            best = c;
        }
    }
    best
}

/// Rank order by loss; ties keep the lower index first.
fn ranked(losses: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    idx
}

/// Calibrates `source` against the reference GP. The reference GP's input
/// standardizer defines the reference normalized space and its output
/// scaling defines the loss units.
pub fn calibrate(source: &SourceDataset, ref_gp: &GpModel, config: &ImcConfig) -> Result<Calibration> {
    config.validate()?;
    let source_standardizer = Standardizer::fit(&source.x)?;
    let xs_norm = source_standardizer.transform(&source.x)?;
    let ys_std = ref_gp.output.standardize(&source.y);
    let d_ref = ref_gp.dim();
    let d_s = source.dim();
    let n_genes = d_ref * d_s + d_ref;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mutation = Normal::new(0.0, config.sigma()).expect("sigma validated");

    // Individual 0 is the zero map, so the result never loses to it. With
    // matching dimensions individual 1 is the identity.
    let identity: Vec<f64> = (0..d_ref * d_s)
        .map(|k| if k / d_s == k % d_s { 1.0 } else { 0.0 })
        .chain(std::iter::repeat_n(0.0, d_ref))
        .collect();
    let mut population: Vec<Vec<f64>> = (0..config.population)
        .map(|k| {
            if k == 0 {
                vec![0.0; n_genes]
            } else if k == 1 && d_ref == d_s {
                identity.clone()
            } else {
                (0..n_genes)
                    .map(|_| rng.random_range(config.lower..=config.upper))
                    .collect()
            }
        })
        .collect();

    let evaluate = |pop: &[Vec<f64>]| -> Vec<f64> {
        pop.par_iter()
            .map(|g| {
                let (a, b) = LinearMap::from_genes(g, d_ref, d_s);
                affine_loss(&a, &b, &xs_norm, &ys_std, ref_gp).unwrap_or(f64::INFINITY)
            })
            .collect()
    };

    let stats = |generation: usize, losses: &[f64]| {
        let finite: Vec<f64> = losses.iter().copied().filter(|v| v.is_finite()).collect();
        GenerationStats {
            generation,
            best_loss: losses.iter().copied().fold(f64::INFINITY, f64::min),
            mean_loss: if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            },
        }
    };

    let mut losses = evaluate(&population);
    let mut trace = vec![stats(0, &losses)];

    for generation in 1..=config.generations {
        let order = ranked(&losses);
        let mut next: Vec<Vec<f64>> = order[..config.elitism]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        let mut next_losses: Vec<Option<f64>> = order[..config.elitism]
            .iter()
            .map(|&i| Some(losses[i]))
            .collect();
        while next.len() < config.population {
            let p1 = tournament(&losses, config.tournament_size, &mut rng);
            let p2 = tournament(&losses, config.tournament_size, &mut rng);
            let (mut c1, mut c2) = (population[p1].clone(), population[p2].clone());
            if rng.random::<f64>() < config.crossover_rate {
                for g in 0..n_genes {
                    if rng.random::<bool>() {
                        std::mem::swap(&mut c1[g], &mut c2[g]);
                    }
                }
            }
            for child in [&mut c1, &mut c2] {
                for gene in child.iter_mut() {
                    if rng.random::<f64>() < config.mutation_rate {
                        *gene = (*gene + mutation.sample(&mut rng)).clamp(config.lower, config.upper);
                    }
                }
            }
            next.push(c1);
            next_losses.push(None);
            if next.len() < config.population {
                next.push(c2);
                next_losses.push(None);
            }
        }
        // Elites keep their stored loss; only offspring are evaluated.
        let fresh = evaluate(&next[config.elitism..]);
        losses = next_losses
            .into_iter()
            .zip(
                std::iter::repeat_n(f64::NAN, config.elitism).chain(fresh),
            )
            .map(|(kept, new)| kept.unwrap_or(new))
            .collect();
        population = next;
        trace.push(stats(generation, &losses));
    }

    let best = ranked(&losses)[0];
    if !losses[best].is_finite() {
        return Err(Error::OptimizerFailed.in_source(&source.source_id));
    }
    let (a, b) = LinearMap::from_genes(&population[best], d_ref, d_s);
    let map = LinearMap {
        source_id: source.source_id.clone(),
        ref_id: String::new(),
        a,
        b,
        loss: losses[best],
        source_standardizer,
    };
    Ok(Calibration {
        map,
        trace,
        config: config.clone(),
    })
}

/// Everything produced by the mapping stage.
#[derive(Debug, Clone)]
pub struct MappingResult {
    pub ref_id: String,
    pub ref_gp: GpModel,
    pub calibrations: Vec<Calibration>,
    pub fused: FusedDataset,
}

impl MappingResult {
    pub fn maps(&self) -> Vec<&LinearMap> {
        self.calibrations.iter().map(|c| &c.map).collect()
    }

    pub fn map_for(&self, source_id: &str) -> Option<&LinearMap> {
        self.calibrations
            .iter()
            .map(|c| &c.map)
            .find(|m| m.source_id == source_id)
    }
}

/// The source with the most rows; ties go to the smallest label.
pub fn select_reference(sources: &[SourceDataset]) -> Option<&SourceDataset> {
    sources.iter().max_by(|a, b| {
        a.n_rows()
            .cmp(&b.n_rows())
            .then_with(|| b.source_id.cmp(&a.source_id))
    })
}

/// Fits the reference GP, calibrates every other source against it and
/// stacks reference rows (normalized) with mapped rows into one dataset.
pub fn map_all_sources(
    sources: &[SourceDataset],
    ref_id: Option<&str>,
    imc: &ImcConfig,
    gp: &GpConfig,
) -> Result<MappingResult> {
    if sources.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_shared_output(sources)?;
    let reference = match ref_id {
        Some(id) => sources
            .iter()
            .find(|s| s.source_id == id)
            .ok_or_else(|| Error::UnknownSource {
                source_id: id.to_string(),
            })?,
        None => select_reference(sources).expect("non-empty"),
    };
    let ref_id = reference.source_id.clone();
    let ref_gp = fit_gp(&reference.x, &reference.y, gp).map_err(|e| e.in_source(&ref_id))?;

    let others: Vec<&SourceDataset> = sources.iter().filter(|s| s.source_id != ref_id).collect();
    let calibrations = others
        .iter()
        .map(|s| {
            calibrate(s, &ref_gp, imc)
                .map(|mut c| {
                    c.map.ref_id = ref_id.clone();
                    c
                })
                .map_err(|e| match e {
                    Error::Source { .. } => e,
                    other => other.in_source(&s.source_id),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut blocks = vec![ref_gp.input.transform(&reference.x)?];
    let mut labels = vec![ref_id.clone(); reference.n_rows()];
    let mut ys: Vec<f64> = reference.y.iter().copied().collect();
    for (s, c) in others.iter().zip(&calibrations) {
        blocks.push(c.map.map_raw(&s.x)?);
        labels.extend(std::iter::repeat_n(s.source_id.clone(), s.n_rows()));
        ys.extend(s.y.iter());
    }
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let d = ref_gp.dim();
    let mut x = DMatrix::zeros(n, d);
    let mut r = 0;
    for blk in &blocks {
        x.rows_mut(r, blk.nrows()).copy_from(blk);
        r += blk.nrows();
    }
    let mut source_set = vec![ref_id.clone()];
    source_set.extend(others.iter().map(|s| s.source_id.clone()));
    let fused = FusedDataset::new(
        x,
        labels,
        DVector::from_vec(ys),
        ref_id.clone(),
        source_set,
        reference.input_names.clone(),
        reference.output_name.clone(),
    )?;
    Ok(MappingResult {
        ref_id,
        ref_gp,
        calibrations,
        fused,
    })
}
