//! Stage 2 training and the three-way model comparison.
//!
//! Fused models live in the reference source's normalized input space and
//! only accept inputs routed through the calibrated maps; a single-source
//! model only accepts its own source's original inputs. Inputs carry an
//! [`InputSpace`] tag so the two can never be mixed up.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_records, FusedDataset, SourceDataset, Standardizer};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, GpConfig, GpModel, Prediction};
use crate::imc::{map_all_sources, ImcConfig, LinearMap, MappingResult};
use crate::lvgp::{fit_lvgp, LvgpConfig, LvgpModel};

/// Source-aware LVGP on fused data with the reference source as anchor.
pub fn train_fusion(fused: &FusedDataset, config: &LvgpConfig) -> Result<LvgpModel> {
    if let Some(bad) = fused.sources.iter().find(|s| s.is_empty()) {
        return Err(Error::UnknownLevel {
            level: bad.clone(),
            known: fused.source_set.clone(),
        });
    }
    let present = fused.present_sources();
    if present.len() < 2 {
        return Err(Error::TooFewLevels {
            needed: 2,
            found: present.len(),
        });
    }
    let cfg = LvgpConfig {
        anchor_level: Some(
            config
                .anchor_level
                .clone()
                .unwrap_or_else(|| fused.ref_source_id.clone()),
        ),
        ..config.clone()
    };
    fit_lvgp(&fused.x, &fused.sources, &fused.y, &cfg)
}

/// Source-unaware GP on the fused inputs, ignoring the labels.
pub fn train_baseline_gp(fused: &FusedDataset, config: &GpConfig) -> Result<GpModel> {
    fit_gp(&fused.x, &fused.y, config)
}

/// GP on one source's original inputs.
pub fn train_single_source(source: &SourceDataset, config: &GpConfig) -> Result<GpModel> {
    fit_gp(&source.x, &source.y, config).map_err(|e| e.in_source(&source.source_id))
}

/// `RMSE(pred, truth) / (max(truth) - min(truth))`.
pub fn nrmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (lo, hi) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::ConstantTruth);
    }
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / truth.len() as f64;
    Ok(mse.sqrt() / range)
}

/// Which coordinate system a block of inputs is expressed in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case")]
pub enum InputSpace {
    /// Raw inputs of the named source.
    Original { source_id: String },
    /// Normalized input space of the named reference source.
    Mapped { ref_id: String },
}

/// Input rows of one source, tagged with their coordinate system.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedInputs {
    pub source_id: String,
    pub space: InputSpace,
    pub x: DMatrix<f64>,
}

impl RoutedInputs {
    pub fn original(ds: &SourceDataset) -> Self {
        RoutedInputs {
            source_id: ds.source_id.clone(),
            space: InputSpace::Original {
                source_id: ds.source_id.clone(),
            },
            x: ds.x.clone(),
        }
    }
}

/// Sends raw source inputs into the reference normalized space.
#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    pub ref_id: String,
    pub ref_standardizer: Standardizer,
    pub maps: BTreeMap<String, LinearMap>,
}

impl Router {
    pub fn new(ref_id: &str, ref_standardizer: Standardizer, maps: Vec<LinearMap>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for m in maps {
            if m.ref_id != ref_id {
                return Err(Error::Routing(format!(
                    "map for {} targets {}, expected {ref_id}",
                    m.source_id, m.ref_id
                )));
            }
            out.insert(m.source_id.clone(), m);
        }
        Ok(Router {
            ref_id: ref_id.to_string(),
            ref_standardizer,
            maps: out,
        })
    }

    pub fn from_mapping(mapping: &MappingResult) -> Self {
        Router {
            ref_id: mapping.ref_id.clone(),
            ref_standardizer: mapping.ref_gp.input.clone(),
            maps: mapping
                .maps()
                .into_iter()
                .map(|m| (m.source_id.clone(), m.clone()))
                .collect(),
        }
    }

    pub fn knows(&self, source_id: &str) -> bool {
        source_id == self.ref_id || self.maps.contains_key(source_id)
    }

    pub fn route(&self, ds: &SourceDataset) -> Result<RoutedInputs> {
        let x = if ds.source_id == self.ref_id {
            self.ref_standardizer.transform(&ds.x)?
        } else {
            self.maps
                .get(&ds.source_id)
                .ok_or_else(|| Error::UnknownSource {
                    source_id: ds.source_id.clone(),
                })?
                .map_raw(&ds.x)?
        };
        Ok(RoutedInputs {
            source_id: ds.source_id.clone(),
            space: InputSpace::Mapped {
                ref_id: self.ref_id.clone(),
            },
            x,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FusedGp,
    FusedLvgp,
    SingleSourceGp,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::FusedGp => "fused_gp",
            ModelKind::FusedLvgp => "fused_lvgp",
            ModelKind::SingleSourceGp => "single_source_gp",
        }
    }
}

/// A trained model together with the input space it consumes.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    FusedGp { ref_id: String, model: GpModel },
    FusedLvgp { ref_id: String, model: LvgpModel },
    SingleSourceGp { source_id: String, model: GpModel },
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::FusedGp { .. } => ModelKind::FusedGp,
            TrainedModel::FusedLvgp { .. } => ModelKind::FusedLvgp,
            TrainedModel::SingleSourceGp { .. } => ModelKind::SingleSourceGp,
        }
    }

    /// Display name, e.g. `LVGP` or `GP-HCB`.
    pub fn label(&self) -> String {
        match self {
            TrainedModel::FusedGp { .. } => "GP".into(),
            TrainedModel::FusedLvgp { .. } => "LVGP".into(),
            TrainedModel::SingleSourceGp { source_id, .. } => format!("GP-{source_id}"),
        }
    }

    pub fn input_space(&self) -> InputSpace {
        match self {
            TrainedModel::FusedGp { ref_id, .. } | TrainedModel::FusedLvgp { ref_id, .. } => {
                InputSpace::Mapped {
                    ref_id: ref_id.clone(),
                }
            }
            TrainedModel::SingleSourceGp { source_id, .. } => InputSpace::Original {
                source_id: source_id.clone(),
            },
        }
    }

    /// Whether rows of `source_id` can be evaluated by this model at all.
    pub fn covers(&self, source_id: &str, router: &Router) -> bool {
        match self {
            TrainedModel::FusedGp { .. } => router.knows(source_id),
            TrainedModel::FusedLvgp { model, .. } => model.levels().iter().any(|l| l == source_id),
            TrainedModel::SingleSourceGp { source_id: own, .. } => own == source_id,
        }
    }

    pub fn predict(&self, inputs: &RoutedInputs) -> Result<Prediction> {
        let expected = self.input_space();
        if inputs.space != expected {
            return Err(Error::Routing(format!(
                "{} expects {:?} inputs, got {:?} for source {}",
                self.label(),
                expected,
                inputs.space,
                inputs.source_id
            )));
        }
        match self {
            TrainedModel::FusedGp { model, .. } | TrainedModel::SingleSourceGp { model, .. } => {
                model.predict(&inputs.x)
            }
            TrainedModel::FusedLvgp { model, .. } => {
                let labels = vec![inputs.source_id.clone(); inputs.x.nrows()];
                model.predict(&inputs.x, &labels)
            }
        }
    }

    /// Routes `ds` into this model's input space.
    pub fn route(&self, ds: &SourceDataset, router: &Router) -> Result<RoutedInputs> {
        match self.input_space() {
            InputSpace::Original { .. } => Ok(RoutedInputs::original(ds)),
            InputSpace::Mapped { .. } => router.route(ds),
        }
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub model_kind: ModelKind,
    pub train_nrmse_all: Option<f64>,
    pub test_nrmse_all: Option<f64>,
    pub test_nrmse_per_source: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub ref_id: String,
    pub seeds: BTreeMap<String, u64>,
    pub train_sizes: BTreeMap<String, usize>,
    pub test_sizes: BTreeMap<String, usize>,
    /// Per-source columns shown in the rendered table.
    pub focus_sources: Vec<String>,
    pub nrmse_normalizer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ModelRow>,
    pub metadata: ReportMetadata,
}

pub const NRMSE_NORMALIZER: &str =
    "RMSE divided by (max - min) of the truth values of the evaluated set; pooled columns use the pooled truth range";

impl EvalReport {
    pub fn row(&self, kind: ModelKind) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.model_kind == kind)
    }

    /// Plain-text table: model, pooled train/test NRMSE, then one test
    /// column per focus source. Missing cells print as `--`.
    pub fn render_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("--".to_string(), |v| format!("{v:.4}"));
        let mut header = vec![
            "Model".to_string(),
            "Training NRMSE (all)".to_string(),
            "Testing NRMSE (all)".to_string(),
        ];
        header.extend(self.metadata.focus_sources.iter().map(|s| format!("Testing NRMSE ({s})")));
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = vec![r.model.clone(), fmt(r.train_nrmse_all), fmt(r.test_nrmse_all)];
            line.extend(
                self.metadata
                    .focus_sources
                    .iter()
                    .map(|s| fmt(r.test_nrmse_per_source.get(s).copied())),
            );
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }
}

/// One predicted row; `inputs` are the coordinates the model consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub source_id: String,
    pub inputs: Vec<f64>,
    pub y_true: f64,
    pub y_pred: f64,
    pub y_std: f64,
}

/// Test-set predictions of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPredictions {
    pub model: String,
    pub input_names: Vec<String>,
    pub rows: Vec<PredictionRow>,
}

impl ModelPredictions {
    /// Columns `source_id, inputs..., y_true, y_pred, y_std`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["source_id".to_string()];
        header.extend(self.input_names.iter().cloned());
        header.extend(["y_true", "y_pred", "y_std"].map(String::from));
        write_records(
            path,
            &header,
            self.rows.iter().map(|r| {
                let mut rec = vec![r.source_id.clone()];
                rec.extend(r.inputs.iter().map(|v| v.to_string()));
                rec.extend([r.y_true, r.y_pred, r.y_std].map(|v| v.to_string()));
                rec
            }),
        )
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<ModelPredictions>,
}

struct Scored {
    per_source: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Scored {
    fn pooled(&self) -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![];
        let mut t = vec![];
        for (pp, tt) in self.per_source.values() {
            p.extend(pp);
            t.extend(tt);
        }
        (p, t)
    }
}

fn score(
    model: &TrainedModel,
    sets: &[SourceDataset],
    router: &Router,
    mut sink: Option<&mut Vec<PredictionRow>>,
) -> Result<Scored> {
    let mut per_source = BTreeMap::new();
    for ds in sets.iter().filter(|d| model.covers(&d.source_id, router)) {
        let routed = model.route(ds, router)?;
        let pred = model.predict(&routed)?;
        if let Some(rows) = sink.as_deref_mut() {
            let sd = pred.std_dev();
            for i in 0..ds.n_rows() {
                rows.push(PredictionRow {
                    source_id: ds.source_id.clone(),
                    inputs: routed.x.row(i).iter().copied().collect(),
                    y_true: ds.y[i],
                    y_pred: pred.mean[i],
                    y_std: sd[i],
                });
            }
        }
        per_source.insert(
            ds.source_id.clone(),
            (pred.mean.iter().copied().collect(), ds.y.iter().copied().collect()),
        );
    }
    Ok(Scored { per_source })
}

/// Scores every model on the training and test sets it can route.
///
/// Fused models get pooled train/test NRMSE over every covered source plus
/// per-source test NRMSE; single-source models only get a test NRMSE on
/// their own source. Sources in `focus` become table columns.
pub fn evaluate(
    models: &[TrainedModel],
    train: &[SourceDataset],
    test: &[SourceDataset],
    router: &Router,
    focus: &[String],
    seeds: BTreeMap<String, u64>,
) -> Result<Evaluation> {
    for ds in test.iter() {
        if !models.iter().any(|m| m.covers(&ds.source_id, router)) {
            return Err(Error::Routing(format!(
                "no model accepts test rows of source {}",
                ds.source_id
            )));
        }
    }
    let mut rows = vec![];
    let mut predictions = vec![];
    for m in models {
        let mut pred_rows = vec![];
        let te = score(m, test, router, Some(&mut pred_rows))?;
        let mut per_source = BTreeMap::new();
        for (sid, (p, t)) in &te.per_source {
            per_source.insert(sid.clone(), nrmse(p, t).map_err(|e| e.in_source(sid))?);
        }
        let (train_all, test_all) = match m {
            TrainedModel::SingleSourceGp { .. } => (None, None),
            _ => {
                let tr = score(m, train, router, None)?;
                let pooled = |s: &Scored| -> Result<Option<f64>> {
                    let (p, t) = s.pooled();
                    if t.is_empty() {
                        Ok(None)
                    } else {
                        nrmse(&p, &t).map(Some)
                    }
                };
                (pooled(&tr)?, pooled(&te)?)
            }
        };
        let input_names = match m {
            TrainedModel::SingleSourceGp { source_id, .. } => test
                .iter()
                .find(|d| &d.source_id == source_id)
                .map(|d| d.input_names.clone())
                .unwrap_or_default(),
            _ => test
                .iter()
                .chain(train)
                .find(|d| d.source_id == router.ref_id)
                .map(|d| d.input_names.clone())
                .unwrap_or_else(|| (1..=router.ref_standardizer.dim()).map(|i| format!("x{i}")).collect()),
        };
        rows.push(ModelRow {
            model: m.label(),
            model_kind: m.kind(),
            train_nrmse_all: train_all,
            test_nrmse_all: test_all,
            test_nrmse_per_source: per_source,
        });
        predictions.push(ModelPredictions {
            model: m.label(),
            input_names,
            rows: pred_rows,
        });
    }
    let sizes = |sets: &[SourceDataset]| sets.iter().map(|d| (d.source_id.clone(), d.n_rows())).collect();
    Ok(Evaluation {
        report: EvalReport {
            rows,
            metadata: ReportMetadata {
                ref_id: router.ref_id.clone(),
                seeds,
                train_sizes: sizes(train),
                test_sizes: sizes(test),
                focus_sources: focus.to_vec(),
                nrmse_normalizer: NRMSE_NORMALIZER.to_string(),
            },
        },
        predictions,
    })
}

/// Settings for a full map, train, evaluate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub ref_id: Option<String>,
    pub imc: ImcConfig,
    /// Reference GP used for calibration and the single-source GP.
    pub gp: GpConfig,
    /// Fused LVGP; its `gp` part also configures the fused baseline GP.
    pub lvgp: LvgpConfig,
    /// Source for the single-source model; `None` picks the smallest
    /// non-reference source.
    pub single_source: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ref_id: None,
            imc: ImcConfig::default(),
            gp: GpConfig::default(),
            lvgp: LvgpConfig::default(),
            single_source: None,
        }
    }
}

impl PipelineConfig {
    /// Sets every named seed to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.imc.seed = seed;
        self.gp.seed = seed;
        self.lvgp.gp.seed = seed;
        self
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("imc".to_string(), self.imc.seed),
            ("gp".to_string(), self.gp.seed),
            ("lvgp".to_string(), self.lvgp.gp.seed),
        ])
    }
}

/// The smallest source other than `ref_id` (ties to the smallest label).
pub fn smallest_source<'a>(sources: &'a [SourceDataset], ref_id: &str) -> Option<&'a SourceDataset> {
    sources
        .iter()
        .filter(|s| s.source_id != ref_id)
        .min_by(|a, b| a.n_rows().cmp(&b.n_rows()).then_with(|| a.source_id.cmp(&b.source_id)))
}

/// Output of [`run_comparison`].
#[derive(Debug, Clone)]
pub struct Comparison {
    pub mapping: MappingResult,
    pub models: Vec<TrainedModel>,
    pub evaluation: Evaluation,
}

impl Comparison {
    pub fn lvgp(&self) -> Option<&LvgpModel> {
        self.models.iter().find_map(|m| match m {
            TrainedModel::FusedLvgp { model, .. } => Some(model),
            _ => None,
        })
    }
}

/// Maps every source, trains the fused LVGP, the fused GP and one
/// single-source GP, then evaluates all three.
pub fn run_comparison(train: &[SourceDataset], test: &[SourceDataset], config: &PipelineConfig) -> Result<Comparison> {
    let mapping = map_all_sources(train, config.ref_id.as_deref(), &config.imc, &config.gp)?;
    let ref_id = mapping.ref_id.clone();
    let single = match &config.single_source {
        Some(id) => train
            .iter()
            .find(|s| &s.source_id == id)
            .ok_or_else(|| Error::UnknownSource { source_id: id.clone() })?,
        None => smallest_source(train, &ref_id).ok_or(Error::TooFewLevels { needed: 2, found: 1 })?,
    };
    let (lv, (gp, ss)) = rayon::join(
        || train_fusion(&mapping.fused, &config.lvgp),
        || {
            rayon::join(
                || train_baseline_gp(&mapping.fused, &config.lvgp.gp),
                || train_single_source(single, &config.gp),
            )
        },
    );
    let models = vec![
        TrainedModel::FusedGp {
            ref_id: ref_id.clone(),
            model: gp?,
        },
        TrainedModel::FusedLvgp {
            ref_id: ref_id.clone(),
            model: lv?,
        },
        TrainedModel::SingleSourceGp {
            source_id: single.source_id.clone(),
            model: ss?,
        },
    ];
    let router = Router::from_mapping(&mapping);
    let evaluation = evaluate(
        &models,
        train,
        test,
        &router,
        &[single.source_id.clone()],
        config.seeds(),
    )?;
    Ok(Comparison {
        mapping,
        models,
        evaluation,
    })
}

/// Pooled truth/prediction residual sums, used to cross-check pooled NRMSE.
pub fn squared_error_sum(pred: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (pred - truth).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn nrmse_examples() {
        assert_eq!(nrmse(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(nrmse(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert!(matches!(nrmse(&[1.0, 1.0], &[3.0, 3.0]), Err(Error::ConstantTruth)));
        assert!(nrmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(nrmse(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn nrmse_affine_invariance(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            c in -100.0f64..100.0,
        ) {
            let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(truth.iter().any(|t| (t - truth[0]).abs() > 1e-3));
            let base = nrmse(&pred, &truth).unwrap();
            let tp: Vec<f64> = pred.iter().map(|v| a * v + c).collect();
            let tt: Vec<f64> = truth.iter().map(|v| a * v + c).collect();
            let moved = nrmse(&tp, &tt).unwrap();
            prop_assert!((base - moved).abs() <= 1e-12 * base.max(1.0));
        }

        #[test]
        fn pooled_error_is_size_weighted_sum(
            a in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..20),
            b in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..20),
        ) {
            let v = |s: &[(f64, f64)], k: usize| DVector::from_iterator(s.len(), s.iter().map(|p| if k == 0 { p.0 } else { p.1 }));
            let mse = |s: &[(f64, f64)]| squared_error_sum(&v(s, 0), &v(s, 1)) / s.len() as f64;
            let all: Vec<(f64, f64)> = a.iter().chain(&b).copied().collect();
            let weighted = (a.len() as f64 * mse(&a) + b.len() as f64 * mse(&b)) / all.len() as f64;
            prop_assert!((mse(&all) - weighted).abs() <= 1e-10);
        }
    }

    fn ds(id: &str, x: Vec<f64>, d: usize, f: impl Fn(&[f64]) -> f64) -> SourceDataset {
        let n = x.len() / d;
        let m = DMatrix::from_row_slice(n, d, &x);
        let y = DVector::from_fn(n, |i, _| f(&x[i * d..(i + 1) * d]));
        let names = (0..d).map(|i| format!("v{i}")).collect();
        SourceDataset::new(id, names, m, y, "y").unwrap()
    }

    #[test]
    fn routing_is_enforced() {
        let src = ds("A", vec![0.0, 0.5, 1.0, 1.5], 1, |v| v[0] * v[0]);
        let model = TrainedModel::SingleSourceGp {
            source_id: "A".into(),
            model: train_single_source(&src, &GpConfig::default()).unwrap(),
        };
        let router = Router::new("A", Standardizer::fit(&src.x).unwrap(), vec![]).unwrap();
        let mapped = router.route(&src).unwrap();
        assert!(matches!(model.predict(&mapped), Err(Error::Routing(_))));
        assert!(model.predict(&RoutedInputs::original(&src)).is_ok());
    }

    #[test]
    fn single_model_single_source_report() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let src = ds("A", x, 1, |v| (3.0 * v[0]).sin());
        let model = TrainedModel::SingleSourceGp {
            source_id: "A".into(),
            model: train_single_source(&src, &GpConfig::default()).unwrap(),
        };
        let router = Router::new("A", Standardizer::fit(&src.x).unwrap(), vec![]).unwrap();
        let ev = evaluate(
            &[model],
            &[src.clone()],
            &[src.clone()],
            &router,
            &["A".to_string()],
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(ev.report.rows.len(), 1);
        assert_eq!(ev.report.rows[0].test_nrmse_per_source.len(), 1);
        // Scored on its own training rows: interpolation makes this ~0.
        assert!(ev.report.rows[0].test_nrmse_per_source["A"] < 1e-6);
        assert!(ev.report.render_table().contains("GP-A"));
    }

    #[test]
    fn unroutable_test_rows_error() {
        let src = ds("A", vec![0.0, 0.5, 1.0], 1, |v| v[0]);
        let other = ds("B", vec![0.0, 0.5, 1.0], 1, |v| v[0]);
        let model = TrainedModel::SingleSourceGp {
            source_id: "A".into(),
            model: train_single_source(&src, &GpConfig::default()).unwrap(),
        };
        let router = Router::new("A", Standardizer::fit(&src.x).unwrap(), vec![]).unwrap();
        assert!(matches!(
            evaluate(&[model], &[src], &[other], &router, &[], BTreeMap::new()),
            Err(Error::Routing(_))
        ));
    }

    #[test]
    fn single_source_needs_two_rows() {
        let src = ds("A", vec![0.3], 1, |v| v[0]);
        assert!(train_single_source(&src, &GpConfig::default()).is_err());
    }

    #[test]
    fn fusion_rejects_single_source() {
        let fused = FusedDataset::new(
            DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]),
            vec!["A".into(); 3],
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
            "A",
            vec!["A".into()],
            vec!["x".into()],
            "y",
        )
        .unwrap();
        assert!(matches!(
            train_fusion(&fused, &LvgpConfig::default()),
            Err(Error::TooFewLevels { .. })
        ));
        let gp = train_baseline_gp(&fused, &GpConfig::default()).unwrap();
        assert_eq!(gp.dim(), 1);
    }
}
