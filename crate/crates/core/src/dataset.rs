//! Per-source datasets, z-score standardization, CSV ingestion and splitting.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One source's raw inputs and outputs, in its own parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDataset {
    pub source_id: String,
    pub input_names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub output_name: String,
}

impl SourceDataset {
    pub fn new(
        source_id: impl Into<String>,
        input_names: Vec<String>,
        x: DMatrix<f64>,
        y: DVector<f64>,
        output_name: impl Into<String>,
    ) -> Result<Self> {
        let ds = SourceDataset {
            source_id: source_id.into(),
            input_names,
            x,
            y,
            output_name: output_name.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.y.len() != self.x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.x.nrows(),
                found: self.y.len(),
            });
        }
        if self.input_names.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.x.ncols(),
                found: self.input_names.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &self.input_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateColumn(name.clone()));
            }
        }
        for i in 0..self.x.nrows() {
            for (j, name) in self.input_names.iter().enumerate() {
                if !self.x[(i, j)].is_finite() {
                    return Err(Error::NonFinite {
                        row: i + 1,
                        column: name.clone(),
                    });
                }
            }
            if !self.y[i].is_finite() {
                return Err(Error::NonFinite {
                    row: i + 1,
                    column: self.output_name.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Returns the subset of rows given by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> SourceDataset {
        SourceDataset {
            source_id: self.source_id.clone(),
            input_names: self.input_names.clone(),
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            output_name: self.output_name.clone(),
        }
    }
}

/// Column-wise z-score transform, fit with the population (n) divisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, found: n });
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut stds = Vec::with_capacity(x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            // Relative test: a column of identical large values can carry rounding noise.
            if !(std > 1e-12 * mean.abs().max(1e-300)) {
                return Err(Error::ConstantColumn(j));
            }
            means.push(mean);
            stds.push(std);
        }
        Ok(Standardizer { means, stds })
    }

    /// A no-op transform of the given width.
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            means: vec![0.0; dim],
            stds: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.stds[j]
        }))
    }

    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(z.ncols())?;
        Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
            z[(i, j)] * self.stds[j] + self.means[j]
        }))
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }
}

/// Stacked mapped inputs with a categorical source column.
///
/// `x` lives in the reference source's normalized input space.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDataset {
    pub x: DMatrix<f64>,
    pub sources: Vec<String>,
    pub y: DVector<f64>,
    pub ref_source_id: String,
    /// Declared source set, reference first, remaining sources in input order.
    pub source_set: Vec<String>,
    pub input_names: Vec<String>,
    pub output_name: String,
}

impl FusedDataset {
    pub fn new(
        x: DMatrix<f64>,
        sources: Vec<String>,
        y: DVector<f64>,
        ref_source_id: impl Into<String>,
        source_set: Vec<String>,
        input_names: Vec<String>,
        output_name: impl Into<String>,
    ) -> Result<Self> {
        let ref_source_id = ref_source_id.into();
        if x.nrows() != sources.len() || x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: sources.len().min(y.len()),
            });
        }
        if x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if input_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                found: input_names.len(),
            });
        }
        if !source_set.contains(&ref_source_id) {
            return Err(Error::UnknownSource {
                source_id: ref_source_id,
            });
        }
        for s in &sources {
            if s.is_empty() {
                return Err(Error::Config("empty source label".into()));
            }
            if !source_set.contains(s) {
                return Err(Error::UnknownSource {
                    source_id: s.clone(),
                });
            }
        }
        Ok(FusedDataset {
            x,
            sources,
            y,
            ref_source_id,
            source_set,
            input_names,
            output_name: output_name.into(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    /// Source ids that actually occur in the data, in declared order.
    pub fn present_sources(&self) -> Vec<String> {
        self.source_set
            .iter()
            .filter(|s| self.sources.contains(s))
            .cloned()
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["source_id".to_string()];
        header.extend(self.input_names.iter().cloned());
        header.push(self.output_name.clone());
        let rows = (0..self.n_rows()).map(|i| {
            let mut row = vec![self.sources[i].clone()];
            row.extend(self.x.row(i).iter().map(|v| v.to_string()));
            row.push(self.y[i].to_string());
            row
        });
        write_records(path, &header, rows)
    }

    /// Reads a fused CSV (`source_id, inputs..., output`). The reference id and
    /// declared source set are not stored in the file and must be supplied.
    pub fn read_csv(path: &Path, ref_source_id: &str, source_set: Vec<String>) -> Result<Self> {
        let (header, records) = read_records(path)?;
        if header.len() < 3 || header[0] != "source_id" {
            return Err(Error::MissingColumn("source_id".into()));
        }
        let d = header.len() - 2;
        let n = records.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        let mut sources = Vec::with_capacity(n);
        for (i, rec) in records.iter().enumerate() {
            sources.push(rec[0].clone());
            for j in 0..d {
                x[(i, j)] = parse_cell(&rec[j + 1], i + 1, &header[j + 1])?;
            }
            y[i] = parse_cell(&rec[d + 1], i + 1, &header[d + 1])?;
        }
        FusedDataset::new(
            x,
            sources,
            y,
            ref_source_id,
            source_set,
            header[1..=d].to_vec(),
            header[d + 1].clone(),
        )
    }
}

/// Deterministic shuffled train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Splits `ds` into `ceil(train_fraction * n)` training rows and the remainder.
pub fn split(ds: &SourceDataset, spec: SplitSpec) -> Result<(SourceDataset, SourceDataset)> {
    let n = ds.n_rows();
    if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::EmptyTrainSplit(spec.train_fraction));
    }
    let n_train = ((spec.train_fraction * n as f64).ceil() as usize).min(n);
    if n_train == 0 {
        return Err(Error::EmptyTrainSplit(spec.train_fraction));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);
    let train = ds.select_rows(&idx[..n_train]);
    let test = SourceDataset {
        source_id: ds.source_id.clone(),
        input_names: ds.input_names.clone(),
        x: ds.x.select_rows(&idx[n_train..]),
        y: ds.y.select_rows(&idx[n_train..]),
        output_name: ds.output_name.clone(),
    };
    Ok((train, test))
}

/// Which CSV columns feed a [`SourceDataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub source_id: String,
    pub input_columns: Vec<String>,
    pub output_column: String,
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<SourceDataset> {
    if schema.input_columns.is_empty() {
        return Err(Error::Config("schema needs at least one input column".into()));
    }
    let (header, records) = read_records(path)?;
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::DuplicateColumn(h.clone()));
        }
    }
    let mut wanted = HashSet::new();
    for c in schema.input_columns.iter().chain(Some(&schema.output_column)) {
        if !wanted.insert(c.as_str()) {
            return Err(Error::DuplicateColumn(c.clone()));
        }
    }
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let input_pos = schema
        .input_columns
        .iter()
        .map(|c| position(c))
        .collect::<Result<Vec<_>>>()?;
    let output_pos = position(&schema.output_column)?;

    let n = records.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = input_pos.len();
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    for (i, rec) in records.iter().enumerate() {
        for (j, &p) in input_pos.iter().enumerate() {
            x[(i, j)] = parse_cell(&rec[p], i + 1, &header[p])?;
        }
        y[i] = parse_cell(&rec[output_pos], i + 1, &header[output_pos])?;
    }
    SourceDataset::new(
        schema.source_id.clone(),
        schema.input_columns.clone(),
        x,
        y,
        schema.output_column.clone(),
    )
}

/// Reads only the named input columns, for prediction-time queries.
pub fn load_inputs_csv(path: &Path, input_columns: &[String]) -> Result<DMatrix<f64>> {
    let (header, records) = read_records(path)?;
    let pos = input_columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::MissingColumn(c.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut x = DMatrix::zeros(records.len(), pos.len());
    for (i, rec) in records.iter().enumerate() {
        for (j, &p) in pos.iter().enumerate() {
            x[(i, j)] = parse_cell(&rec[p], i + 1, &header[p])?;
        }
    }
    Ok(x)
}

/// Writes `ds` as `inputs..., output` with shortest round-trip float formatting.
pub fn write_csv(ds: &SourceDataset, path: &Path) -> Result<()> {
    let mut header = ds.input_names.clone();
    header.push(ds.output_name.clone());
    let rows = (0..ds.n_rows()).map(|i| {
        let mut row: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(ds.y[i].to_string());
        row
    });
    write_records(path, &header, rows)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::NotNumeric {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            row,
            column: column.to_string(),
        });
    }
    Ok(v)
}

fn read_records(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            message: "missing header row".into(),
        });
    }
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        records.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, records))
}

pub(crate) fn write_records(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    pub csv_path: PathBuf,
    pub input_columns: Vec<String>,
    pub output_column: String,
    /// Held-out rows for evaluation, same schema as `csv_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_csv_path: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            source_id: self.source_id.clone(),
            input_columns: self.input_columns.clone(),
            output_column: self.output_column.clone(),
        }
    }
}

/// JSON document listing the sources of one fusion run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sources: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.sources.is_empty() {
            return Err(Error::Config("manifest lists no sources".into()));
        }
        let mut ids = HashSet::new();
        for s in &manifest.sources {
            if !ids.insert(s.source_id.as_str()) {
                return Err(Error::Config(format!("duplicate source id {:?}", s.source_id)));
            }
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Loads every training dataset; relative paths resolve against `base`.
    pub fn load_train(&self, base: &Path) -> Result<Vec<SourceDataset>> {
        self.sources
            .iter()
            .map(|e| {
                load_csv(&Self::resolve(base, &e.csv_path), &e.schema())
                    .map_err(|err| err.in_source(&e.source_id))
            })
            .collect()
    }

    /// Loads the test datasets of the entries that declare one.
    pub fn load_test(&self, base: &Path) -> Result<Vec<SourceDataset>> {
        self.sources
            .iter()
            .filter_map(|e| e.test_csv_path.as_ref().map(|p| (e, p)))
            .map(|(e, p)| {
                load_csv(&Self::resolve(base, p), &e.schema())
                    .map_err(|err| err.in_source(&e.source_id))
            })
            .collect()
    }
}

/// Checks that all datasets share one output quantity.
pub fn check_shared_output(sources: &[SourceDataset]) -> Result<()> {
    if let Some(first) = sources.first() {
        for s in sources {
            if s.output_name != first.output_name {
                return Err(Error::Config(format!(
                    "source {} has output {:?}, expected {:?}",
                    s.source_id, s.output_name, first.output_name
                )));
            }
        }
    }
    Ok(())
}
