use std::path::PathBuf;

/// Errors produced anywhere in the fusion pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite value in row {row}, column {column:?}")]
    NonFinite { row: usize, column: String },

    #[error("cannot parse {value:?} as a number in row {row}, column {column:?}")]
    NotNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),

    #[error("constant column {0} (zero standard deviation)")]
    ConstantColumn(usize),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("need at least {needed} rows, got {found}")]
    TooFewRows { needed: usize, found: usize },

    #[error("invalid split: train fraction {0} leaves an empty training set")]
    EmptyTrainSplit(f64),

    #[error("cholesky factorization failed even with nugget {nugget:e}")]
    NotPositiveDefinite { nugget: f64 },

    #[error("non-finite likelihood at parameters {params:?}")]
    NonFiniteLikelihood { params: Vec<f64> },

    #[error("optimizer failed: every restart produced a non-finite objective")]
    OptimizerFailed,

    #[error("unknown level {level:?}; known levels: {known:?}")]
    UnknownLevel { level: String, known: Vec<String> },

    #[error("need at least {needed} distinct levels, got {found}")]
    TooFewLevels { needed: usize, found: usize },

    #[error("unknown source {source_id:?}")]
    UnknownSource { source_id: String },

    #[error("source {source_id}: {inner}")]
    Source {
        source_id: String,
        #[source]
        inner: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible sampling ranges: {0}")]
    Infeasible(String),

    #[error("constant truth values: NRMSE normalizer is zero")]
    ConstantTruth,

    #[error("model has no latent space")]
    NoLatentSpace,

    #[error("{0}")]
    Routing(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches the source id of the dataset being processed.
    pub fn in_source(self, source_id: &str) -> Self {
        Error::Source {
            source_id: source_id.to_string(),
            inner: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
