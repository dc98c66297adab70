use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine, metrics or experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible layer shapes at layer {layer}: {detail}")]
    IncompatibleShapes { layer: usize, detail: String },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("unknown model preset `{0}`")]
    UnknownPreset(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("trace does not belong to this model: {0}")]
    TraceMismatch(String),
    #[error("too many clients: {clients} clients for {samples} samples")]
    TooManyClients { clients: usize, samples: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("property column `{column}` has {distinct} distinct values, expected 2")]
    NonBinaryProperty { column: String, distinct: usize },
    #[error("parse error at row {row}, column {column}: {detail}")]
    Parse {
        row: usize,
        column: String,
        detail: String,
    },
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions(Vec<f64>),
    #[error("only one class present in labels")]
    SingleClass,
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("layer {0} has no parameters")]
    NotParameterizedLayer(usize),
    #[error("all {0} samples have a degenerate gradient range")]
    AllSamplesDegenerate(usize),
    #[error("sensitivity profile is degenerate (all layers equal)")]
    DegenerateProfile,
    #[error("property `{0}` value missing from data")]
    MissingPropertyValue(String),
    #[error("vector is constant")]
    ConstantVector,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bad file format in {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Wraps an error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by bad user-supplied configuration rather
    /// than a failure while running.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidConfig(_)
            | Error::UnknownPreset(_)
            | Error::BadFractions(_)
            | Error::MissingColumn(_)
            | Error::Json(_) => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
