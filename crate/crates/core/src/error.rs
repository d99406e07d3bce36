use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the pipeline can report. Each variant maps to a stable
/// machine-readable code via [`Error::code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at {location}: field `{field}`: {message}")]
    Malformed {
        location: String,
        field: String,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("invalid story points {0}: must be one of 1, 2, 3, 5, 8")]
    InvalidStoryPoints(i64),

    #[error("invalid value for `{field}`: {message}")]
    InvalidValue { field: String, message: String },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("unorderable versions: {0}")]
    UnorderableVersions(String),

    #[error("release {version} references unknown item `{item}`")]
    UnknownItem { version: String, item: String },

    #[error("item `{item}` appears in releases {first} and {second}")]
    ItemInTwoReleases {
        item: String,
        first: String,
        second: String,
    },

    #[error("no measurements for release {0}")]
    NoMeasurements(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("clock change {hz_o} GHz -> {hz_n} GHz is outside calibrated range (factor {factor})")]
    OutsideCalibratedRange { hz_o: f64, hz_n: f64, factor: f64 },

    #[error("{count} allocations exceed the enumeration cap of {cap}; use the greedy strategy")]
    EnumerationCap { count: f64, cap: u64 },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("missing {field} for item `{item}` and no classifier available")]
    MissingAttribute { item: String, field: &'static str },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IO_ERROR",
            Error::Malformed { .. } => "MALFORMED_RECORD",
            Error::DuplicateId(_) => "DUPLICATE_ID",
            Error::InvalidStoryPoints(_) => "INVALID_STORY_POINTS",
            Error::InvalidValue { .. } => "INVALID_VALUE",
            Error::UnknownLabel(_) => "UNKNOWN_LABEL",
            Error::UnorderableVersions(_) => "UNORDERABLE_VERSIONS",
            Error::UnknownItem { .. } => "UNKNOWN_ITEM",
            Error::ItemInTwoReleases { .. } => "ITEM_IN_TWO_RELEASES",
            Error::NoMeasurements(_) => "NO_MEASUREMENTS",
            Error::ZeroVariance(_) => "ZERO_VARIANCE",
            Error::DegenerateDesign(_) => "DEGENERATE_DESIGN",
            Error::InsufficientData(_) => "INSUFFICIENT_DATA",
            Error::Precondition(_) => "PRECONDITION",
            Error::OutsideCalibratedRange { .. } => "OUTSIDE_CALIBRATED_RANGE",
            Error::EnumerationCap { .. } => "ENUMERATION_CAP",
            Error::InvalidPlan(_) => "INVALID_PLAN",
            Error::MissingAttribute { .. } => "MISSING_ATTRIBUTE",
            Error::Json(_) => "MALFORMED_JSON",
            Error::Csv(_) => "MALFORMED_CSV",
        }
    }

    /// Errors caused by well-formed input that the model cannot handle, as
    /// opposed to input that fails validation.
    pub fn is_semantic(&self) -> bool {
        matches!(
            self,
            Error::OutsideCalibratedRange { .. }
                | Error::EnumerationCap { .. }
                | Error::DegenerateDesign(_)
                | Error::ZeroVariance(_)
                | Error::InsufficientData(_)
        )
    }

    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidValue {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
