use thiserror::Error;

/// Errors produced anywhere in the propagation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("negative entry at row {row}, column {col}")]
    NegativeEntry { row: usize, col: usize },

    #[error("row {0} sums to zero")]
    ZeroRow(usize),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("row {0} of the similarity matrix sums to zero")]
    ZeroRowSum(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("kernel bandwidth is degenerate: all pairwise distances are identical")]
    DegenerateBandwidth,

    #[error("linear system is singular at pivot {0}")]
    SingularSystem(usize),

    #[error("empty collection")]
    EmptyCollection,

    #[error("label mass sums to zero")]
    ZeroTotal,

    #[error("empty input")]
    EmptyInput,

    #[error("user {0} has no labeled boards")]
    NoGroundTruth(String),

    #[error("ground-truth distribution is all zeros")]
    ZeroIdeal,

    #[error("k = {k} is outside 1..={max}")]
    InvalidK { k: usize, max: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid category set: {0}")]
    InvalidCategories(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },

    #[error("dangling reference: {0}")]
    DanglingReference(String),

    #[error("missing category affinity: {0}")]
    MissingAffinity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NegativeEntry { .. } => "NegativeEntry",
            Error::ZeroRow(_) => "ZeroRow",
            Error::NonFinite { .. } => "NonFinite",
            Error::ZeroRowSum(_) => "ZeroRowSum",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::DegenerateBandwidth => "DegenerateBandwidth",
            Error::SingularSystem(_) => "SingularSystem",
            Error::EmptyCollection => "EmptyCollection",
            Error::ZeroTotal => "ZeroTotal",
            Error::EmptyInput => "EmptyInput",
            Error::NoGroundTruth(_) => "NoGroundTruth",
            Error::ZeroIdeal => "ZeroIdeal",
            Error::InvalidK { .. } => "InvalidK",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::InvalidCategories(_) => "InvalidCategories",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse { .. } => "ParseError",
            Error::DanglingReference(_) => "DanglingReference",
            Error::MissingAffinity(_) => "MissingAffinity",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
