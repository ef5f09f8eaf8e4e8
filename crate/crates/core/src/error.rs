use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("{stream} id {id} out of range (table has {size} rows)")]
    IdOutOfRange {
        stream: &'static str,
        id: usize,
        size: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence contains no table cells")]
    NoCells,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot ablate the OTHERS relation type")]
    AblateOthers,
    #[error("inconsistent sequences: {0}")]
    Correspondence(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("infeasible task: {0}")]
    InfeasibleTask(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable snake_case identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidPermutation(_) => "invalid_permutation",
            Error::InvalidTable(_) => "invalid_table",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::IdOutOfRange { .. } => "id_out_of_range",
            Error::InvalidConfig(_) => "invalid_config",
            Error::NoCells => "no_cells",
            Error::Numerical(_) => "numerical",
            Error::AblateOthers => "ablate_others",
            Error::Correspondence(_) => "correspondence",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::InfeasibleTask(_) => "infeasible_task",
            Error::Format(_) => "malformed_input",
            Error::Json(_) => "malformed_json",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
