use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty cloud")]
    EmptyCloud,

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid voxel spec: {0}")]
    InvalidVoxelSpec(String),

    /// A coordinate maps to a cell index that does not fit the 32-bit key range.
    #[error("voxel key overflow for point {index} (coordinate {value})")]
    KeyOverflow { index: usize, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("degenerate feature: row {row} has zero norm")]
    DegenerateFeature { row: usize },

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the failure came from the filesystem rather than from the content of the input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
