use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("layer {layer}: tensor holds {actual} bytes, shape requires {expected}")]
    ShapeMismatch {
        layer: usize,
        expected: usize,
        actual: usize,
    },

    #[error("unknown layer kind `{0}`")]
    UnknownLayerKind(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no metadata recorded for write {seq} to row {row}")]
    MissingMetadata { seq: u64, row: usize },

    #[error("row {row} out of range for a memory of {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },

    #[error("per-cell counters would overflow: {0} dwell units exceed the 32-bit budget")]
    CounterOverflow(u64),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable tag, used in the CLI's JSON error output and
    /// mirrored by the FFI status codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Manifest { .. } => "manifest",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::UnknownLayerKind(_) => "unknown_layer_kind",
            Error::InvalidParam(_) => "invalid_param",
            Error::Empty(_) => "empty_input",
            Error::MissingMetadata { .. } => "missing_metadata",
            Error::RowOutOfRange { .. } => "row_out_of_range",
            Error::CounterOverflow(_) => "counter_overflow",
            Error::Config(_) => "config",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }
}
