use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid parameters: {0}")]
    InvalidGrid(String),

    #[error("cell id {id} out of range for grid of {len} cells")]
    InvalidCell { id: usize, len: usize },

    #[error("pattern has {got} cells, expected {expected}")]
    PatternCardinality { got: usize, expected: usize },

    #[error("cell {0} is not served by the pattern")]
    CellNotServed(usize),

    #[error("cell {0} appears more than once in the pattern")]
    DuplicateCell(usize),

    #[error("{beams} beams cannot be placed on {cells} cells")]
    TooManyBeams { beams: usize, cells: usize },

    #[error("hotspot count {count} exceeds cell count {cells}")]
    TooManyHotspots { count: usize, cells: usize },

    #[error("demand vector has length {got}, expected {expected}")]
    DemandLength { got: usize, expected: usize },

    #[error("cell {0} is already selected")]
    AlreadySelected(usize),

    #[error("node has no children to select from")]
    NoChildren,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("malformed cache snapshot: {0}")]
    Snapshot(String),

    #[error("malformed demand trace at line {line}: {msg}")]
    Trace { line: usize, msg: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
