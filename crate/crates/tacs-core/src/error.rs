//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file or configuration (maps to CLI exit code 2).
    #[error("schema error: {0}")]
    Schema(String),

    /// Failure inside the processing pipeline (maps to CLI exit code 3).
    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("pose ({x:.2}, {y:.2}) is outside the grid")]
    PoseOffGrid { x: f64, y: f64 },

    #[error("pose ({x:.2}, {y:.2}) lies on an obstacle cell")]
    PoseOnObstacle { x: f64, y: f64 },

    /// Robot cell is not traversable; carries the nearest traversable cell
    /// when one exists.
    #[error("robot cell {cell:?} is not traversable (nearest traversable: {nearest:?})")]
    RobotCellNotTraversable {
        cell: (i32, i32),
        nearest: Option<(i32, i32)>,
    },

    #[error("normal equations stay singular; under-constrained variables: {ids:?}")]
    UnderConstrained { ids: Vec<u32> },

    #[error("variable {var} is still referenced by factors {factors:?}")]
    VariableInUse { var: u32, factors: Vec<u32> },

    #[error("unknown variable id {0}")]
    UnknownVariable(u32),

    #[error("region masks have different resolutions ({0} vs {1})")]
    ResolutionMismatch(f64, f64),

    #[error("trajectories could not be associated: {0}")]
    TrajectoryMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code bucket: 2 for schema problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
