use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("element {element} has non-positive rest area {area:e}")]
    InvertedRestElement { element: usize, area: f64 },

    #[error("edge ({0}, {1}) is shared by an invalid number of triangles or with inconsistent orientation")]
    NonManifold(usize, usize),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("element {element} is degenerate (det = {det:e})")]
    DegenerateElement { element: usize, det: f64 },

    #[error("non-positive deformation gradient determinant {det:e}")]
    NonPositiveDeterminant { det: f64 },

    #[error("non-positive contact distance {0:e}")]
    NonPositiveDistance(f64),

    #[error("degenerate contact edge ({0}, {1})")]
    DegenerateEdge(usize, usize),

    #[error("Newton solve diverged{}: {reason}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NewtonDivergence { step: Option<usize>, reason: String },

    #[error("singular linear system{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    SingularSystem { step: Option<usize> },

    #[error("unknown objective kind `{0}`")]
    UnknownKind(String),

    #[error("line search failed: {0}")]
    LineSearchFailure(String),

    #[error("forward solve failed: {0}")]
    ForwardSolveFailure(String),

    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error("dangling reference: {0}")]
    DanglingReference(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    /// Whether the error originates from a failed solve, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NewtonDivergence { .. }
                | Error::SingularSystem { .. }
                | Error::NonPositiveDeterminant { .. }
                | Error::NonPositiveDistance(_)
                | Error::DegenerateElement { .. }
                | Error::LineSearchFailure(_)
                | Error::ForwardSolveFailure(_)
        )
    }
}

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const SOLVER: i32 = 3;
    pub const GRAD_CHECK: i32 = 4;
}

impl Error {
    /// Input problems map to 2, failed solves to 3.
    pub fn exit_code(&self) -> i32 {
        if self.is_solver_failure() {
            exit::SOLVER
        } else {
            match self {
                Error::Io(_) => exit::OTHER,
                _ => exit::INPUT,
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
