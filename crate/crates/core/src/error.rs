use thiserror::Error;

/// Errors raised by the toolkit. Every message names the module that raised
/// it and the precondition that was violated.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model: {0}")]
    Domain(String),
    #[error("{module}: precondition violated: {message}")]
    Precondition {
        module: &'static str,
        message: String,
    },
    #[error("{module}: singular system: {message}")]
    Singular {
        module: &'static str,
        message: String,
    },
    #[error("sliding: type-I degeneracy, anchor velocity has no effect on sliding (|g_lambda| = {norm:e})")]
    TypeI { norm: f64 },
    #[error("sliding: type-II degeneracy, quasistatic assumption is violated (lambda_den = {lambda_den:e})")]
    TypeII { lambda_den: f64 },
    #[error("{module}: geometry: {message}")]
    Geometry {
        module: &'static str,
        message: String,
    },
    #[error("wrench: linear program did not terminate after {iterations} pivots")]
    LpIterationLimit { iterations: usize },
    #[error("planner: {0}")]
    Planning(String),
    #[error("simulator: finger {finger} at t = {time:.9}: {source}")]
    Simulation {
        finger: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn precondition(module: &'static str, message: impl Into<String>) -> Self {
        Error::Precondition {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn singular(module: &'static str, message: impl Into<String>) -> Self {
        Error::Singular {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn geometry(module: &'static str, message: impl Into<String>) -> Self {
        Error::Geometry {
            module,
            message: message.into(),
        }
    }

    /// Short machine-readable tag, used by the command line for diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Precondition { .. } => "precondition",
            Error::Singular { .. } => "singular",
            Error::TypeI { .. } => "degenerate_type_i",
            Error::TypeII { .. } => "degenerate_type_ii",
            Error::Geometry { .. } => "geometry",
            Error::LpIterationLimit { .. } => "lp_iteration_limit",
            Error::Planning(_) => "planning_failed",
            Error::Simulation { source, .. } => source.code(),
            Error::Parse(_) => "parse",
        }
    }

    /// True for malformed input, as opposed to a well-formed problem that has
    /// no solution.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Parse(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
