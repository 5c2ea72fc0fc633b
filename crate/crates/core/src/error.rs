use thiserror::Error;

/// Errors raised by the planning library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid reference path: {0}")]
    InvalidPath(String),

    #[error("arc length {s} outside path of length {length}")]
    ArcLengthOutOfRange { s: f64, length: f64 },

    #[error("invalid footprint {length} x {width}")]
    InvalidFootprint { length: f64, width: f64 },

    #[error("invalid stop parameters (u_stop={u_stop}, dt={dt}, v_max={v_max})")]
    InvalidStopParams { u_stop: f64, dt: f64, v_max: f64 },

    #[error("agent {agent} prediction covers {available} steps, step {requested} requested")]
    HorizonExhausted {
        agent: usize,
        requested: usize,
        available: usize,
    },

    #[error("observation has negligible likelihood under every motion pattern of agent {agent}")]
    DegenerateObservation { agent: usize },

    #[error("observation lists {got} agents, belief has {expected}")]
    ObservationMismatch { expected: usize, got: usize },

    #[error("no horizon-spanning path exists in the planning graph")]
    InfeasibleGraph,

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid discrete model: {0}")]
    InvalidModel(String),

    #[error("control {control} is not admissible at step {step}")]
    InadmissibleControl { control: usize, step: usize },

    #[error("enumeration exceeded {cap} history nodes")]
    InstanceTooLarge { cap: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("config error{}: {message}", field.as_ref().map(|f| format!(" in `{f}`")).unwrap_or_default())]
    Config { field: Option<String>, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{failed} of {total} trials failed")]
    TrialFailures { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Short machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } | Error::InvalidScenario(_) => "config",
            Error::Io { .. } => "io",
            Error::TrialFailures { .. } => "trials",
            _ => "harness",
        }
    }
}
