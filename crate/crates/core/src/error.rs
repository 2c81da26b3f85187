use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    InvalidMatrix,
    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimError { expected: usize, got: usize },
    #[error("matrix is singular or not positive definite")]
    SingularMatrix,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("features span the zero subspace")]
    DegenerateFeatures,
    #[error("a design needs at least {need} arms, got {got}")]
    TooFewArms { need: usize, got: usize },
    #[error("invalid feature set: {0}")]
    InvalidFeatures(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("arm index {0} out of range")]
    InvalidArm(usize),
    #[error(
        "Frank-Wolfe did not converge after {iterations} iterations \
         (max norm^2 {max_norm_sq:.6} vs target {target:.6})"
    )]
    ConvergenceError {
        iterations: usize,
        max_norm_sq: f64,
        target: f64,
        best: Box<crate::design::DesignPolicy>,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("non-finite reward or feature in sample")]
    InvalidSample,
    #[error("ridge regularizer must be positive, got {0}")]
    InvalidRegularizer(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("arm index {arm} out of range for {k} arms")]
    InvalidArm { arm: usize, k: usize },
    #[error("no unique best arm (top mean reward is tied)")]
    TiedBestArm,
    #[error("instance generation failed: {0}")]
    GenerationError(String),
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Design(#[from] DesignError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SbeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("phase length overflows the integer range at phase {phase}")]
    ScheduleOverflow { phase: u32 },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sbe(#[from] SbeError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl HarnessError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            _ => 3,
        }
    }
}
