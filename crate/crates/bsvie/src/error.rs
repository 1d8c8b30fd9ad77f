use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value produced in {context}")]
    NonFinite { context: String },

    #[error("non-finite forward state at path {path}, step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("non-finite rollout residual at path {path}, eval index {index}")]
    NonFiniteResidual { path: usize, index: usize },

    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("training diverged at step {step}: loss {loss:.3e} exceeds {limit:.3e}")]
    Diverged { step: usize, loss: f64, limit: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("checkpoint does not match problem: expected {expected}, got {got}")]
    CheckpointMismatch { expected: String, got: String },

    #[error("problem `{0}` has no closed-form reference solution")]
    NoClosedForm(String),

    #[error("stability precondition h*(8*K1^2+1) < 1 violated: need N >= {required_n}")]
    StabilityPrecondition { required_n: usize },

    #[error("corrupt or unreadable checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
