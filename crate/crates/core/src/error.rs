use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value produced by `{op}` during {phase}")]
    NonFinite { op: &'static str, phase: &'static str },

    #[error("backward already ran on this graph")]
    GraphConsumed,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGrad(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}
