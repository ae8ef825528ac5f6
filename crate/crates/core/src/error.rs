use std::path::PathBuf;

/// Errors produced anywhere in the separation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("empty audio: {0}")]
    EmptyAudio(String),

    #[error("invalid STFT configuration: {0}")]
    InvalidStftConfig(String),

    #[error("analysis/synthesis window pair is not COLA at hop {hop} (ripple {ripple:.3e})")]
    NonCola { hop: usize, ripple: f64 },

    #[error("signal of {len} samples is shorter than one window ({window})")]
    SignalTooShort { len: usize, window: usize },

    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("constraint violated: largest eigenvalue {lambda_max} must be below nu/2 = {half_nu}")]
    ConstraintViolation { lambda_max: f64, half_nu: f64 },

    #[error("normalizer evaluation failed: {0}")]
    Normalizer(String),

    #[error("degenerate scatter matrix: {0}")]
    DegenerateScatter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("zero-energy reference signal at index {0}")]
    ZeroEnergyReference(usize),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
