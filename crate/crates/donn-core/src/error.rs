use thiserror::Error;

/// Errors produced by the emulator and training engine.
#[derive(Debug, Error)]
pub enum DonnError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-positive propagation distance")]
    NonPositiveDistance,

    #[error("non-positive wavelength")]
    NonPositiveWavelength,

    #[error("non-positive temperature")]
    NonPositiveTemperature,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("detector region out of bounds: {0}")]
    RegionOutOfBounds(String),

    #[error("device table: {0}")]
    DeviceTable(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("label {0} out of range 0..10")]
    LabelOutOfRange(u8),

    #[error("quantization: {0}")]
    Quantization(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DonnError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        DonnError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DonnError>;
