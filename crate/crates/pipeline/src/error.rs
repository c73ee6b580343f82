use phasemap_core::ctm::CtmError;
use phasemap_core::ipeps::SuError;
use phasemap_core::mapper::MapperError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("configuration error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("store error: {0}")]
    Store(String),
    #[error("malformed payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mapper(#[from] MapperError),
    #[error(transparent)]
    Su(#[from] SuError),
    #[error(transparent)]
    Ctm(#[from] CtmError),
}

impl PipelineError {
    /// 1 for usage and configuration problems, 3 for everything fatal.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Toml(_) | PipelineError::Argument(_) => 1,
            PipelineError::Mapper(MapperError::Argument(_)) => 1,
            _ => 3,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
