use thiserror::Error;

use crate::channel::ChannelError;
use crate::phantom::MeshError;
use crate::robot::RobotError;
use crate::ultrasound::MeasureError;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("empty sample")]
    EmptySample,
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
