use cps_core::dp::artifact::ArtifactError;
use cps_core::dp::DpError;
use cps_core::gaussian::GaussianError;
use cps_core::oracle::OracleError;
use cps_core::simulator::SimError;
use cps_core::{ConfigError, SystemError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Budget(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse(_) => "parse",
            CliError::Validation(_) => "validation",
            CliError::Budget(_) => "budget",
            CliError::Io(_) => "io",
            CliError::Check(_) => "check",
            CliError::Other(_) => "other",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Budget(_) => 4,
            CliError::Io(_) | CliError::Check(_) | CliError::Other(_) => 1,
        }
    }

    /// `error kind=<kind> message=<text>` on a single line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error kind={} message={}", self.kind(), msg)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            ConfigError::Parse(_) => CliError::Parse(e.to_string()),
            ConfigError::Validation(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DpError> for CliError {
    fn from(e: DpError) -> Self {
        match e {
            DpError::TooManyVectors { .. } | DpError::MeshTooLarge { .. } | DpError::TreeTooLarge { .. } => {
                CliError::Budget(e.to_string())
            }
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Budget { .. } => CliError::Budget(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Solve(d) => d.into(),
            SimError::System(s) => s.into(),
            SimError::NoEpisodes => CliError::Validation(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<GaussianError> for CliError {
    fn from(e: GaussianError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::Parse(e.to_string())
    }
}
