//! Error classification for process exit codes.
//!
//! 0 success, 2 usage (argument parsing), 3 validation (configs, bounds,
//! flag combinations), 4 data (missing or corrupt files), 5 internal.

use nascty_core::attack_eval::AttackError;
use nascty_core::evolution::EvolutionError;
use nascty_core::genome::{ExpressError, GenomeError};
use nascty_core::neural_engine::NetError;
use nascty_core::trace_model::TraceError;
use nascty_core::trace_store::StoreError;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 3,
            CliError::Data(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "validation error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::DeficientLabel { .. } => CliError::Data(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GenomeError> for CliError {
    fn from(e: GenomeError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ExpressError> for CliError {
    fn from(e: ExpressError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EvolutionError> for CliError {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            EvolutionError::Io(_)
            | EvolutionError::CorruptCheckpoint(_)
            | EvolutionError::UnsupportedCheckpointVersion(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Io(_) | NetError::Corrupt(_) | NetError::UnsupportedVersion(_) => {
                CliError::Data(e.to_string())
            }
            NetError::InvalidSpec { .. } | NetError::InputWidth { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::Net(inner) => inner.into(),
            AttackError::TooFewTraces { .. } | AttackError::MixedKeys | AttackError::EmptyAttack => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
