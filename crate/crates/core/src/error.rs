use thiserror::Error;

use crate::mesh::{Direction, RouterId};

/// Rejected configuration or query parameters.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },

    #[error("unknown {kind} policy `{name}`")]
    UnknownPolicy { kind: &'static str, name: String },

    #[error("failed to parse configuration: {0}")]
    Parse(String),
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

/// Misuse of a buffer or state operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("enqueue into full buffer (capacity {capacity})")]
    BufferFull { capacity: usize },

    #[error("dequeue or peek on empty buffer")]
    BufferEmpty,

    #[error("destination {dest} is outside the mesh")]
    BadDestination { dest: RouterId },
}

/// Phase of a clock cycle, used for fault diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Generate,
    Prep,
    Advance,
    UpdatePriority,
    UpdateNoise,
}

/// An invariant broke while a cycle was executing.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("engine fault at cycle {cycle} ({phase:?}, router {router:?}, port {port:?}): {message}")]
pub struct EngineFault {
    pub cycle: u64,
    pub phase: Phase,
    pub router: Option<RouterId>,
    pub port: Option<Direction>,
    pub message: String,
}

impl EngineFault {
    pub(crate) fn new(cycle: u64, phase: Phase, message: impl Into<String>) -> EngineFault {
        EngineFault {
            cycle,
            phase,
            router: None,
            port: None,
            message: message.into(),
        }
    }

    pub(crate) fn at(mut self, router: RouterId, port: Option<Direction>) -> EngineFault {
        self.router = Some(router);
        self.port = port;
        self
    }
}

/// Failures of the Monte-Carlo estimator.
#[derive(Debug, Error)]
pub enum SmcError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Engine(#[from] EngineFault),

    #[error("cannot merge partial estimates: {0}")]
    Mismatch(String),
}

/// Failures of exhaustive exploration.
#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Engine(#[from] EngineFault),

    #[error("state budget of {limit} exceeded")]
    Exhausted { limit: usize },

    #[error("graph is incomplete; result would be inconclusive")]
    Incomplete,
}
