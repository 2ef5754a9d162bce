use thiserror::Error;

use crate::timestamp::Micros;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("latency matrix: {0}")]
    Latency(String),
    #[error("unknown node {0}")]
    UnknownNode(u32),
    #[error("unknown region {0:?}")]
    UnknownRegion(String),
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error("invalid topology: {0}")]
    Topology(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("deadlock at {at}us: event queue empty with blocked waiters: {}", waiters.join("; "))]
    Deadlock { at: Micros, waiters: Vec<String> },
    #[error("simulation did not finish before {horizon}us; still waiting: {}", waiters.join("; "))]
    Horizon { horizon: Micros, waiters: Vec<String> },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("service {0:?} is already registered")]
    Duplicate(String),
    #[error("unknown service {0:?}")]
    Unknown(String),
}
