//! Orchestration service: persistent cases and runs, a bounded worker pool,
//! the HTTP review API and the `feat` command line.

pub mod api;
pub mod config;
pub mod engine;
pub mod runs;
pub mod store;

use thiserror::Error;

pub use config::ServiceConfig;
pub use runs::{RunRequest, RunView, ReportView, Service};
pub use store::{Recovery, RunEntry, Store, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("startup: {0}")]
    Startup(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("{0}")]
    Conflict(String),
    #[error("stale version: critique targets v{target} but the current draft is v{current}")]
    Stale { target: u32, current: u32 },
    #[error("run {0} is busy")]
    Busy(String),
    #[error("{0}")]
    Failed(String),
    #[error("persistence: {0}")]
    Persist(String),
}
