//! Scenario management: grid expansion, asynchronous execution over a worker
//! pool, a file-backed result store, and the read-side queries the gateway
//! serves.

pub mod error;
pub mod export;
pub mod grid;
pub mod job;
pub mod query;
pub mod service;
pub mod store;

pub use error::{ErrorClass, MiddlewareError, Result};
pub use grid::{expand_scenario_grid, scenario_name, CaseConfig, VariableAdjustment};
pub use job::{JobRecord, JobStatus, ScenarioProgress, ScenarioStatus};
pub use query::{aggregate_annual, BranchQuery, IndexMode, Resolution};
pub use service::{Middleware, MiddlewareOptions, ScenarioRunner};
pub use store::{default_data_dir, CaseManifest, Store, DATA_DIR_ENV};
