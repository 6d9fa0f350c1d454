//! Coupled food-energy-water (FEW) nexus simulation engine.
//!
//! The engine couples three sector models over a monthly horizon:
//!
//! ```text
//! crop shares (fmlm) -> water demand + allocation (water) -> electricity demand + dispatch (energy)
//!                              ^                                          |
//!                              +------ power-plant cooling water ---------+
//! ```
//!
//! Interchangeable parts of the engine (coupling scheme, water allocator,
//! crop-share source) sit behind traits and are looked up by name through
//! [`registry`], so callers select them from configuration or the command line.

pub mod branch;
pub mod coupling;
pub mod dataset;
pub mod energy;
pub mod error;
pub mod fmlm;
pub mod indices;
pub mod registry;
pub mod scenario;
pub mod series;
pub mod units;
pub mod water;

pub use branch::{BranchNode, BranchTree, Sector, VariableDef};
pub use coupling::{Engine, EngineConfig};
pub use dataset::{load_bundled, load_dataset, StudyAreaDataset};
pub use error::{CoreError, Result};
pub use scenario::{ScenarioResult, ScenarioSpec};
pub use series::{Horizon, MonthlySeries, YearMonth};
pub use units::{SeriesKind, Unit};
