//! Online autobidding under return-on-spend and budget constraints.

pub mod auction;
pub mod check;
pub mod config;
pub mod error;
pub mod mirror;
pub mod oracle;
pub mod policy;
pub mod quadrature;
pub mod report;
pub mod sim;

pub use auction::{AuctionModel, CustomAllocation, Query};
pub use config::{Distribution, ExperimentConfig};
pub use error::{AuctionError, ConfigError, MirrorError, OracleError, PolicyError, SimError};
pub use mirror::{DualState, MirrorMap};
pub use oracle::{OfflineInstance, OracleMethod, OracleResult};
pub use policy::{Policy, PolicyKind, PolicyOptions, StepOutcome};
pub use sim::{ExperimentReport, TrialMetrics, TrialSpec};
