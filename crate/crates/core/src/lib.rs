//! Event-triggered cooperative localization with implicit measurement
//! fusion and Covariance Intersection.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod ci;
pub mod config;
pub mod filter;
pub mod fixtures;
pub mod models;
pub mod network;
pub mod runner;
pub mod stats;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use agent::{AgentError, AgentState, MeasurementComponent, SendDecision};
pub use ci::{ci_fuse, ci_trigger, update_tau, weighted_trace, CiConfig, CiError, CiState};
pub use config::{ConfigError, ControlSchedule, ScenarioConfig};
pub use filter::{fuse_explicit_scalar, fuse_implicit_scalar, predict, FilterError, GaussianBelief, ImplicitOutcome};
pub use models::{
    wrap_angle, Control, DynamicsKind, DynamicsModel, MeasurementKind, MeasurementModel, ModelError, ModelHandle,
    ModelRegistry, RobotId,
};
pub use network::{
    make_topology, Channel, ChannelConfig, CommStats, Message, MessageKind, NetworkError, Topology, TopologyKind,
    Verdict, WireComponent,
};
pub use runner::{
    centralized_baseline, explicit_only_baseline, monte_carlo, run_scenario, simulate, Batch, BatchSummary, Realization,
    RunError, RunMetrics, RunSummary, Scenario, ScenarioRun,
};
pub use stats::{truncated_moments, StatsError, TruncatedMoments, TruncationWindow};
