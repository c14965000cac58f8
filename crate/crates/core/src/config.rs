//! Scenario files.
//!
//! Robot ids are 1-based in files and 0-based everywhere else.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ci::CiConfig;
use crate::filter::GaussianBelief;
use crate::models::{
    Control, DynamicsKind, DynamicsModel, MeasurementKind, MeasurementModel, ModelHandle, ModelRegistry, RobotId,
};
use crate::network::{make_topology, ChannelConfig, Topology, TopologyKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    /// The document is not valid TOML or does not match the schema.
    Parse(String),
    /// A value is out of range; `field` is a dotted path into the document.
    Invalid { field: String, message: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            Self::Invalid { field, .. } => Some(field),
            Self::Parse(_) => None,
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Parse(msg) => write!(f, "{msg}"),
            Self::Invalid { field, message } => write!(f, "invalid `{field}`: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Open-loop control schedule, evaluated at `t = (k - 1) dt` for the
/// transition into step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSchedule {
    Constant {
        value: f64,
    },
    /// `offset + amplitude * sin(frequency * t + phase)`
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl ControlSchedule {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => offset + amplitude * (frequency * t + phase).sin(),
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Self::Constant { value } => value.is_finite(),
            Self::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => [amplitude, frequency, phase, offset].iter().all(|v| v.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub kind: DynamicsKind,
    /// Seconds per step. Linear scenarios use 1.
    pub dt: f64,
    pub duration: f64,
    /// Diagonal of the per-robot process noise covariance.
    pub process_noise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub kind: TopologyKind,
    /// Only for `custom`; 1-based robot ids.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    /// Robots with absolute measurements, 1-based.
    pub gps: Vec<usize>,
    /// Linear: `[position]`. Dubins: `[x, y, theta]`.
    pub gps_variance: Vec<f64>,
    /// Linear: `[relative position]`. Dubins: `[range, bearing]`.
    pub relative_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSection {
    pub delta: f64,
    #[serde(default = "yes")]
    pub implicit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub tau_goal: f64,
    #[serde(default)]
    pub epsilon1: f64,
    #[serde(default)]
    pub epsilon2: f64,
    #[serde(default)]
    pub adaptive: bool,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Weights on the stacked network state; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

impl Default for CiSection {
    fn default() -> Self {
        Self {
            enabled: false,
            tau_goal: 5.0,
            epsilon1: 0.0,
            epsilon2: 0.0,
            adaptive: false,
            tolerance: default_tolerance(),
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(default = "one")]
    pub cp: f64,
    #[serde(default)]
    pub ci_lossy: bool,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            cp: 1.0,
            ci_lossy: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(default)]
    pub centralized: bool,
    #[serde(default)]
    pub explicit_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSection {
    /// Nominal initial state; the belief starts here.
    pub initial_state: Vec<f64>,
    /// Diagonal of the initial covariance.
    pub initial_variance: Vec<f64>,
    /// Dubins forward speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    /// Linear velocity or Dubins turn rate.
    pub control: ControlSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_run")]
    pub runs: usize,
    pub dynamics: DynamicsSection,
    pub topology: TopologySection,
    pub sensors: SensorSection,
    pub event: EventSection,
    #[serde(default)]
    pub ci: CiSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub baselines: BaselineSection,
    pub robots: Vec<RobotSection>,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

fn one_run() -> usize {
    1
}

fn default_tolerance() -> f64 {
    1e-6
}

fn check_positive(field: &str, values: &[f64]) -> Result<(), ConfigError> {
    for (i, v) in values.iter().enumerate() {
        if !(v.is_finite() && *v > 0.0) {
            return Err(ConfigError::invalid(format!("{field}[{i}]"), format!("must be positive, got {v}")));
        }
    }
    Ok(())
}

fn check_positive_scalar(field: &str, v: f64) -> Result<(), ConfigError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(ConfigError::invalid(field, format!("must be positive, got {v}")));
    }
    Ok(())
}

fn check_len(field: &str, values: &[f64], expected: usize) -> Result<(), ConfigError> {
    if values.len() != expected {
        return Err(ConfigError::invalid(
            field,
            format!("expected {expected} entries, got {}", values.len()),
        ));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn robot_count(&self) -> usize {
        self.robots.len()
    }

    /// State dimension of one robot block.
    pub fn robot_dim(&self) -> usize {
        match self.dynamics.kind {
            DynamicsKind::Linear1d => 1,
            DynamicsKind::Dubins => 3,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.robot_count() * self.robot_dim()
    }

    pub fn steps(&self) -> usize {
        (self.dynamics.duration / self.dynamics.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.robot_dim();
        let n = self.robot_count();
        if self.runs == 0 {
            return Err(ConfigError::invalid("runs", "must be at least 1"));
        }
        if n < 2 {
            return Err(ConfigError::invalid("robots", format!("need at least 2 robots, got {n}")));
        }

        let dyns = &self.dynamics;
        check_positive_scalar("dynamics.dt", dyns.dt)?;
        if !(dyns.duration.is_finite() && dyns.duration >= 0.0) {
            return Err(ConfigError::invalid("dynamics.duration", "must be finite and non-negative"));
        }
        let steps = dyns.duration / dyns.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(ConfigError::invalid(
                "dynamics.duration",
                format!("{} is not a whole number of {}-second steps", dyns.duration, dyns.dt),
            ));
        }
        check_len("dynamics.process_noise", &dyns.process_noise, d)?;
        check_positive("dynamics.process_noise", &dyns.process_noise)?;

        self.topology()?;

        for (i, &g) in self.sensors.gps.iter().enumerate() {
            if g == 0 || g > n {
                return Err(ConfigError::invalid(
                    format!("sensors.gps[{i}]"),
                    format!("robot {g} does not exist (ids are 1..={n})"),
                ));
            }
        }
        check_len("sensors.gps_variance", &self.sensors.gps_variance, d)?;
        check_positive("sensors.gps_variance", &self.sensors.gps_variance)?;
        let relative = if d == 1 { 1 } else { 2 };
        check_len("sensors.relative_variance", &self.sensors.relative_variance, relative)?;
        check_positive("sensors.relative_variance", &self.sensors.relative_variance)?;

        if !(self.event.delta.is_finite() && self.event.delta >= 0.0) {
            return Err(ConfigError::invalid("event.delta", "must be finite and non-negative"));
        }

        let ci = &self.ci;
        check_positive_scalar("ci.tau_goal", ci.tau_goal)?;
        check_positive_scalar("ci.tolerance", ci.tolerance)?;
        for (name, v) in [("ci.epsilon1", ci.epsilon1), ("ci.epsilon2", ci.epsilon2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(name, "must be finite and non-negative"));
            }
        }
        if let Some(alpha) = &ci.alpha {
            check_len("ci.alpha", alpha, n * d)?;
            if let Some(i) = alpha.iter().position(|a| !(a.is_finite() && *a >= 0.0)) {
                return Err(ConfigError::invalid(format!("ci.alpha[{i}]"), "must be non-negative"));
            }
        }

        if !(0.0..=1.0).contains(&self.channel.cp) {
            return Err(ConfigError::invalid(
                "channel.cp",
                format!("must be a probability in [0, 1], got {}", self.channel.cp),
            ));
        }

        for (i, r) in self.robots.iter().enumerate() {
            let field = |name: &str| format!("robots[{i}].{name}");
            check_len(&field("initial_state"), &r.initial_state, d)?;
            if r.initial_state.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::invalid(field("initial_state"), "must be finite"));
            }
            check_len(&field("initial_variance"), &r.initial_variance, d)?;
            check_positive(&field("initial_variance"), &r.initial_variance)?;
            if !r.control.is_finite() {
                return Err(ConfigError::invalid(field("control"), "must be finite"));
            }
            match (self.dynamics.kind, r.speed) {
                (DynamicsKind::Dubins, None) => {
                    return Err(ConfigError::invalid(field("speed"), "required for dubins dynamics"));
                }
                (DynamicsKind::Dubins, Some(v)) if !(v.is_finite() && v >= 0.0) => {
                    return Err(ConfigError::invalid(field("speed"), "must be finite and non-negative"));
                }
                (DynamicsKind::Linear1d, Some(_)) => {
                    return Err(ConfigError::invalid(field("speed"), "only used by dubins dynamics"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        let n = self.robot_count();
        let built = match self.topology.kind {
            TopologyKind::Custom => {
                let mut edges = Vec::with_capacity(self.topology.edges.len());
                for (i, &[a, b]) in self.topology.edges.iter().enumerate() {
                    if a == 0 || b == 0 || a > n || b > n || a == b {
                        return Err(ConfigError::invalid(
                            format!("topology.edges[{i}]"),
                            format!("[{a}, {b}] is not an edge between distinct robots in 1..={n}"),
                        ));
                    }
                    edges.push((a - 1, b - 1));
                }
                Topology::from_edges(n, &edges)
            }
            kind => {
                if !self.topology.edges.is_empty() {
                    return Err(ConfigError::invalid("topology.edges", "only allowed with kind = \"custom\""));
                }
                make_topology(kind, n)
            }
        };
        built.map_err(|e| ConfigError::invalid("topology.kind", e.to_string()))
    }

    pub fn dynamics_model(&self) -> DynamicsModel {
        let q = &self.dynamics.process_noise;
        match self.dynamics.kind {
            DynamicsKind::Linear1d => DynamicsModel::Linear1d { process_noise: q[0] },
            DynamicsKind::Dubins => DynamicsModel::Dubins {
                dt: self.dynamics.dt,
                process_noise: [q[0], q[1], q[2]],
            },
        }
    }

    /// Controls of every robot for the transition into step `k >= 1`.
    pub fn controls_at(&self, k: usize) -> Vec<Control> {
        let t = k.saturating_sub(1) as f64 * self.dynamics.dt;
        self.robots
            .iter()
            .map(|r| match self.dynamics.kind {
                DynamicsKind::Linear1d => Control::Linear {
                    velocity: r.control.at(t),
                },
                DynamicsKind::Dubins => Control::Dubins {
                    speed: r.speed.unwrap_or(0.0),
                    turn_rate: r.control.at(t),
                },
            })
            .collect()
    }

    pub fn has_gps(&self, robot: RobotId) -> bool {
        self.sensors.gps.contains(&(robot + 1))
    }

    /// Every robot's measurement vector: absolute components first, then
    /// relative ones to each neighbor in ascending id.
    pub fn registry(&self, topology: &Topology) -> ModelRegistry {
        let kind = self.dynamics.kind;
        let model = |handle, variance| MeasurementModel::new(handle, variance, kind).expect("validated variance");
        let s = &self.sensors;
        let per_robot = (0..self.robot_count())
            .map(|i| {
                let mut models = Vec::new();
                match kind {
                    DynamicsKind::Linear1d => {
                        if self.has_gps(i) {
                            models.push(model(ModelHandle::absolute(MeasurementKind::LinearSelf, i), s.gps_variance[0]));
                        }
                        for &j in topology.neighbors(i) {
                            models.push(model(
                                ModelHandle::relative(MeasurementKind::LinearRelative, i, j),
                                s.relative_variance[0],
                            ));
                        }
                    }
                    DynamicsKind::Dubins => {
                        if self.has_gps(i) {
                            let gps = [MeasurementKind::GpsX, MeasurementKind::GpsY, MeasurementKind::GpsTheta];
                            for (m, var) in gps.into_iter().zip(&s.gps_variance) {
                                models.push(model(ModelHandle::absolute(m, i), *var));
                            }
                        }
                        for &j in topology.neighbors(i) {
                            models.push(model(
                                ModelHandle::relative(MeasurementKind::Range, i, j),
                                s.relative_variance[0],
                            ));
                            models.push(model(
                                ModelHandle::relative(MeasurementKind::Bearing, i, j),
                                s.relative_variance[1],
                            ));
                        }
                    }
                }
                models
            })
            .collect();
        ModelRegistry::new(per_robot)
    }

    pub fn nominal_state(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.state_dim(),
            self.robots.iter().flat_map(|r| r.initial_state.iter().copied()),
        )
    }

    pub fn initial_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.state_dim(),
            self.robots.iter().flat_map(|r| r.initial_variance.iter().copied()),
        ))
    }

    pub fn initial_belief(&self) -> GaussianBelief {
        GaussianBelief::new(self.nominal_state(), self.initial_covariance())
    }

    pub fn alpha(&self) -> DVector<f64> {
        match &self.ci.alpha {
            Some(a) => DVector::from_column_slice(a),
            None => DVector::from_element(self.state_dim(), 1.0),
        }
    }

    pub fn ci_config(&self) -> CiConfig {
        CiConfig {
            tau_goal: self.ci.tau_goal,
            epsilon1: self.ci.epsilon1,
            epsilon2: self.ci.epsilon2,
            tolerance: self.ci.tolerance,
            adaptive: self.ci.adaptive,
        }
    }

    pub fn channel_config(&self) -> ChannelConfig {
        ChannelConfig {
            cp: self.channel.cp,
            ci_lossy: self.channel.ci_lossy,
        }
    }

    /// Whether state component `c` of the stacked vector is an angle.
    pub fn is_angular(&self, c: usize) -> bool {
        self.dynamics.kind == DynamicsKind::Dubins && c % 3 == 2
    }
}
