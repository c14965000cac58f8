//! Robot dynamics and scalar measurement models.
//!
//! The network state stacks every robot's block `[x_1, ..., x_N]`, each of
//! length [`DynamicsModel::state_dim`]. Robot ids are zero-based here; the
//! configuration and output layers translate to one-based ids.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type RobotId = usize;

/// Below this separation the bearing (and range gradient) is undefined.
pub const MIN_SEPARATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("robots {taker} and {subject} are coincident; bearing is undefined")]
    CoincidentPositions { taker: RobotId, subject: RobotId },
    #[error("points are coincident; bearing is undefined")]
    Coincident,
    #[error("measurement kind {kind:?} is not defined for {dynamics:?} dynamics")]
    IncompatibleKind {
        kind: MeasurementKind,
        dynamics: DynamicsKind,
    },
    #[error("measurement noise variance must be positive, got {0}")]
    NonPositiveVariance(f64),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

pub fn linear1d_step(x: f64, u: f64, noise: f64) -> f64 {
    x + u + noise
}

/// Planar pose `(x, y, heading)`.
pub type Pose = [f64; 3];

pub fn dubins_step(pose: Pose, speed: f64, turn_rate: f64, dt: f64, noise: [f64; 3]) -> Pose {
    let [x, y, theta] = pose;
    [
        x + speed * theta.cos() * dt + noise[0],
        y + speed * theta.sin() * dt + noise[1],
        wrap_angle(theta + turn_rate * dt + noise[2]),
    ]
}

pub fn dubins_jacobian(pose: Pose, speed: f64, dt: f64) -> Matrix3<f64> {
    let theta = pose[2];
    let mut a = Matrix3::identity();
    a[(0, 2)] = -speed * theta.sin() * dt;
    a[(1, 2)] = speed * theta.cos() * dt;
    a
}

/// Range and (global) bearing from `from` to `to`.
pub fn range_bearing(from: [f64; 2], to: [f64; 2]) -> Result<(f64, f64), ModelError> {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    let range = dx.hypot(dy);
    if range < MIN_SEPARATION {
        return Err(ModelError::Coincident);
    }
    Ok((range, wrap_angle(dy.atan2(dx))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpsComponent {
    X,
    Y,
    Theta,
}

/// Absolute measurement of one pose component (noise added by the caller).
pub fn gps_measurement(pose: Pose, component: GpsComponent) -> f64 {
    match component {
        GpsComponent::X => pose[0],
        GpsComponent::Y => pose[1],
        GpsComponent::Theta => pose[2],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    Linear1d,
    Dubins,
}

/// Known control input of one robot for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Control {
    /// Displacement per step of a 1-D robot.
    Linear { velocity: f64 },
    /// Forward speed (m/s) and turn rate (rad/s) of a Dubins vehicle.
    Dubins { speed: f64, turn_rate: f64 },
}

/// Per-robot transition model shared by every robot in a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsModel {
    Linear1d { process_noise: f64 },
    Dubins { dt: f64, process_noise: [f64; 3] },
}

impl DynamicsModel {
    pub fn kind(&self) -> DynamicsKind {
        match self {
            Self::Linear1d { .. } => DynamicsKind::Linear1d,
            Self::Dubins { .. } => DynamicsKind::Dubins,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Self::Linear1d { .. } => 1,
            Self::Dubins { .. } => 3,
        }
    }

    /// Indices of angular state components within one robot block.
    pub fn is_angular(&self, component: usize) -> bool {
        matches!(self, Self::Dubins { .. }) && component == 2
    }

    /// Noise-free transition of one robot block.
    pub fn propagate(&self, block: &[f64], control: Control) -> Vec<f64> {
        self.step_with_noise(block, control, &[0.0; 3])
    }

    pub fn step_with_noise(&self, block: &[f64], control: Control, noise: &[f64]) -> Vec<f64> {
        match (self, control) {
            (Self::Linear1d { .. }, Control::Linear { velocity }) => {
                vec![linear1d_step(block[0], velocity, noise[0])]
            }
            (Self::Dubins { dt, .. }, Control::Dubins { speed, turn_rate }) => {
                let pose = [block[0], block[1], block[2]];
                dubins_step(pose, speed, turn_rate, *dt, [noise[0], noise[1], noise[2]]).to_vec()
            }
            _ => panic!("control {control:?} does not match dynamics {:?}", self.kind()),
        }
    }

    /// Jacobian of the transition for one robot block at `block`.
    pub fn jacobian(&self, block: &[f64], control: Control) -> DMatrix<f64> {
        match (self, control) {
            (Self::Linear1d { .. }, Control::Linear { .. }) => DMatrix::identity(1, 1),
            (Self::Dubins { dt, .. }, Control::Dubins { speed, .. }) => {
                let a = dubins_jacobian([block[0], block[1], block[2]], speed, *dt);
                DMatrix::from_iterator(3, 3, a.iter().copied())
            }
            _ => panic!("control {control:?} does not match dynamics {:?}", self.kind()),
        }
    }

    pub fn process_noise(&self) -> DMatrix<f64> {
        match self {
            Self::Linear1d { process_noise } => DMatrix::from_element(1, 1, *process_noise),
            Self::Dubins { process_noise, .. } => {
                DMatrix::from_diagonal(&DVector::from_column_slice(process_noise))
            }
        }
    }

    /// Standard deviations of the per-component process noise.
    pub fn process_noise_std(&self) -> Vec<f64> {
        match self {
            Self::Linear1d { process_noise } => vec![process_noise.sqrt()],
            Self::Dubins { process_noise, .. } => process_noise.iter().map(|q| q.sqrt()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    GpsX,
    GpsY,
    GpsTheta,
    Range,
    Bearing,
    LinearSelf,
    LinearRelative,
}

impl MeasurementKind {
    pub fn is_relative(self) -> bool {
        matches!(self, Self::Range | Self::Bearing | Self::LinearRelative)
    }

    pub fn is_angular(self) -> bool {
        matches!(self, Self::Bearing | Self::GpsTheta)
    }

    fn dynamics(self) -> DynamicsKind {
        match self {
            Self::LinearSelf | Self::LinearRelative => DynamicsKind::Linear1d,
            _ => DynamicsKind::Dubins,
        }
    }
}

/// Identifies one scalar measurement stream: what is measured, by whom, of whom.
/// For absolute kinds `subject == taker`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelHandle {
    pub kind: MeasurementKind,
    pub taker: RobotId,
    pub subject: RobotId,
}

impl ModelHandle {
    pub fn absolute(kind: MeasurementKind, robot: RobotId) -> Self {
        Self {
            kind,
            taker: robot,
            subject: robot,
        }
    }

    pub fn relative(kind: MeasurementKind, taker: RobotId, subject: RobotId) -> Self {
        Self {
            kind,
            taker,
            subject,
        }
    }
}

/// Scalar measurement model `y = h(x) + v`, `v ~ N(0, variance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub handle: ModelHandle,
    pub variance: f64,
    pub state_dim: usize,
}

impl MeasurementModel {
    pub fn new(handle: ModelHandle, variance: f64, dynamics: DynamicsKind) -> Result<Self, ModelError> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(ModelError::NonPositiveVariance(variance));
        }
        if handle.kind.dynamics() != dynamics {
            return Err(ModelError::IncompatibleKind {
                kind: handle.kind,
                dynamics,
            });
        }
        let state_dim = match dynamics {
            DynamicsKind::Linear1d => 1,
            DynamicsKind::Dubins => 3,
        };
        Ok(Self {
            handle,
            variance,
            state_dim,
        })
    }

    pub fn is_angular(&self) -> bool {
        self.handle.kind.is_angular()
    }

    fn offset(&self, robot: RobotId) -> usize {
        robot * self.state_dim
    }

    fn planar(&self, x: &DVector<f64>, robot: RobotId) -> [f64; 2] {
        let o = self.offset(robot);
        [x[o], x[o + 1]]
    }

    fn coincident(&self) -> ModelError {
        ModelError::CoincidentPositions {
            taker: self.handle.taker,
            subject: self.handle.subject,
        }
    }

    /// Noise-free predicted measurement `h(x)` for a network state.
    pub fn predict(&self, x: &DVector<f64>) -> Result<f64, ModelError> {
        let ModelHandle {
            kind,
            taker,
            subject,
        } = self.handle;
        let t = self.offset(taker);
        Ok(match kind {
            MeasurementKind::GpsX | MeasurementKind::LinearSelf => x[t],
            MeasurementKind::GpsY => x[t + 1],
            MeasurementKind::GpsTheta => wrap_angle(x[t + 2]),
            MeasurementKind::LinearRelative => x[self.offset(subject)] - x[t],
            MeasurementKind::Range => {
                let from = self.planar(x, taker);
                let to = self.planar(x, subject);
                (to[0] - from[0]).hypot(to[1] - from[1])
            }
            MeasurementKind::Bearing => {
                range_bearing(self.planar(x, taker), self.planar(x, subject))
                    .map_err(|_| self.coincident())?
                    .1
            }
        })
    }

    /// Gradient of `h` with respect to the full network state.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        let ModelHandle {
            kind,
            taker,
            subject,
        } = self.handle;
        let mut row = DVector::zeros(x.len());
        let t = self.offset(taker);
        let s = self.offset(subject);
        match kind {
            MeasurementKind::GpsX | MeasurementKind::LinearSelf => row[t] = 1.0,
            MeasurementKind::GpsY => row[t + 1] = 1.0,
            MeasurementKind::GpsTheta => row[t + 2] = 1.0,
            MeasurementKind::LinearRelative => {
                row[s] = 1.0;
                row[t] = -1.0;
            }
            MeasurementKind::Range | MeasurementKind::Bearing => {
                let dx = x[s] - x[t];
                let dy = x[s + 1] - x[t + 1];
                let r2 = dx * dx + dy * dy;
                let r = r2.sqrt();
                if r < MIN_SEPARATION {
                    return Err(self.coincident());
                }
                let (gx, gy) = if kind == MeasurementKind::Range {
                    (dx / r, dy / r)
                } else {
                    (-dy / r2, dx / r2)
                };
                row[s] = gx;
                row[s + 1] = gy;
                row[t] = -gx;
                row[t + 1] = -gy;
            }
        }
        Ok(row)
    }

    /// `y - predicted`, wrapped for angular kinds.
    pub fn residual(&self, y: f64, predicted: f64) -> f64 {
        let r = y - predicted;
        if self.is_angular() {
            wrap_angle(r)
        } else {
            r
        }
    }
}

/// Every robot's measurement streams, in the fixed sensor order each robot
/// uses when fusing and sending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistry {
    per_robot: Vec<Vec<MeasurementModel>>,
}

impl ModelRegistry {
    pub fn new(per_robot: Vec<Vec<MeasurementModel>>) -> Self {
        Self { per_robot }
    }

    pub fn robots(&self) -> usize {
        self.per_robot.len()
    }

    /// Streams taken by `robot`, in sensor order.
    pub fn taken_by(&self, robot: RobotId) -> &[MeasurementModel] {
        &self.per_robot[robot]
    }

    pub fn lookup(&self, handle: &ModelHandle) -> Option<&MeasurementModel> {
        self.per_robot
            .get(handle.taker)?
            .iter()
            .find(|m| m.handle == *handle)
    }

    pub fn all(&self) -> impl Iterator<Item = &MeasurementModel> {
        self.per_robot.iter().flatten()
    }
}

/// True network state at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthState {
    pub state: DVector<f64>,
    pub k: usize,
}
