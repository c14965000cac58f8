//! Per-robot event-triggered estimator.
//!
//! Every agent keeps its own belief over the whole network and, per
//! neighbor, a *common* belief that tracks only what crossed that pair's
//! channel. Send decisions compare each measurement against the predicted
//! common belief, so the receiver knows the exact interval a censored value
//! fell in.
//!
//! A step is split around the synchronous message barrier:
//!
//! 1. [`AgentState::begin_step`] predicts all beliefs, fuses the robot's own
//!    measurements and produces one DATA message per neighbor.
//! 2. [`AgentState::finish_step`] fuses the inbox into the own belief and
//!    applies both directions of each pair's traffic to the common belief in
//!    a canonical order (lower robot id first), which both ends reproduce
//!    exactly.
//!
//! Covariance Intersection runs after that via [`AgentState::apply_ci`] and
//! [`AgentState::end_step`].

use std::collections::BTreeMap;

use nalgebra::DVector;
use thiserror::Error;

use crate::ci::{ci_fuse, ci_trigger, update_tau, CiConfig, CiError, CiState};
use crate::filter::{
    fuse_explicit_scalar, fuse_implicit_scalar, predict, FilterError, GaussianBelief, ImplicitOutcome,
};
use crate::models::{Control, DynamicsModel, MeasurementModel, ModelRegistry, RobotId};
use crate::network::{Message, MessageKind, Verdict, WireComponent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("robot {0} is not a neighbor")]
    UnknownNeighbor(RobotId),
    #[error("malformed message from {sender}: {reason}")]
    MalformedMessage { sender: RobotId, reason: String },
    #[error("step phases called out of order")]
    OutOfOrder,
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Ci(#[from] CiError),
}

/// One scalar measurement taken this step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementComponent {
    pub model: MeasurementModel,
    pub value: f64,
}

/// What to do with component `index` of the measurement vector for one
/// neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct SendDecision {
    pub index: usize,
    pub component: WireComponent,
}

impl SendDecision {
    pub fn is_explicit(&self) -> bool {
        self.component.verdict == Verdict::Explicit
    }
}

/// A component applied to a common belief, carrying the model so that the
/// update does not need a registry lookup.
#[derive(Debug, Clone)]
struct Traffic {
    model: MeasurementModel,
    value: Option<f64>,
}

#[derive(Debug, Clone)]
struct StepScratch {
    step: usize,
    own_prior: GaussianBelief,
    common_prior: BTreeMap<RobotId, GaussianBelief>,
    sent: BTreeMap<RobotId, Vec<Traffic>>,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: RobotId,
    pub own: GaussianBelief,
    pub common: BTreeMap<RobotId, GaussianBelief>,
    pub delta: f64,
    pub ci: CiState,
    /// Preference weights for the CI objective and trigger.
    pub alpha: DVector<f64>,
    /// When false, censored components are ignored (explicit-only filter).
    pub implicit_enabled: bool,
    scratch: Option<StepScratch>,
}

impl AgentState {
    pub fn new(
        id: RobotId,
        initial: GaussianBelief,
        neighbors: impl IntoIterator<Item = RobotId>,
        delta: f64,
        alpha: DVector<f64>,
        tau_goal: f64,
    ) -> Self {
        let neighbors: Vec<RobotId> = neighbors.into_iter().collect();
        Self {
            id,
            common: neighbors.iter().map(|&j| (j, initial.clone())).collect(),
            own: initial,
            delta,
            ci: CiState::new(tau_goal, neighbors),
            alpha,
            implicit_enabled: true,
            scratch: None,
        }
    }

    pub fn neighbors(&self) -> impl Iterator<Item = RobotId> + '_ {
        self.common.keys().copied()
    }

    /// Reference belief for decisions towards `neighbor`: the predicted
    /// common belief during a step, the current one otherwise.
    fn reference(&self, neighbor: RobotId) -> Result<&GaussianBelief, AgentError> {
        let from_scratch = self.scratch.as_ref().and_then(|s| s.common_prior.get(&neighbor));
        from_scratch
            .or_else(|| self.common.get(&neighbor))
            .ok_or(AgentError::UnknownNeighbor(neighbor))
    }

    /// Explicit iff the innovation against the common prediction exceeds
    /// `delta` (strictly).
    pub fn decide_sends(
        &self,
        neighbor: RobotId,
        components: &[MeasurementComponent],
    ) -> Result<Vec<SendDecision>, AgentError> {
        let reference = self.reference(neighbor)?;
        components
            .iter()
            .enumerate()
            .map(|(index, c)| {
                let predicted = c.model.predict(&reference.mean).map_err(FilterError::from)?;
                let innovation = c.model.residual(c.value, predicted);
                let component = if innovation.abs() > self.delta {
                    WireComponent::explicit(c.model.handle, c.value)
                } else {
                    WireComponent::implicit(c.model.handle)
                };
                Ok(SendDecision { index, component })
            })
            .collect()
    }

    /// Prediction, own-measurement fusion and outbox construction.
    pub fn begin_step(
        &mut self,
        step: usize,
        dynamics: &DynamicsModel,
        controls: &[Control],
        own_measurements: &[MeasurementComponent],
    ) -> Result<Vec<Message>, AgentError> {
        predict(&mut self.own, dynamics, controls)?;
        for belief in self.common.values_mut() {
            predict(belief, dynamics, controls)?;
        }
        self.scratch = Some(StepScratch {
            step,
            own_prior: self.own.clone(),
            common_prior: self.common.clone(),
            sent: BTreeMap::new(),
        });

        for m in own_measurements {
            fuse_explicit_scalar(&mut self.own, &m.model, m.value)?;
        }

        let mut outbox = Vec::with_capacity(self.common.len());
        let mut sent = BTreeMap::new();
        let neighbors: Vec<RobotId> = self.neighbors().collect();
        for j in neighbors {
            let decisions = self.decide_sends(j, own_measurements)?;
            let traffic = decisions
                .iter()
                .map(|d| Traffic {
                    model: own_measurements[d.index].model.clone(),
                    value: d.component.value,
                })
                .collect();
            sent.insert(j, traffic);
            outbox.push(Message {
                step,
                sender: self.id,
                receiver: j,
                kind: MessageKind::Data,
                components: decisions.into_iter().map(|d| d.component).collect(),
                ci_rate: Some(self.ci.rate()),
                ci: None,
            });
        }
        if let Some(scratch) = self.scratch.as_mut() {
            scratch.sent = sent;
        }
        Ok(outbox)
    }

    fn malformed(sender: RobotId, reason: impl Into<String>) -> AgentError {
        AgentError::MalformedMessage {
            sender,
            reason: reason.into(),
        }
    }

    /// Decodes what `neighbor` sent this step. A missing message means every
    /// component the neighbor takes is read as censored.
    fn received_traffic(
        &self,
        step: usize,
        neighbor: RobotId,
        message: Option<&Message>,
        registry: &ModelRegistry,
    ) -> Result<Vec<Traffic>, AgentError> {
        let Some(message) = message else {
            return Ok(registry
                .taken_by(neighbor)
                .iter()
                .map(|model| Traffic {
                    model: model.clone(),
                    value: None,
                })
                .collect());
        };
        if message.step != step {
            return Err(Self::malformed(
                neighbor,
                format!("step {} while processing step {step}", message.step),
            ));
        }
        message
            .components
            .iter()
            .map(|c| {
                if c.handle.taker != neighbor {
                    return Err(Self::malformed(neighbor, format!("component taken by {}", c.handle.taker)));
                }
                let model = registry
                    .lookup(&c.handle)
                    .ok_or_else(|| Self::malformed(neighbor, format!("unknown model handle {:?}", c.handle)))?;
                let value = match (c.verdict, c.value) {
                    (Verdict::Explicit, Some(v)) if v.is_finite() => Some(v),
                    (Verdict::Explicit, _) => return Err(Self::malformed(neighbor, "explicit component without value")),
                    (Verdict::Implicit, _) => None,
                };
                Ok(Traffic {
                    model: model.clone(),
                    value,
                })
            })
            .collect()
    }

    fn apply(
        belief: &mut GaussianBelief,
        prior: &GaussianBelief,
        reference: &DVector<f64>,
        traffic: &[Traffic],
        delta: f64,
        implicit_enabled: bool,
    ) -> Result<(), FilterError> {
        for t in traffic {
            match t.value {
                Some(y) => fuse_explicit_scalar(belief, &t.model, y)?,
                None if implicit_enabled => {
                    // A degenerate window leaves the belief as it was.
                    let _: ImplicitOutcome = fuse_implicit_scalar(belief, prior, reference, &t.model, delta)?;
                }
                None => {}
            }
        }
        Ok(())
    }

    /// Fuses this step's inbox. `inbox` holds the DATA messages that reached
    /// this agent; neighbors without one are treated as fully censored.
    pub fn finish_step(&mut self, registry: &ModelRegistry, inbox: &[Message]) -> Result<(), AgentError> {
        let scratch = self.scratch.take().ok_or(AgentError::OutOfOrder)?;
        for m in inbox {
            if m.kind == MessageKind::Data && !self.common.contains_key(&m.sender) {
                return Err(AgentError::UnknownNeighbor(m.sender));
            }
        }
        let neighbors: Vec<RobotId> = self.neighbors().collect();
        for j in neighbors {
            let mut from_j = inbox
                .iter()
                .filter(|m| m.sender == j && m.kind == MessageKind::Data);
            let message = from_j.next();
            if from_j.next().is_some() {
                return Err(Self::malformed(j, "more than one DATA message in a step"));
            }
            let received = self.received_traffic(scratch.step, j, message, registry)?;
            if let Some(rate) = message.and_then(|m| m.ci_rate) {
                self.ci.neighbor_rates.insert(j, rate);
            }

            let common_prior = &scratch.common_prior[&j];
            Self::apply(
                &mut self.own,
                &scratch.own_prior,
                &common_prior.mean,
                &received,
                self.delta,
                self.implicit_enabled,
            )?;

            let sent = scratch.sent.get(&j).map(Vec::as_slice).unwrap_or_default();
            let (first, second) = if self.id < j {
                (sent, received.as_slice())
            } else {
                (received.as_slice(), sent)
            };
            let common = self.common.get_mut(&j).expect("neighbor has a common belief");
            for batch in [first, second] {
                Self::apply(
                    common,
                    common_prior,
                    &common_prior.mean,
                    batch,
                    self.delta,
                    self.implicit_enabled,
                )?;
            }
        }
        Ok(())
    }

    pub fn wants_ci(&self) -> Result<bool, AgentError> {
        Ok(ci_trigger(&self.ci, &self.own.cov, &self.alpha)?)
    }

    /// Replaces the own belief by its CI fusion with `partner`, optimizing
    /// with this agent's preference weights. Returns the chosen weight.
    pub fn apply_ci(&mut self, partner: &GaussianBelief, tolerance: f64) -> Result<f64, AgentError> {
        let (fused, omega) = ci_fuse(&self.own, partner, &self.alpha, tolerance)?;
        self.own = fused;
        Ok(omega)
    }

    /// Books whether this agent triggered CI this step and advances its
    /// threshold.
    pub fn end_step(&mut self, triggered: bool, cfg: &CiConfig) {
        self.ci.record_step(triggered);
        update_tau(&mut self.ci, cfg);
    }

    /// Single-agent convenience for a robot with no neighbors: a local EKF
    /// step.
    pub fn step_alone(
        &mut self,
        step: usize,
        dynamics: &DynamicsModel,
        controls: &[Control],
        own_measurements: &[MeasurementComponent],
        registry: &ModelRegistry,
    ) -> Result<(), AgentError> {
        self.begin_step(step, dynamics, controls, own_measurements)?;
        self.finish_step(registry, &[])
    }
}
