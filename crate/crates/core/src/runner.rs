//! Scenario orchestration.
//!
//! A run first draws a [`Realization`] (true trajectories and every sensor
//! reading) from per-robot, per-sensor random streams, then feeds that same
//! realization to the event-triggered network and to any baselines.

use std::collections::BTreeSet;
use std::ops::Range;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::agent::{AgentError, AgentState, MeasurementComponent};
use crate::ci::weighted_trace;
use crate::config::{ConfigError, ScenarioConfig};
use crate::filter::{fuse_explicit_scalar, predict, FilterError, GaussianBelief};
use crate::models::{wrap_angle, DynamicsModel, MeasurementKind, ModelError, ModelRegistry};
use crate::network::{confusion_ratio, Channel, CommStats, Message, MessageKind, NetworkError, Topology};

/// Share of leading steps excluded from steady-state statistics, and share
/// of trailing steps averaged into "final" statistics.
pub const BURN_IN_FRACTION: f64 = 0.2;

const RUN_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;
const CHANNEL_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const INIT_STREAM: u64 = 1 << 56;
const PROCESS_STREAM: u64 = 2 << 56;
const SENSOR_STREAM: u64 = 3 << 56;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure at step {step}, agent {agent}: {source}")]
    Numerical {
        step: usize,
        agent: String,
        #[source]
        source: AgentError,
    },
    #[error("measurement generation failed at step {step}: {source}")]
    Measurement {
        step: usize,
        #[source]
        source: ModelError,
    },
    #[error("channel failure at step {step}: {source}")]
    Network {
        step: usize,
        #[source]
        source: NetworkError,
    },
}

fn numerical(step: usize, agent: impl ToString) -> impl FnOnce(AgentError) -> RunError {
    move |source| RunError::Numerical {
        step,
        agent: agent.to_string(),
        source,
    }
}

/// Seed of Monte Carlo run `run`; run 0 uses the base seed itself.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add((run as u64).wrapping_mul(RUN_STRIDE))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn kind_code(kind: MeasurementKind) -> u64 {
    match kind {
        MeasurementKind::GpsX => 0,
        MeasurementKind::GpsY => 1,
        MeasurementKind::GpsTheta => 2,
        MeasurementKind::Range => 3,
        MeasurementKind::Bearing => 4,
        MeasurementKind::LinearSelf => 5,
        MeasurementKind::LinearRelative => 6,
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// A validated scenario with its derived topology, sensors and dynamics.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub topology: Topology,
    pub registry: ModelRegistry,
    pub dynamics: DynamicsModel,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let topology = cfg.topology()?;
        let registry = cfg.registry(&topology);
        let dynamics = cfg.dynamics_model();
        Ok(Self {
            cfg,
            topology,
            registry,
            dynamics,
        })
    }

    /// Draws true trajectories and sensor readings for `seed`.
    ///
    /// The initial truth is the nominal state plus a sample from the initial
    /// covariance. Each robot's process noise and each sensor's noise come
    /// from their own stream, so changing thresholds, topology or channel
    /// leaves the shared parts of the realization untouched.
    pub fn realize(&self, seed: u64) -> Result<Realization, RunError> {
        let cfg = &self.cfg;
        let n = cfg.robot_count();
        let d = cfg.robot_dim();
        let steps = cfg.steps();

        let mut state = cfg.nominal_state();
        for (i, robot) in cfg.robots.iter().enumerate() {
            let mut rng = stream(seed, INIT_STREAM | i as u64);
            for c in 0..d {
                let idx = i * d + c;
                state[idx] += robot.initial_variance[c].sqrt() * gaussian(&mut rng);
                if cfg.is_angular(idx) {
                    state[idx] = wrap_angle(state[idx]);
                }
            }
        }

        let q_std = self.dynamics.process_noise_std();
        let mut process: Vec<ChaCha8Rng> = (0..n).map(|i| stream(seed, PROCESS_STREAM | i as u64)).collect();
        let mut sensors: Vec<Vec<ChaCha8Rng>> = (0..n)
            .map(|i| {
                self.registry
                    .taken_by(i)
                    .iter()
                    .map(|m| {
                        let h = m.handle;
                        let id = SENSOR_STREAM | (h.taker as u64) << 32 | (h.subject as u64) << 16 | kind_code(h.kind);
                        stream(seed, id)
                    })
                    .collect()
            })
            .collect();

        let mut truth = Vec::with_capacity(steps + 1);
        let mut measurements = Vec::with_capacity(steps);
        truth.push(state.clone());
        for k in 1..=steps {
            let controls = cfg.controls_at(k);
            let mut next = state.clone();
            for i in 0..n {
                let noise: Vec<f64> = q_std.iter().map(|s| s * gaussian(&mut process[i])).collect();
                let block = self
                    .dynamics
                    .step_with_noise(&state.as_slice()[i * d..(i + 1) * d], controls[i], &noise);
                next.as_mut_slice()[i * d..(i + 1) * d].copy_from_slice(&block);
            }
            state = next;

            let mut readings = Vec::with_capacity(n);
            for (i, streams) in sensors.iter_mut().enumerate() {
                let row = self
                    .registry
                    .taken_by(i)
                    .iter()
                    .zip(streams.iter_mut())
                    .map(|(model, rng)| {
                        let clean = model
                            .predict(&state)
                            .map_err(|source| RunError::Measurement { step: k, source })?;
                        let y = clean + model.variance.sqrt() * gaussian(rng);
                        Ok(if model.is_angular() { wrap_angle(y) } else { y })
                    })
                    .collect::<Result<Vec<f64>, RunError>>()?;
                readings.push(row);
            }
            measurements.push(readings);
            truth.push(state.clone());
        }
        Ok(Realization {
            seed,
            truth,
            measurements,
        })
    }

    fn measurement_components(&self, real: &Realization, k: usize, robot: usize) -> Vec<MeasurementComponent> {
        self.registry
            .taken_by(robot)
            .iter()
            .zip(&real.measurements[k - 1][robot])
            .map(|(model, &value)| MeasurementComponent {
                model: model.clone(),
                value,
            })
            .collect()
    }

    fn component_names(&self) -> Vec<String> {
        let d = self.cfg.robot_dim();
        let names: &[&str] = if d == 1 { &["x"] } else { &["x", "y", "theta"] };
        (0..self.cfg.robot_count())
            .flat_map(|i| names.iter().map(move |c| format!("r{}.{c}", i + 1)))
            .collect()
    }

    fn empty_metrics(&self, agents: Vec<AgentSeries>, steps: usize) -> RunMetrics {
        RunMetrics {
            robots: self.cfg.robot_count(),
            robot_dim: self.cfg.robot_dim(),
            steps,
            components: self.component_names(),
            agents,
            network: Vec::with_capacity(steps),
            comm: CommStats::default(),
        }
    }

    fn step_record(&self, belief: &GaussianBelief, truth: &DVector<f64>, alpha: &DVector<f64>) -> StepRecord {
        let n = belief.dim();
        let err_sq = (0..n)
            .map(|c| {
                let e = belief.mean[c] - truth[c];
                let e = if self.cfg.is_angular(c) { wrap_angle(e) } else { e };
                e * e
            })
            .collect();
        StepRecord {
            err_sq,
            var: belief.cov.diagonal().iter().copied().collect(),
            weighted_trace: weighted_trace(&belief.cov, alpha).expect("alpha matches the state"),
            tau: None,
            ci_rate: None,
            ci_triggered: false,
        }
    }
}

/// True trajectories (`truth[k]`, `k = 0..=steps`) and sensor readings
/// (`measurements[k - 1][robot][slot]`, aligned with the registry).
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub seed: u64,
    pub truth: Vec<DVector<f64>>,
    pub measurements: Vec<Vec<Vec<f64>>>,
}

impl Realization {
    pub fn steps(&self) -> usize {
        self.measurements.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// Squared error per stacked state component (angles wrapped).
    pub err_sq: Vec<f64>,
    /// Reported variance per stacked state component.
    pub var: Vec<f64>,
    pub weighted_trace: f64,
    pub tau: Option<f64>,
    pub ci_rate: Option<f64>,
    pub ci_triggered: bool,
}

impl StepRecord {
    pub fn sum_err_sq(&self) -> f64 {
        self.err_sq.iter().sum()
    }

    pub fn sum_var(&self) -> f64 {
        self.var.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSeries {
    pub label: String,
    /// Robot whose estimator this is; `None` for the centralized filter.
    pub robot: Option<usize>,
    /// `records[k - 1]` belongs to step `k`.
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetworkRecord {
    /// Cumulative explicit share of offered components.
    pub explicit_fraction: Option<f64>,
    /// Largest infinity-norm gap between the two copies of any common belief.
    pub max_common_asymmetry: f64,
    pub ci_exchanges: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub robots: usize,
    pub robot_dim: usize,
    pub steps: usize,
    /// Names of the stacked state components, e.g. `r2.theta`.
    pub components: Vec<String>,
    pub agents: Vec<AgentSeries>,
    pub network: Vec<NetworkRecord>,
    pub comm: CommStats,
}

/// Indices (into per-step records) after the burn-in.
pub fn steady_window(steps: usize) -> Range<usize> {
    ((steps as f64 * BURN_IN_FRACTION).floor() as usize)..steps
}

/// Indices of the trailing window used for final statistics.
pub fn final_window(steps: usize) -> Range<usize> {
    if steps == 0 {
        return 0..0;
    }
    let len = ((steps as f64 * BURN_IN_FRACTION).floor() as usize).max(1);
    steps - len..steps
}

fn mean_over<'a>(records: impl Iterator<Item = &'a StepRecord>, f: impl Fn(&StepRecord) -> f64) -> Option<f64> {
    let (sum, count) = records.fold((0.0, 0usize), |(s, c), r| (s + f(r), c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub label: String,
    /// Summed squared error, averaged over the steady window.
    pub mse: Option<f64>,
    pub final_mse: Option<f64>,
    pub final_variance: Option<f64>,
    /// As `final_mse` but over other robots' components only.
    pub cross_final_mse: Option<f64>,
    pub cross_final_variance: Option<f64>,
    pub final_weighted_trace: Option<f64>,
    pub max_steady_weighted_trace: Option<f64>,
    pub final_tau: Option<f64>,
    pub final_ci_rate: Option<f64>,
    pub ci_triggers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub explicit_fraction: Option<f64>,
    pub confusion_ratio: Option<f64>,
    pub ci_exchanges: u64,
    pub max_common_asymmetry: f64,
    pub mse: Option<f64>,
    pub final_mse: Option<f64>,
    pub final_variance: Option<f64>,
    pub cross_final_mse: Option<f64>,
    pub cross_final_variance: Option<f64>,
    pub agents: Vec<AgentSummary>,
}

impl RunMetrics {
    fn cross(&self, robot: Option<usize>) -> impl Fn(&[f64]) -> f64 + '_ {
        let d = self.robot_dim;
        move |values: &[f64]| {
            values
                .iter()
                .enumerate()
                .filter(|(c, _)| robot != Some(c / d))
                .map(|(_, v)| v)
                .sum()
        }
    }

    pub fn agent_summary(&self, series: &AgentSeries) -> AgentSummary {
        let r = &series.records;
        let steady = &r[steady_window(self.steps)];
        let fin = &r[final_window(self.steps)];
        let cross = self.cross(series.robot);
        AgentSummary {
            label: series.label.clone(),
            mse: mean_over(steady.iter(), StepRecord::sum_err_sq),
            final_mse: mean_over(fin.iter(), StepRecord::sum_err_sq),
            final_variance: mean_over(fin.iter(), StepRecord::sum_var),
            cross_final_mse: mean_over(fin.iter(), |s| cross(&s.err_sq)),
            cross_final_variance: mean_over(fin.iter(), |s| cross(&s.var)),
            final_weighted_trace: r.last().map(|s| s.weighted_trace),
            max_steady_weighted_trace: steady.iter().map(|s| s.weighted_trace).reduce(f64::max),
            final_tau: r.last().and_then(|s| s.tau),
            final_ci_rate: r.last().and_then(|s| s.ci_rate),
            ci_triggers: r.iter().filter(|s| s.ci_triggered).count() as u64,
        }
    }

    pub fn summary(&self) -> RunSummary {
        let agents: Vec<AgentSummary> = self.agents.iter().map(|a| self.agent_summary(a)).collect();
        let avg = |f: fn(&AgentSummary) -> Option<f64>| mean_of(agents.iter().filter_map(f));
        RunSummary {
            steps: self.steps,
            explicit_fraction: self.comm.explicit_fraction(),
            confusion_ratio: confusion_ratio(&self.comm).ok(),
            ci_exchanges: self.comm.ci_exchanges,
            max_common_asymmetry: self.network.iter().map(|n| n.max_common_asymmetry).fold(0.0, f64::max),
            mse: avg(|a| a.mse),
            final_mse: avg(|a| a.final_mse),
            final_variance: avg(|a| a.final_variance),
            cross_final_mse: avg(|a| a.cross_final_mse),
            cross_final_variance: avg(|a| a.cross_final_variance),
            agents,
        }
    }

    /// Long-format rows `(step, agent, metric, value)` in a fixed order.
    pub fn rows(&self) -> Vec<(usize, String, String, f64)> {
        let mut rows = Vec::new();
        for k in 1..=self.steps {
            for series in &self.agents {
                let r = &series.records[k - 1];
                let mut push = |metric: String, value: f64| rows.push((k, series.label.clone(), metric, value));
                for (name, v) in self.components.iter().zip(&r.err_sq) {
                    push(format!("sq_err.{name}"), *v);
                }
                for (name, v) in self.components.iter().zip(&r.var) {
                    push(format!("var.{name}"), *v);
                }
                push("mse".into(), r.sum_err_sq());
                push("trace".into(), r.sum_var());
                push("weighted_trace".into(), r.weighted_trace);
                if let Some(tau) = r.tau {
                    push("tau".into(), tau);
                }
                if let Some(rate) = r.ci_rate {
                    push("ci_rate".into(), rate);
                    push("ci_triggered".into(), if r.ci_triggered { 1.0 } else { 0.0 });
                }
            }
            if let Some(net) = self.network.get(k - 1) {
                let label = || "network".to_string();
                if let Some(f) = net.explicit_fraction {
                    rows.push((k, label(), "explicit_fraction".into(), f));
                }
                rows.push((k, label(), "max_common_asymmetry".into(), net.max_common_asymmetry));
                rows.push((k, label(), "ci_exchanges".into(), net.ci_exchanges as f64));
            }
        }
        rows
    }
}

fn common_asymmetry(agents: &[AgentState]) -> f64 {
    let mut worst = 0.0_f64;
    for a in agents {
        for (&j, mine) in &a.common {
            if j <= a.id {
                continue;
            }
            let theirs = &agents[j].common[&a.id];
            worst = worst
                .max((&mine.mean - &theirs.mean).amax())
                .max((&mine.cov - &theirs.cov).amax());
        }
    }
    worst
}

/// One CI round: every triggered agent exchanges snapshots with all of its
/// neighbors; each agent then fuses what it received in ascending sender
/// order. Returns the per-agent trigger flags and the number of edges used.
fn ci_round(
    sc: &Scenario,
    k: usize,
    agents: &mut [AgentState],
    channel: &mut Channel,
    comm: &mut CommStats,
) -> Result<(Vec<bool>, u64), RunError> {
    let triggered = agents
        .iter()
        .map(|a| a.wants_ci().map_err(numerical(k, a.id + 1)))
        .collect::<Result<Vec<bool>, RunError>>()?;
    let mut edges = BTreeSet::new();
    for (i, _) in triggered.iter().enumerate().filter(|(_, t)| **t) {
        for &j in sc.topology.neighbors(i) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    if edges.is_empty() {
        return Ok((triggered, 0));
    }
    let mut outbox = Vec::with_capacity(2 * edges.len());
    for &(a, b) in &edges {
        for (s, r) in [(a, b), (b, a)] {
            let kind = if triggered[s] {
                MessageKind::CiRequest
            } else {
                MessageKind::CiReply
            };
            outbox.push(Message::ci(kind, k, s, r, &agents[s].own));
        }
    }
    let delivery = channel
        .deliver(&sc.topology, outbox, comm)
        .map_err(|source| RunError::Network { step: k, source })?;
    comm.ci_exchanges += edges.len() as u64;
    for (i, inbox) in delivery.inboxes.into_iter().enumerate() {
        let mut inbox: Vec<Message> = inbox.into_iter().filter(|m| m.kind != MessageKind::Data).collect();
        inbox.sort_by_key(|m| m.sender);
        for m in inbox {
            let partner = m.ci.as_ref().and_then(|p| p.to_belief(k)).ok_or_else(|| {
                numerical(k, i + 1)(AgentError::MalformedMessage {
                    sender: m.sender,
                    reason: "CI payload has inconsistent sizes".into(),
                })
            })?;
            agents[i]
                .apply_ci(&partner, sc.cfg.ci.tolerance)
                .map_err(numerical(k, i + 1))?;
        }
    }
    Ok((triggered, edges.len() as u64))
}

/// Runs the event-triggered network on `real`. With `implicit == false`
/// censored components are ignored everywhere (explicit-only filter).
/// `observe` sees every agent after each completed step.
pub fn simulate(
    sc: &Scenario,
    real: &Realization,
    implicit: bool,
    mut observe: impl FnMut(usize, &[AgentState]),
) -> Result<RunMetrics, RunError> {
    let cfg = &sc.cfg;
    let n = cfg.robot_count();
    let steps = real.steps();
    let initial = cfg.initial_belief();
    let alpha = cfg.alpha();
    let ci_cfg = cfg.ci_config();

    let mut agents: Vec<AgentState> = (0..n)
        .map(|i| {
            let mut a = AgentState::new(
                i,
                initial.clone(),
                sc.topology.neighbors(i).iter().copied(),
                cfg.event.delta,
                alpha.clone(),
                cfg.ci.tau_goal,
            );
            a.implicit_enabled = cfg.event.implicit && implicit;
            a
        })
        .collect();
    let mut channel = Channel::new(cfg.channel_config(), real.seed ^ CHANNEL_SALT)
        .map_err(|source| RunError::Network { step: 0, source })?;
    let series = (0..n)
        .map(|i| AgentSeries {
            label: (i + 1).to_string(),
            robot: Some(i),
            records: Vec::with_capacity(steps),
        })
        .collect();
    let mut metrics = sc.empty_metrics(series, steps);
    let mut comm = CommStats::default();

    for k in 1..=steps {
        let controls = cfg.controls_at(k);
        let mut outbox = Vec::new();
        for (i, agent) in agents.iter_mut().enumerate() {
            let measured = sc.measurement_components(real, k, i);
            let sent = agent
                .begin_step(k, &sc.dynamics, &controls, &measured)
                .map_err(numerical(k, i + 1))?;
            outbox.extend(sent);
        }
        let delivery = channel
            .deliver(&sc.topology, outbox, &mut comm)
            .map_err(|source| RunError::Network { step: k, source })?;
        for ((i, agent), inbox) in agents.iter_mut().enumerate().zip(&delivery.inboxes) {
            agent.finish_step(&sc.registry, inbox).map_err(numerical(k, i + 1))?;
        }

        let (triggered, exchanges) = if cfg.ci.enabled {
            ci_round(sc, k, &mut agents, &mut channel, &mut comm)?
        } else {
            (vec![false; n], 0)
        };
        for (agent, &t) in agents.iter_mut().zip(&triggered) {
            agent.end_step(t, &ci_cfg);
        }
        observe(k, &agents);

        for (agent, series) in agents.iter().zip(metrics.agents.iter_mut()) {
            let mut record = sc.step_record(&agent.own, &real.truth[k], &alpha);
            if cfg.ci.enabled {
                record.tau = Some(agent.ci.tau);
                record.ci_rate = Some(agent.ci.rate());
                record.ci_triggered = triggered[agent.id];
            }
            series.records.push(record);
        }
        metrics.network.push(NetworkRecord {
            explicit_fraction: comm.explicit_fraction(),
            max_common_asymmetry: common_asymmetry(&agents),
            ci_exchanges: exchanges,
        });
    }
    metrics.comm = comm;
    Ok(metrics)
}

/// A single EKF over the whole network fusing every reading each step, in
/// robot order.
pub fn centralized_baseline(
    sc: &Scenario,
    real: &Realization,
    mut observe: impl FnMut(usize, &GaussianBelief),
) -> Result<RunMetrics, RunError> {
    let steps = real.steps();
    let alpha = sc.cfg.alpha();
    let mut belief = sc.cfg.initial_belief();
    let mut records = Vec::with_capacity(steps);
    let fail = |k: usize| move |e: FilterError| numerical(k, "centralized")(AgentError::Filter(e));
    for k in 1..=steps {
        predict(&mut belief, &sc.dynamics, &sc.cfg.controls_at(k)).map_err(fail(k))?;
        for i in 0..sc.cfg.robot_count() {
            for m in sc.measurement_components(real, k, i) {
                fuse_explicit_scalar(&mut belief, &m.model, m.value).map_err(fail(k))?;
            }
        }
        observe(k, &belief);
        records.push(sc.step_record(&belief, &real.truth[k], &alpha));
    }
    let series = AgentSeries {
        label: "centralized".into(),
        robot: None,
        records,
    };
    Ok(sc.empty_metrics(vec![series], steps))
}

/// The full pipeline with implicit fusion switched off.
pub fn explicit_only_baseline(sc: &Scenario, real: &Realization) -> Result<RunMetrics, RunError> {
    simulate(sc, real, false, |_, _| {})
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRun {
    pub seed: u64,
    pub metrics: RunMetrics,
    pub centralized: Option<RunMetrics>,
    pub explicit_only: Option<RunMetrics>,
}

/// The main run plus the baselines requested in the config, all on one
/// realization drawn from `seed`.
pub fn run_scenario(sc: &Scenario, seed: u64) -> Result<ScenarioRun, RunError> {
    let real = sc.realize(seed)?;
    let metrics = simulate(sc, &real, true, |_, _| {})?;
    let centralized = if sc.cfg.baselines.centralized {
        Some(centralized_baseline(sc, &real, |_, _| {})?)
    } else {
        None
    };
    let explicit_only = if sc.cfg.baselines.explicit_only {
        Some(explicit_only_baseline(sc, &real)?)
    } else {
        None
    };
    Ok(ScenarioRun {
        seed,
        metrics,
        centralized,
        explicit_only,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let count = v.len();
        let mean = v.iter().sum::<f64>() / count as f64;
        let var = if count > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        let median = if count % 2 == 1 {
            v[count / 2]
        } else {
            0.5 * (v[count / 2 - 1] + v[count / 2])
        };
        Some(Self {
            count,
            mean,
            std: var.sqrt(),
            min: v[0],
            median,
            max: v[count - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentAggregate {
    pub label: String,
    pub mse: Option<Aggregate>,
    pub final_mse: Option<Aggregate>,
    pub final_variance: Option<Aggregate>,
    pub final_weighted_trace: Option<Aggregate>,
    pub max_steady_weighted_trace: Option<Aggregate>,
    pub final_ci_rate: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryAggregate {
    pub explicit_fraction: Option<Aggregate>,
    pub confusion_ratio: Option<Aggregate>,
    pub ci_exchanges: Option<Aggregate>,
    pub max_common_asymmetry: Option<Aggregate>,
    pub mse: Option<Aggregate>,
    pub final_mse: Option<Aggregate>,
    pub final_variance: Option<Aggregate>,
    pub cross_final_mse: Option<Aggregate>,
    pub cross_final_variance: Option<Aggregate>,
    pub agents: Vec<AgentAggregate>,
}

impl SummaryAggregate {
    pub fn of(summaries: &[RunSummary]) -> Self {
        let agg = |f: &dyn Fn(&RunSummary) -> Option<f64>| Aggregate::of(summaries.iter().filter_map(f));
        let agent_count = summaries.first().map_or(0, |s| s.agents.len());
        let agents = (0..agent_count)
            .map(|a| {
                let pick = |f: fn(&AgentSummary) -> Option<f64>| {
                    Aggregate::of(summaries.iter().filter_map(|s| f(&s.agents[a])))
                };
                AgentAggregate {
                    label: summaries[0].agents[a].label.clone(),
                    mse: pick(|s| s.mse),
                    final_mse: pick(|s| s.final_mse),
                    final_variance: pick(|s| s.final_variance),
                    final_weighted_trace: pick(|s| s.final_weighted_trace),
                    max_steady_weighted_trace: pick(|s| s.max_steady_weighted_trace),
                    final_ci_rate: pick(|s| s.final_ci_rate),
                }
            })
            .collect();
        Self {
            explicit_fraction: agg(&|s| s.explicit_fraction),
            confusion_ratio: agg(&|s| s.confusion_ratio),
            ci_exchanges: agg(&|s| Some(s.ci_exchanges as f64)),
            max_common_asymmetry: agg(&|s| Some(s.max_common_asymmetry)),
            mse: agg(&|s| s.mse),
            final_mse: agg(&|s| s.final_mse),
            final_variance: agg(&|s| s.final_variance),
            cross_final_mse: agg(&|s| s.cross_final_mse),
            cross_final_variance: agg(&|s| s.cross_final_variance),
            agents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub main: SummaryAggregate,
    pub centralized: Option<SummaryAggregate>,
    pub explicit_only: Option<SummaryAggregate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub runs: Vec<ScenarioRun>,
    pub summary: BatchSummary,
}

impl BatchSummary {
    pub fn of(runs: &[ScenarioRun]) -> Self {
        let side = |f: fn(&ScenarioRun) -> Option<&RunMetrics>| {
            let s: Option<Vec<RunSummary>> = runs.iter().map(|r| f(r).map(RunMetrics::summary)).collect();
            s.filter(|s| !s.is_empty()).map(|s| SummaryAggregate::of(&s))
        };
        let main: Vec<RunSummary> = runs.iter().map(|r| r.metrics.summary()).collect();
        Self {
            runs: runs.len(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            main: SummaryAggregate::of(&main),
            centralized: side(|r| r.centralized.as_ref()),
            explicit_only: side(|r| r.explicit_only.as_ref()),
        }
    }
}

/// `n_runs` independent runs with seeds from [`run_seed`], in parallel on
/// the current rayon pool. Results are ordered by run index.
pub fn monte_carlo(sc: &Scenario, n_runs: usize) -> Result<Batch, RunError> {
    let runs = (0..n_runs.max(1))
        .into_par_iter()
        .map(|r| run_scenario(sc, run_seed(sc.cfg.seed, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = BatchSummary::of(&runs);
    Ok(Batch { runs, summary })
}
