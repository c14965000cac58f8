//! Bundled scenarios.
//!
//! Values not pinned down by the reference experiments (linear initial
//! states and controls, run lengths, CI thresholds for the six-robot
//! scenarios, GPS placement) are conventions of this crate.

use std::f64::consts::PI;

use crate::config::{
    BaselineSection, ChannelSection, CiSection, ControlSchedule, DynamicsSection, EventSection, RobotSection,
    ScenarioConfig, SensorSection, TopologySection,
};
use crate::models::DynamicsKind;
use crate::network::TopologyKind;

pub const NAMES: [&str; 7] = [
    "linear3_example1",
    "linear7_fixed_tau",
    "linear7_adaptive_tau",
    "dubins2_cp_sweep",
    "dubins6_star",
    "dubins6_bridge",
    "dubins6_chain",
];

/// Threshold of the two-robot Dubins scenario, chosen so that about half of
/// all components go out explicitly.
pub const DUBINS2_DELTA: f64 = 0.35;
/// Threshold of the six-robot Dubins scenarios.
pub const DUBINS6_DELTA: f64 = 1.0;
/// CI goal of the six-robot scenarios, on the position-weighted trace.
pub const DUBINS6_TAU_GOAL: f64 = 10.0;
/// GPS robots of the better-instrumented chain variant.
pub const CHAIN_MULTI_GPS: [usize; 3] = [1, 4, 6];

pub fn fixture(name: &str) -> Option<ScenarioConfig> {
    Some(match name {
        "linear3_example1" => linear(name, 3, 100.0, false),
        "linear7_fixed_tau" => linear(name, 7, 300.0, false),
        "linear7_adaptive_tau" => linear(name, 7, 300.0, true),
        "dubins2_cp_sweep" => dubins2(),
        "dubins6_star" => dubins6(name, TopologyKind::Star),
        "dubins6_bridge" => dubins6(name, TopologyKind::Bridge),
        "dubins6_chain" => dubins6(name, TopologyKind::Chain),
        _ => return None,
    })
}

/// Canonical TOML text of a fixture.
pub fn emit(name: &str) -> Option<String> {
    fixture(name).map(|cfg| cfg.to_toml())
}

fn linear(name: &str, n: usize, steps: f64, adaptive: bool) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        seed: 1,
        runs: if n == 3 { 30 } else { 10 },
        dynamics: DynamicsSection {
            kind: DynamicsKind::Linear1d,
            dt: 1.0,
            duration: steps,
            process_noise: vec![0.1],
        },
        topology: TopologySection {
            kind: TopologyKind::Line,
            edges: vec![],
        },
        sensors: SensorSection {
            gps: (1..=n).collect(),
            gps_variance: vec![10.0],
            relative_variance: vec![1.0],
        },
        event: EventSection {
            delta: 0.75,
            implicit: true,
        },
        ci: CiSection {
            enabled: true,
            tau_goal: 5.0,
            epsilon1: 0.1,
            epsilon2: 0.01,
            adaptive,
            tolerance: 1e-6,
            alpha: None,
        },
        channel: ChannelSection::default(),
        baselines: BaselineSection {
            centralized: true,
            explicit_only: n == 3,
        },
        robots: (0..n)
            .map(|i| RobotSection {
                initial_state: vec![5.0 * i as f64],
                initial_variance: vec![1.0],
                speed: None,
                control: ControlSchedule::Sine {
                    amplitude: 0.5,
                    frequency: 0.1,
                    phase: i as f64,
                    offset: 0.0,
                },
            })
            .collect(),
    }
}

fn dubins_dynamics(dt: f64) -> DynamicsSection {
    DynamicsSection {
        kind: DynamicsKind::Dubins,
        dt,
        duration: 10.0,
        process_noise: vec![0.01, 0.01, 0.001],
    }
}

fn dubins_sensors(gps: Vec<usize>) -> SensorSection {
    SensorSection {
        gps,
        gps_variance: vec![1.0, 1.0, 1.0],
        relative_variance: vec![0.05, 0.05],
    }
}

fn dubins2() -> ScenarioConfig {
    let robot = |state: [f64; 3], frequency: f64, phase: f64| RobotSection {
        initial_state: state.to_vec(),
        initial_variance: vec![1.0; 3],
        speed: Some(1.0),
        control: ControlSchedule::Sine {
            amplitude: 1.0,
            frequency,
            phase,
            offset: 0.0,
        },
    };
    ScenarioConfig {
        name: "dubins2_cp_sweep".into(),
        seed: 1,
        runs: 30,
        dynamics: dubins_dynamics(0.05),
        topology: TopologySection {
            kind: TopologyKind::Line,
            edges: vec![],
        },
        sensors: dubins_sensors(vec![1, 2]),
        event: EventSection {
            delta: DUBINS2_DELTA,
            implicit: true,
        },
        ci: CiSection::default(),
        channel: ChannelSection::default(),
        baselines: BaselineSection {
            centralized: true,
            explicit_only: true,
        },
        robots: vec![
            robot([-2.0, 12.0, 2.0 * PI / 3.0], 0.5, PI),
            robot([0.0, 5.0, -PI / 2.0], 0.1, 0.0),
        ],
    }
}

fn dubins6(name: &str, kind: TopologyKind) -> ScenarioConfig {
    let controls = [(1.0, 0.5), (0.5, 1.0), (1.0, 1.0), (0.5, 0.5), (0.7, 0.1), (0.5, 0.5)];
    let states = [
        [0.0, 0.0, 0.0],
        [-5.0, 7.0, PI / 2.0],
        [5.0, 12.0, PI / 2.0],
        [5.0, -12.0, 0.0],
        [-5.0, -7.0, 0.0],
        [0.0, 17.0, -PI / 2.0],
    ];
    // Positions only: headings do not enter the CI trigger.
    let alpha = (0..6).flat_map(|_| [1.0, 1.0, 0.0]).collect();
    ScenarioConfig {
        name: name.into(),
        seed: 1,
        runs: 5,
        dynamics: dubins_dynamics(0.1),
        topology: TopologySection { kind, edges: vec![] },
        sensors: dubins_sensors(vec![1]),
        event: EventSection {
            delta: DUBINS6_DELTA,
            implicit: true,
        },
        ci: CiSection {
            enabled: true,
            tau_goal: DUBINS6_TAU_GOAL,
            epsilon1: 0.0,
            epsilon2: 0.0,
            adaptive: false,
            tolerance: 1e-6,
            alpha: Some(alpha),
        },
        channel: ChannelSection::default(),
        baselines: BaselineSection {
            centralized: true,
            explicit_only: false,
        },
        robots: controls
            .iter()
            .zip(states)
            .map(|(&(speed, turn_rate), state)| RobotSection {
                initial_state: state.to_vec(),
                initial_variance: vec![1.0, 1.0, 0.1],
                speed: Some(speed),
                control: ControlSchedule::Constant { value: turn_rate },
            })
            .collect(),
    }
}
