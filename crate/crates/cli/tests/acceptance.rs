//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails. Every tolerance is pinned in the constants below.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use etcl_core::fixtures::{fixture, CHAIN_MULTI_GPS, DUBINS2_DELTA};
use etcl_core::runner::{final_window, steady_window, Batch};
use etcl_core::testing::{ci_oracle, quadrature, random};
use etcl_core::{
    centralized_baseline, ci_fuse, monte_carlo, simulate, truncated_moments, GaussianBelief, Scenario,
    ScenarioConfig, TopologyKind, TruncationWindow,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_TOL: f64 = 1e-9;
const QUADRATURE_TOL: f64 = 1e-8;
const QUADRATURE_CASES: usize = 1_000;
const SYMMETRY_TOL: f64 = 1e-9;
const EXPLICIT_FRACTION_RANGE: (f64, f64) = (0.05, 0.20);
const TRACE_RATIO_TOL: f64 = 0.15;
const WEIGHTED_TRACE_GOAL: f64 = 5.0;
const WEIGHTED_TRACE_SLACK: f64 = 1e-9;
const OMEGA_TOL: f64 = 2e-4;
const OMEGA_GRID_INTERVALS: usize = 2_000;
const OMEGA_FINE_HALF_WIDTH: f64 = 1e-3;
const OMEGA_FINE_INTERVALS: usize = 2_000;
const INFO_IDENTITY_TOL: f64 = 1e-8;
const CI_PAIRS: usize = 500;
const SWEEP_DELTAS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
const SWEEP_CPS: [f64; 4] = [1.0, 0.8, 0.5, 0.2];
const UNBOUNDED_FACTOR: f64 = 10.0;
const FAR_HOPS: usize = 3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn batch(cfg: &ScenarioConfig, runs: usize) -> Batch {
    monte_carlo(&Scenario::new(cfg.clone()).expect("valid scenario"), runs).expect("run succeeds")
}

fn mean(a: Option<etcl_core::runner::Aggregate>) -> f64 {
    a.expect("aggregate present").mean
}

fn max_abs_diff(a: &GaussianBelief, b: &GaussianBelief) -> (f64, f64) {
    ((&a.mean - &b.mean).amax(), (&a.cov - &b.cov).amax())
}

fn c1_zero_threshold_oracle() -> Outcome {
    let mut cfg = fixture("linear3_example1").unwrap();
    cfg.robots.truncate(2);
    cfg.sensors.gps = vec![1, 2];
    cfg.event.delta = 0.0;
    cfg.channel.cp = 1.0;
    let sc = Scenario::new(cfg).unwrap();
    let (mut worst_mean, mut worst_cov) = (0.0_f64, 0.0_f64);
    let mut steps = 0;
    for seed in 0..5 {
        let real = sc.realize(seed).unwrap();
        let mut central = Vec::new();
        centralized_baseline(&sc, &real, |_, b| central.push(b.clone())).unwrap();
        simulate(&sc, &real, true, |k, agents| {
            for a in agents {
                let (m, c) = max_abs_diff(&a.own, &central[k - 1]);
                worst_mean = worst_mean.max(m);
                worst_cov = worst_cov.max(c);
            }
            steps += 1;
        })
        .unwrap();
    }
    outcome(
        worst_mean < ORACLE_TOL && worst_cov < ORACLE_TOL && steps == 500,
        format!("max |mean diff| {worst_mean:.2e}, max |cov diff| {worst_cov:.2e} over {steps} steps"),
    )
}

fn c2_truncated_moments() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut theta_ok) = (0.0_f64, true);
    for i in 0..QUADRATURE_CASES {
        let mu = rng.random_range(-5.0..5.0);
        let var: f64 = rng.random_range(0.01..10.0);
        let sigma = var.sqrt();
        let a_std = rng.random_range(-4.0..3.5);
        let width = rng.random_range(0.05..6.0);
        let mut lower = mu + a_std * sigma;
        let mut upper = mu + (a_std + width) * sigma;
        match i % 10 {
            0 => lower = f64::NEG_INFINITY,
            1 => upper = f64::INFINITY,
            _ => {}
        }
        let m = truncated_moments(mu, var, TruncationWindow::new(lower, upper).unwrap()).unwrap();
        let q = quadrature::truncated_moments_by_quadrature(mu, var, lower, upper);
        worst = worst
            .max((mu + m.mean_shift - q.mean).abs())
            .max(((1.0 - m.variance_factor) * var - q.variance).abs());
        theta_ok &= m.variance_factor > 0.0 && m.variance_factor < 1.0;
    }
    outcome(
        worst < QUADRATURE_TOL && theta_ok,
        format!("{QUADRATURE_CASES} cases, max moment error {worst:.2e}, theta in (0,1): {theta_ok}"),
    )
}

fn c3_pairwise_symmetry() -> Outcome {
    let mut cfg = fixture("dubins6_chain").unwrap();
    cfg.event.delta = 0.75;
    cfg.channel.cp = 1.0;
    let sc = Scenario::new(cfg).unwrap();
    let real = sc.realize(sc.cfg.seed).unwrap();
    let (mut worst_mean, mut worst_cov, mut checks) = (0.0_f64, 0.0_f64, 0);
    let metrics = simulate(&sc, &real, true, |_, agents| {
        for (i, j) in sc.topology.edges() {
            let (m, c) = max_abs_diff(&agents[i].common[&j], &agents[j].common[&i]);
            worst_mean = worst_mean.max(m);
            worst_cov = worst_cov.max(c);
            checks += 1;
        }
    })
    .unwrap();
    outcome(
        worst_mean < SYMMETRY_TOL && worst_cov < SYMMETRY_TOL && metrics.steps == 100,
        format!("{checks} edge-steps, max mean gap {worst_mean:.2e}, max cov gap {worst_cov:.2e}"),
    )
}

fn c4_example1_savings() -> Outcome {
    let cfg = fixture("linear3_example1").unwrap();
    let b = batch(&cfg, 30);
    let s = &b.summary;
    let fraction = mean(s.main.explicit_fraction);
    let ci_max = s.main.ci_exchanges.unwrap().max;
    let agent2 = mean(s.main.agents[1].final_variance);
    let central = mean(s.centralized.as_ref().unwrap().agents[0].final_variance);
    let ratio = agent2 / central;
    let pass = (EXPLICIT_FRACTION_RANGE.0..=EXPLICIT_FRACTION_RANGE.1).contains(&fraction)
        && ci_max == 0.0
        && (ratio - 1.0).abs() <= TRACE_RATIO_TOL;
    outcome(
        pass,
        format!(
            "explicit fraction {fraction:.3} (want {:.2}..{:.2}), max CI exchanges {ci_max}, agent 2 trace {agent2:.4} vs centralized {central:.4} (ratio {ratio:.3})",
            EXPLICIT_FRACTION_RANGE.0, EXPLICIT_FRACTION_RANGE.1
        ),
    )
}

fn c5_adaptive_threshold() -> Outcome {
    let fixed = batch(&fixture("linear7_fixed_tau").unwrap(), 10);
    let adaptive = batch(&fixture("linear7_adaptive_tau").unwrap(), 10);
    let steady_peak = |b: &Batch| -> f64 {
        let steady = steady_window(b.runs[0].metrics.steps);
        b.runs
            .iter()
            .flat_map(|r| r.metrics.agents.iter())
            .flat_map(|a| a.records[steady.clone()].iter().map(|s| s.weighted_trace))
            .fold(0.0, f64::max)
    };
    let fixed_peak = steady_peak(&fixed);
    let adaptive_peak = steady_peak(&adaptive);
    let n = fixed.summary.main.agents.len();
    let rate = |b: &Batch, i: usize| mean(b.summary.main.agents[i].final_ci_rate);
    let ends = [0, n - 1];
    let rates_drop = ends.iter().all(|&i| rate(&adaptive, i) < rate(&fixed, i));
    let pass = fixed_peak > WEIGHTED_TRACE_GOAL && adaptive_peak <= WEIGHTED_TRACE_GOAL + WEIGHTED_TRACE_SLACK && rates_drop;
    outcome(
        pass,
        format!(
            "steady peak weighted trace fixed {fixed_peak:.3}, adaptive {adaptive_peak:.6}; end-agent CI rates fixed {:.3}/{:.3} -> adaptive {:.3}/{:.3}",
            rate(&fixed, 0),
            rate(&fixed, n - 1),
            rate(&adaptive, 0),
            rate(&adaptive, n - 1)
        ),
    )
}

/// Coarse grid, then a fine grid around the coarse optimum.
fn grid_omega(pa: &DMatrix<f64>, pb: &DMatrix<f64>, alpha: &DVector<f64>) -> f64 {
    let (coarse, _) = ci_oracle::grid_minimizer(pa, pb, alpha, OMEGA_GRID_INTERVALS);
    let lo = (coarse - OMEGA_FINE_HALF_WIDTH).max(0.0);
    let hi = (coarse + OMEGA_FINE_HALF_WIDTH).min(1.0);
    (0..=OMEGA_FINE_INTERVALS)
        .map(|i| lo + (hi - lo) * i as f64 / OMEGA_FINE_INTERVALS as f64)
        .map(|w| (w, ci_oracle::objective(pa, pb, alpha, w)))
        .fold((coarse, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
        .0
}

fn c6_ci_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_omega, mut worst_residual) = (0.0_f64, 0.0_f64);
    for _ in 0..CI_PAIRS {
        let dim = rng.random_range(2..=12);
        let pa = random::spd(&mut rng, dim);
        let pb = random::spd(&mut rng, dim);
        let alpha = DVector::from_fn(dim, |_, _| rng.random_range(0.1..1.0));
        let a = GaussianBelief::new(DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)), pa.clone());
        let b = GaussianBelief::new(DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)), pb.clone());
        let (fused, omega) = ci_fuse(&a, &b, &alpha, 1e-8).unwrap();
        let grid_omega = grid_omega(&pa, &pb, &alpha);
        worst_omega = worst_omega.max((omega - grid_omega).abs());
        let inv = |m: &DMatrix<f64>| m.clone().try_inverse().unwrap();
        let residual = inv(&fused.cov) - (inv(&pa) * omega + inv(&pb) * (1.0 - omega));
        worst_residual = worst_residual.max(residual.amax());
    }
    outcome(
        worst_omega <= OMEGA_TOL && worst_residual < INFO_IDENTITY_TOL,
        format!("{CI_PAIRS} pairs, max |omega - grid| {worst_omega:.2e}, max information residual {worst_residual:.2e}"),
    )
}

fn c7_implicit_benefit() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for delta in SWEEP_DELTAS {
        let mut cfg = fixture("dubins2_cp_sweep").unwrap();
        cfg.event.delta = delta;
        cfg.channel.cp = 1.0;
        let s = batch(&cfg, 30).summary;
        let full = mean(s.main.mse);
        let explicit = mean(s.explicit_only.as_ref().unwrap().mse);
        pass &= full <= explicit;
        detail.push(format!("d={delta}: {full:.4} vs {explicit:.4}"));
    }
    outcome(pass, format!("mse full vs explicit-only: {}", detail.join(", ")))
}

fn c8_lossy_channel() -> Outcome {
    let run = |delta: f64, cp: f64| {
        let mut cfg = fixture("dubins2_cp_sweep").unwrap();
        cfg.event.delta = delta;
        cfg.channel.cp = cp;
        batch(&cfg, 30).summary
    };
    let by_cp: Vec<_> = SWEEP_CPS.iter().map(|&cp| run(DUBINS2_DELTA, cp)).collect();
    let mses: Vec<f64> = by_cp.iter().map(|s| mean(s.main.final_mse)).collect();
    let increasing = mses.windows(2).all(|w| w[1] > w[0]);
    let worst = by_cp.last().unwrap();
    let cross_mse = mean(worst.main.cross_final_mse);
    let cross_var = mean(worst.main.cross_final_variance);
    let confusion: Vec<f64> = SWEEP_DELTAS
        .iter()
        .map(|&d| mean(run(d, 0.2).main.confusion_ratio))
        .collect();
    let decreasing = confusion.windows(2).all(|w| w[1] < w[0]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    outcome(
        increasing && cross_mse > cross_var && decreasing,
        format!(
            "final mse over cp {SWEEP_CPS:?}: {}; cp=0.2 cross mse {cross_mse:.4} vs variance {cross_var:.4}; confusion over delta {SWEEP_DELTAS:?}: {}",
            fmt(&mses),
            fmt(&confusion)
        ),
    )
}

/// Own-robot position variance `P[x,x] + P[y,y]` per run, agent and step.
fn own_position_variance(b: &Batch) -> Vec<Vec<Vec<f64>>> {
    b.runs
        .iter()
        .map(|r| {
            let d = r.metrics.robot_dim;
            r.metrics
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| a.records.iter().map(|s| s.var[d * i] + s.var[d * i + 1]).collect())
                .collect()
        })
        .collect()
}

fn c9_topology() -> Outcome {
    let base = fixture("dubins6_chain").unwrap();
    let v0 = base.robots[0].initial_variance[0] + base.robots[0].initial_variance[1];
    let peak = |b: &Batch| {
        own_position_variance(b)
            .iter()
            .flatten()
            .flatten()
            .fold(0.0_f64, |m, &v| m.max(v))
    };

    let mut no_ci = base.clone();
    no_ci.ci.enabled = false;
    let chain = batch(&no_ci, 5);
    let hops = Scenario::new(no_ci.clone()).unwrap().topology.hops_from(0);
    let far: Vec<usize> = (0..hops.len()).filter(|&i| hops[i].map_or(true, |h| h >= FAR_HOPS)).collect();
    let variances = own_position_variance(&chain);
    let window = final_window(chain.runs[0].metrics.steps);
    let far_final: Vec<f64> = far
        .iter()
        .map(|&i| {
            let per_run = variances.iter().map(|run| run[i][window.clone()].iter().sum::<f64>() / window.len() as f64);
            per_run.sum::<f64>() / variances.len() as f64
        })
        .collect();
    let unbounded = !far.is_empty() && far_final.iter().all(|&v| v > UNBOUNDED_FACTOR * v0);

    let chain_ci = peak(&batch(&base, 5));
    let mut multi = no_ci.clone();
    multi.sensors.gps = CHAIN_MULTI_GPS.to_vec();
    let chain_gps = peak(&batch(&multi, 5));
    let star_cfg = fixture("dubins6_star").unwrap();
    assert_eq!(star_cfg.topology.kind, TopologyKind::Star);
    let star = batch(&star_cfg, 5);
    let star_ci = star.summary.main.ci_exchanges.unwrap().max;
    let star_peak = peak(&star);

    let pass = unbounded && chain_ci <= v0 && chain_gps <= v0 && star_ci == 0.0 && star_peak <= v0;
    let far_desc: Vec<String> = far.iter().zip(&far_final).map(|(i, v)| format!("r{}={v:.2}", i + 1)).collect();
    outcome(
        pass,
        format!(
            "initial {v0}; chain no CI far-robot final {} (want > {}); peak chain+CI {chain_ci:.3}, chain+GPS{CHAIN_MULTI_GPS:?} {chain_gps:.3}, star {star_peak:.3} with {star_ci} CI exchanges",
            far_desc.join(" "),
            UNBOUNDED_FACTOR * v0
        ),
    )
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("chain.toml");
    let mut cfg = fixture("dubins6_chain").unwrap();
    cfg.runs = 3;
    fs::write(&config, cfg.to_toml()).unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "4"].into_iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_etcl"))
            .args(["--threads", threads, "run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .expect("binary runs");
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        outputs.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    let same = outputs[0] == outputs[1];
    outcome(same, format!("dubins6_chain, 3 runs, 1 vs 4 threads: {} bytes, identical {same}", outputs[0].len()))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("zero-threshold oracle equivalence", Duration::from_secs(1), c1_zero_threshold_oracle),
        ("truncated-moment oracle", Duration::from_secs(10), c2_truncated_moments),
        ("pairwise common-estimate symmetry", Duration::from_secs(10), c3_pairwise_symmetry),
        ("communication savings, linear3", Duration::from_secs(30), c4_example1_savings),
        ("adaptive thresholding, linear7", Duration::from_secs(60), c5_adaptive_threshold),
        ("CI correctness", Duration::from_secs(10), c6_ci_correctness),
        ("implicit-information benefit", Duration::from_secs(120), c7_implicit_benefit),
        ("lossy-channel pathology", Duration::from_secs(180), c8_lossy_channel),
        ("topology and observability", Duration::from_secs(180), c9_topology),
        ("determinism", Duration::from_secs(300), c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let pass = o.pass && elapsed <= *budget;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name}: {} [{:.2}s, budget {}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
