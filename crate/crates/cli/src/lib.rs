//! `etcl` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or usage error,
//! 3 numerical failure during a run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use etcl_core::fixtures;
use etcl_core::runner::{monte_carlo, Batch, BatchSummary, RunSummary};
use etcl_core::{ConfigError, RunError, Scenario, ScenarioConfig, TopologyKind};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Version of the file layout written by `run` and `sweep`.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "etcl", version, about = "Event-triggered cooperative localization simulator")]
pub struct Cli {
    /// Worker threads for Monte Carlo runs (defaults to one per core).
    #[arg(long, global = true, env = "ETCL_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario, optionally as a Monte Carlo batch.
    Run(RunArgs),
    /// Repeat a batch over several values of delta or cp.
    Sweep(SweepArgs),
    /// List or print bundled scenarios.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
}

#[derive(Debug, Subcommand)]
pub enum FixturesCommand {
    List,
    Emit {
        name: String,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyArg {
    Line,
    Star,
    Bridge,
    Chain,
    Full,
}

impl From<TopologyArg> for TopologyKind {
    fn from(t: TopologyArg) -> Self {
        match t {
            TopologyArg::Line => TopologyKind::Line,
            TopologyArg::Star => TopologyKind::Star,
            TopologyArg::Bridge => TopologyKind::Bridge,
            TopologyArg::Chain => TopologyKind::Chain,
            TopologyArg::Full => TopologyKind::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineArg {
    Centralized,
    ExplicitOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Delta,
    Cp,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub cp: Option<f64>,
    #[arg(long, value_enum)]
    pub topology: Option<TopologyArg>,
    /// Disable Covariance Intersection.
    #[arg(long)]
    pub no_ci: bool,
    /// Ignore censored components (explicit-only filter).
    #[arg(long)]
    pub no_implicit: bool,
    /// Also run a baseline on the same realization; repeatable.
    #[arg(long, value_enum)]
    pub baseline: Vec<BaselineArg>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(runs) = self.runs {
            cfg.runs = runs;
        }
        if let Some(delta) = self.delta {
            cfg.event.delta = delta;
        }
        if let Some(cp) = self.cp {
            cfg.channel.cp = cp;
        }
        if let Some(t) = self.topology {
            cfg.topology.kind = t.into();
            cfg.topology.edges.clear();
        }
        if self.no_ci {
            cfg.ci.enabled = false;
        }
        if self.no_implicit {
            cfg.event.implicit = false;
        }
        for b in &self.baseline {
            match b {
                BaselineArg::Centralized => cfg.baselines.centralized = true,
                BaselineArg::ExplicitOnly => cfg.baselines.explicit_only = true,
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', num_args = 0.., required = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    Run(RunError),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io(_) => 1,
            Self::Usage(_) | Self::Config(_) | Self::Run(RunError::Config(_)) => 2,
            Self::Run(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Io(m) => write!(f, "{m}"),
            Self::Config(e) => write!(f, "{e}"),
            Self::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => Self::Config(c),
            other => Self::Run(other),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads / ETCL_THREADS must be at least 1".into()));
        }
        // A pool may already exist when called repeatedly in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Fixtures(cmd) => cmd_fixtures(&cmd),
    }
}

fn cmd_fixtures(cmd: &FixturesCommand) -> Result<(), CliError> {
    match cmd {
        FixturesCommand::List => {
            for name in fixtures::NAMES {
                println!("{name}");
            }
            Ok(())
        }
        FixturesCommand::Emit { name, out } => {
            let text = fixtures::emit(name).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown fixture `{name}`; known: {}",
                    fixtures::NAMES.join(", ")
                ))
            })?;
            match out {
                Some(path) => fs::write(path, text).map_err(io_error(path)),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

/// Reads and validates a scenario with overrides applied. Returns the config
/// and the raw file bytes.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<(ScenarioConfig, Vec<u8>), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config(ConfigError::Parse(format!("{} is not UTF-8", path.display()))))?;
    let mut cfg = ScenarioConfig::from_toml(&text)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok((cfg, bytes))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    scenario: &'a str,
    config_path: String,
    config_sha256: String,
    effective_config_sha256: String,
    seed: u64,
    runs: usize,
    overrides: &'a Overrides,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepManifest<'a>>,
}

#[derive(Debug, Serialize)]
struct SweepManifest<'a> {
    axis: &'static str,
    values: &'a [f64],
}

fn manifest<'a>(
    command: &'static str,
    path: &Path,
    bytes: &[u8],
    cfg: &'a ScenarioConfig,
    overrides: &'a Overrides,
    sweep: Option<SweepManifest<'a>>,
) -> Manifest<'a> {
    Manifest {
        schema_version: SCHEMA_VERSION,
        tool: "etcl",
        version: env!("CARGO_PKG_VERSION"),
        command,
        scenario: &cfg.name,
        config_path: path.display().to_string(),
        config_sha256: sha256_hex(bytes),
        effective_config_sha256: sha256_hex(cfg.to_toml().as_bytes()),
        seed: cfg.seed,
        runs: cfg.runs,
        overrides,
        sweep,
    }
}

type Row = (usize, String, String, f64);

fn run_rows(run: &etcl_core::ScenarioRun) -> Vec<Row> {
    let mut rows = run.metrics.rows();
    if let Some(c) = &run.centralized {
        rows.extend(c.rows());
    }
    if let Some(e) = &run.explicit_only {
        rows.extend(
            e.rows()
                .into_iter()
                .map(|(k, agent, metric, v)| (k, format!("explicit-only:{agent}"), metric, v)),
        );
    }
    rows.sort_by_key(|r| r.0);
    rows
}

/// Per-step rows, averaged over the runs of a batch.
pub fn batch_rows(batch: &Batch) -> Vec<Row> {
    let mut runs = batch.runs.iter().map(run_rows);
    let Some(mut acc) = runs.next() else {
        return Vec::new();
    };
    let mut count = 1.0;
    for rows in runs {
        debug_assert_eq!(rows.len(), acc.len());
        for (a, r) in acc.iter_mut().zip(rows) {
            a.3 += r.3;
        }
        count += 1.0;
    }
    if count > 1.0 {
        for a in &mut acc {
            a.3 /= count;
        }
    }
    acc
}

pub fn metrics_csv(batch: &Batch) -> String {
    let mut out = String::from("step,agent,metric,value\n");
    for (k, agent, metric, value) in batch_rows(batch) {
        let _ = writeln!(out, "{k},{agent},{metric},{value}");
    }
    out
}

#[derive(Debug, Serialize)]
struct PerRun {
    seed: u64,
    main: RunSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    centralized: Option<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    explicit_only: Option<RunSummary>,
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    scenario: &'a str,
    batch: &'a BatchSummary,
    per_run: Vec<PerRun>,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_error(&path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summaries serialize");
    s.push('\n');
    s
}

fn run_batch(cfg: &ScenarioConfig) -> Result<Batch, CliError> {
    let sc = Scenario::new(cfg.clone())?;
    Ok(monte_carlo(&sc, cfg.runs)?)
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, bytes) = load_config(&args.config, &args.overrides)?;
    let batch = run_batch(&cfg)?;
    fs::create_dir_all(&args.out).map_err(io_error(&args.out))?;

    write_file(&args.out, "metrics.csv", &metrics_csv(&batch))?;
    let report = RunReport {
        scenario: &cfg.name,
        batch: &batch.summary,
        per_run: batch
            .runs
            .iter()
            .map(|r| PerRun {
                seed: r.seed,
                main: r.metrics.summary(),
                centralized: r.centralized.as_ref().map(|m| m.summary()),
                explicit_only: r.explicit_only.as_ref().map(|m| m.summary()),
            })
            .collect(),
    };
    write_file(&args.out, "summary.json", &to_json(&report))?;
    let m = manifest("run", &args.config, &bytes, &cfg, &args.overrides, None);
    write_file(&args.out, "manifest.json", &to_json(&m))?;

    let s = &batch.summary.main;
    let mean = |a: Option<etcl_core::runner::Aggregate>| a.map_or("n/a".to_string(), |a| format!("{:.6}", a.mean));
    println!(
        "{}: {} run(s), explicit fraction {}, final mse {}, final variance {}, ci exchanges {}",
        cfg.name,
        batch.runs.len(),
        mean(s.explicit_fraction),
        mean(s.final_mse),
        mean(s.final_variance),
        mean(s.ci_exchanges),
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepPoint {
    value: f64,
    summary: BatchSummary,
}

const SWEEP_COLUMNS: [&str; 9] = [
    "explicit_fraction",
    "confusion_ratio",
    "ci_exchanges",
    "final_mse",
    "final_variance",
    "cross_final_mse",
    "cross_final_variance",
    "explicit_only_final_mse",
    "centralized_final_mse",
];

fn sweep_csv(axis: &str, points: &[SweepPoint]) -> String {
    use etcl_core::runner::Aggregate;
    let mut out = format!("axis,value,aggregate,{}\n", SWEEP_COLUMNS.join(","));
    type Stat = (&'static str, fn(&Aggregate) -> f64);
    let stats: [Stat; 5] = [
        ("mean", |a| a.mean),
        ("std", |a| a.std),
        ("min", |a| a.min),
        ("median", |a| a.median),
        ("max", |a| a.max),
    ];
    for p in points {
        let s = &p.summary;
        let cells = [
            s.main.explicit_fraction,
            s.main.confusion_ratio,
            s.main.ci_exchanges,
            s.main.final_mse,
            s.main.final_variance,
            s.main.cross_final_mse,
            s.main.cross_final_variance,
            s.explicit_only.as_ref().and_then(|e| e.final_mse),
            s.centralized.as_ref().and_then(|c| c.final_mse),
        ];
        for (name, f) in stats {
            let _ = write!(out, "{axis},{},{name}", p.value);
            for c in &cells {
                match c {
                    Some(a) => {
                        let _ = write!(out, ",{}", f(a));
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
    }
    out
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    if args.values.is_empty() {
        return Err(CliError::Usage("--values: expected at least one value".into()));
    }
    let (cfg, bytes) = load_config(&args.config, &args.overrides)?;
    let axis = match args.axis {
        Axis::Delta => "delta",
        Axis::Cp => "cp",
    };
    let mut points = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let mut point_cfg = cfg.clone();
        match args.axis {
            Axis::Delta => point_cfg.event.delta = value,
            Axis::Cp => point_cfg.channel.cp = value,
        }
        point_cfg.validate()?;
        let batch = run_batch(&point_cfg)?;
        eprintln!("{axis} = {value}: {} run(s) done", batch.runs.len());
        points.push(SweepPoint {
            value,
            summary: batch.summary,
        });
    }
    fs::create_dir_all(&args.out).map_err(io_error(&args.out))?;
    write_file(&args.out, "sweep.csv", &sweep_csv(axis, &points))?;
    write_file(&args.out, "summary.json", &to_json(&points))?;
    let sweep = SweepManifest {
        axis,
        values: &args.values,
    };
    let m = manifest("sweep", &args.config, &bytes, &cfg, &args.overrides, Some(sweep));
    write_file(&args.out, "manifest.json", &to_json(&m))?;
    Ok(())
}
