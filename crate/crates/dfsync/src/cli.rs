//! Command-line front end: configuration parsing, experiment orchestration,
//! and plot-ready file output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{self, ReportOptions};
use crate::cluster::ClusterState;
use crate::engine::{self, InitialCondition, StopCondition};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::verify;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "dfsync", version, about = "Degrade-and-fire oscillator population toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Configuration file (flat `key = value` with `[section]` headers).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for generated files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Seed for randomized probes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Parallel workers for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Base reset concentration.
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// Activator degradation rate.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Activator-to-reset coupling gain.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Synthesis delay.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Population size.
    #[arg(long = "N")]
    pub n: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a trajectory and export CSV / JSON-lines files.
    Simulate {
        /// Time horizon (overrides the config).
        #[arg(long)]
        horizon: Option<f64>,
        /// Stop after this many returns of the last oscillator instead.
        #[arg(long)]
        returns: Option<usize>,
        /// Uniform sampling step for the CSV output.
        #[arg(long)]
        sample_dt: Option<f64>,
    },
    /// Compute a return-map fixed point and write it as JSON.
    #[command(name = "fixed-point")]
    FixedPoint {
        #[command(flatten)]
        select: FixedPointSelect,
    },
    /// Evaluate stability criteria and spectra at a fixed point.
    Stability {
        #[command(flatten)]
        select: FixedPointSelect,
        /// Also estimate the beta threshold of in-subspace stability.
        #[arg(long)]
        estimate_beta_n: bool,
        /// Also estimate the largest delay passing the criterion.
        #[arg(long)]
        estimate_tau0: bool,
        /// Also estimate the smallest destabilizing cluster scaling.
        #[arg(long)]
        estimate_q0: bool,
    },
    /// Continue a fixed point in the delay.
    Continue {
        #[command(flatten)]
        select: FixedPointSelect,
        #[arg(long)]
        tau_target: f64,
        #[arg(long, default_value_t = 20)]
        steps: usize,
    },
    /// Sweep the delay and tabulate a metric.
    Sweep {
        /// Range `START:END:STEP`.
        #[arg(long)]
        tau: String,
        /// One of `contraction-ratio`, `smeared-multiplier`.
        #[arg(long, default_value = "contraction-ratio")]
        metric: String,
        /// Smearing amplitude for the contraction-ratio metric.
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        /// Returns measured per sweep point.
        #[arg(long, default_value_t = 40)]
        returns: usize,
    },
    /// Run the independent oracles: Euler comparison and Lipschitz probe.
    Verify {
        /// Euler steps to compare, coarsest first.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1e-2, 2e-3, 4e-4])]
        dt: Vec<f64>,
        /// Lipschitz probe trials.
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Probe pair radius.
        #[arg(long, default_value_t = 1e-3)]
        radius: f64,
        /// Comparison horizon.
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct FixedPointSelect {
    /// The fully synchronized fixed point.
    #[arg(long, conflicts_with_all = ["equi", "cluster"])]
    pub sync: bool,
    /// The equi-distributed fixed point with this many clusters.
    #[arg(long, conflicts_with = "cluster")]
    pub equi: Option<usize>,
    /// JSON file with `{n: [...], y: [...], a: ...}` as a Newton seed.
    #[arg(long)]
    pub cluster: Option<PathBuf>,
}

/// Defaults match the reference regime of the delay-dichotomy experiments.
pub const DEFAULT_PARAMS: (f64, f64, f64, f64, usize) = (2.0, 1.0, 0.2, 0.0, 10);

/// How the initial state of a simulation is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// Explicit repressor vector plus activator value.
    Explicit { x: Vec<f64>, a: f64 },
    /// Everyone at the synchronized fixed point section.
    Synchronized,
    /// The equi-distributed fixed point with this many clusters.
    Equi { clusters: usize },
    /// Fixed point smeared by `epsilon` on the given cluster (1-based).
    FpSmear { epsilon: f64, cluster: usize, clusters: Option<usize> },
}

/// Parsed and merged experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: ParameterSet,
    pub init: InitSpec,
    pub horizon: Option<f64>,
    pub returns: Option<usize>,
    pub trajectory_file: String,
    pub events_file: String,
    pub sample_dt: Option<f64>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let (r, beta, nu, tau, n) = DEFAULT_PARAMS;
        ExperimentConfig {
            params: ParameterSet { r, beta, nu, tau, n },
            init: InitSpec::FpSmear { epsilon: 1e-3, cluster: 1, clusters: None },
            horizon: Some(20.0),
            returns: None,
            trajectory_file: "trajectory.csv".into(),
            events_file: "events.jsonl".into(),
            sample_dt: Some(0.02),
            seed: 0,
        }
    }
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("params", &["R", "beta", "nu", "tau", "N"]),
    ("init", &["kind", "x", "A", "clusters", "epsilon", "cluster"]),
    ("run", &["horizon", "returns", "seed"]),
    ("output", &["trajectory", "events", "sample_dt"]),
];

/// Parse the flat `key = value` format with `[section]` headers. Unknown
/// sections or keys are rejected with an error naming them.
pub fn parse_config(text: &str) -> Result<BTreeMap<(String, String), String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    let mut unknown = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            if !KNOWN_KEYS.iter().any(|(s, _)| *s == section) {
                unknown.push(format!("[{section}]"));
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let known = KNOWN_KEYS
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, keys)| keys.contains(&key.as_str()))
            .unwrap_or(false);
        if !known {
            unknown.push(format!("{section}.{key}"));
        }
        out.insert((section.clone(), key), value);
    }
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown configuration keys: {}", unknown.join(", "))));
    }
    Ok(out)
}

fn parse_f64(map: &BTreeMap<(String, String), String>, sec: &str, key: &str) -> Result<Option<f64>> {
    match map.get(&(sec.to_string(), key.to_string())) {
        None => Ok(None),
        Some(v) => v
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{sec}.{key}: not a number: `{v}`"))),
    }
}

fn parse_usize(map: &BTreeMap<(String, String), String>, sec: &str, key: &str) -> Result<Option<usize>> {
    match map.get(&(sec.to_string(), key.to_string())) {
        None => Ok(None),
        Some(v) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{sec}.{key}: not a count: `{v}`"))),
    }
}

/// Build the effective configuration: defaults, then file, then flags.
pub fn resolve_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)?;
        let map = parse_config(&text)?;
        apply_config_map(&mut cfg, &map)?;
    }
    let p = &mut cfg.params;
    if let Some(v) = common.r {
        p.r = v;
    }
    if let Some(v) = common.beta {
        p.beta = v;
    }
    if let Some(v) = common.nu {
        p.nu = v;
    }
    if let Some(v) = common.tau {
        p.tau = v;
    }
    if let Some(v) = common.n {
        p.n = v;
    }
    cfg.seed = common.seed;
    cfg.params.validate()?;
    Ok(cfg)
}

fn apply_config_map(
    cfg: &mut ExperimentConfig,
    map: &BTreeMap<(String, String), String>,
) -> Result<()> {
    if let Some(v) = parse_f64(map, "params", "R")? {
        cfg.params.r = v;
    }
    if let Some(v) = parse_f64(map, "params", "beta")? {
        cfg.params.beta = v;
    }
    if let Some(v) = parse_f64(map, "params", "nu")? {
        cfg.params.nu = v;
    }
    if let Some(v) = parse_f64(map, "params", "tau")? {
        cfg.params.tau = v;
    }
    if let Some(v) = parse_usize(map, "params", "N")? {
        cfg.params.n = v;
    }
    if let Some(kind) = map.get(&("init".into(), "kind".into())) {
        cfg.init = match kind.as_str() {
            "synchronized" => InitSpec::Synchronized,
            "equi" => {
                let clusters = parse_usize(map, "init", "clusters")?
                    .ok_or_else(|| Error::Config("init.kind = equi needs init.clusters".into()))?;
                InitSpec::Equi { clusters }
            }
            "explicit" => {
                let xs = map
                    .get(&("init".into(), "x".into()))
                    .ok_or_else(|| Error::Config("init.kind = explicit needs init.x".into()))?;
                let x: Vec<f64> = xs
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("init.x: bad vector `{xs}`")))?;
                let a = parse_f64(map, "init", "A")?
                    .ok_or_else(|| Error::Config("init.kind = explicit needs init.A".into()))?;
                InitSpec::Explicit { x, a }
            }
            "fp-smear" => InitSpec::FpSmear {
                epsilon: parse_f64(map, "init", "epsilon")?.unwrap_or(1e-3),
                cluster: parse_usize(map, "init", "cluster")?.unwrap_or(1),
                clusters: parse_usize(map, "init", "clusters")?,
            },
            other => return Err(Error::Config(format!("unknown init.kind `{other}`"))),
        };
    }
    if let Some(v) = parse_f64(map, "run", "horizon")? {
        cfg.horizon = Some(v);
        cfg.returns = None;
    }
    if let Some(v) = parse_usize(map, "run", "returns")? {
        cfg.returns = Some(v);
    }
    if let Some(v) = parse_usize(map, "run", "seed")? {
        cfg.seed = v as u64;
    }
    if let Some(v) = map.get(&("output".into(), "trajectory".into())) {
        cfg.trajectory_file = v.clone();
    }
    if let Some(v) = map.get(&("output".into(), "events".into())) {
        cfg.events_file = v.clone();
    }
    if let Some(v) = parse_f64(map, "output", "sample_dt")? {
        cfg.sample_dt = if v > 0.0 { Some(v) } else { None };
    }
    Ok(())
}

/// Serialize a configuration into the flat file format; parsing the result
/// reproduces the configuration exactly.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str("[params]\n");
    s.push_str(&format!("R = {}\n", cfg.params.r));
    s.push_str(&format!("beta = {}\n", cfg.params.beta));
    s.push_str(&format!("nu = {}\n", cfg.params.nu));
    s.push_str(&format!("tau = {}\n", cfg.params.tau));
    s.push_str(&format!("N = {}\n", cfg.params.n));
    s.push_str("\n[init]\n");
    match &cfg.init {
        InitSpec::Synchronized => s.push_str("kind = synchronized\n"),
        InitSpec::Equi { clusters } => {
            s.push_str("kind = equi\n");
            s.push_str(&format!("clusters = {clusters}\n"));
        }
        InitSpec::Explicit { x, a } => {
            s.push_str("kind = explicit\n");
            let xs: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            s.push_str(&format!("x = {}\n", xs.join(", ")));
            s.push_str(&format!("A = {a}\n"));
        }
        InitSpec::FpSmear { epsilon, cluster, clusters } => {
            s.push_str("kind = fp-smear\n");
            s.push_str(&format!("epsilon = {epsilon}\n"));
            s.push_str(&format!("cluster = {cluster}\n"));
            if let Some(k) = clusters {
                s.push_str(&format!("clusters = {k}\n"));
            }
        }
    }
    s.push_str("\n[run]\n");
    if let Some(h) = cfg.horizon {
        s.push_str(&format!("horizon = {h}\n"));
    }
    if let Some(rt) = cfg.returns {
        s.push_str(&format!("returns = {rt}\n"));
    }
    s.push_str(&format!("seed = {}\n", cfg.seed));
    s.push_str("\n[output]\n");
    s.push_str(&format!("trajectory = {}\n", cfg.trajectory_file));
    s.push_str(&format!("events = {}\n", cfg.events_file));
    if let Some(dt) = cfg.sample_dt {
        s.push_str(&format!("sample_dt = {dt}\n"));
    }
    s
}

/// Resolve the initial condition of a simulation run.
pub fn resolve_init(cfg: &ExperimentConfig) -> Result<InitialCondition> {
    let params = &cfg.params;
    match &cfg.init {
        InitSpec::Explicit { x, a } => Ok(InitialCondition::Value { x: x.clone(), a: *a }),
        InitSpec::Synchronized => {
            let s = analysis::sync_fixed_point(params)?;
            Ok(InitialCondition::Value { x: vec![0.0; params.n], a: s.a_fp })
        }
        InitSpec::Equi { clusters } => {
            let fp = equi_at_tau(params, *clusters)?;
            let x = expand_clusters(&fp, params.n)?;
            Ok(InitialCondition::Value { x, a: fp.a })
        }
        InitSpec::FpSmear { epsilon, cluster, clusters } => {
            let fp = match clusters {
                None => {
                    let s = analysis::sync_fixed_point(params)?;
                    ClusterState { n: vec![params.n as u64], y: vec![0.0], a: s.a_fp, period: Some(s.period) }
                }
                Some(k) => scale_to_population(&equi_at_tau(params, *k)?, params.n)?,
            };
            let x = fp.expand_with_smear(*cluster, *epsilon)?;
            Ok(InitialCondition::Value { x, a: fp.a })
        }
    }
}

/// Equi-distributed fixed point at the configured delay (continued from
/// `tau = 0` when needed).
fn equi_at_tau(params: &ParameterSet, clusters: usize) -> Result<ClusterState> {
    let p0 = params.with_tau(0.0)?;
    let fp0 = analysis::equi_fixed_point(&p0, clusters)?;
    if params.tau == 0.0 {
        return Ok(fp0);
    }
    let run0 = fp0.params_for(&p0)?;
    let steps = ((params.tau / 0.01).ceil() as usize).max(4);
    analysis::continue_fixed_point(&fp0, &run0, params.tau, steps)
}

fn scale_to_population(fp: &ClusterState, n: usize) -> Result<ClusterState> {
    let base = fp.population() as usize;
    if n % base != 0 {
        return Err(Error::Config(format!(
            "population N = {n} is not a multiple of the {base}-cluster distribution"
        )));
    }
    Ok(fp.scaled((n / base) as u64))
}

fn expand_clusters(fp: &ClusterState, n: usize) -> Result<Vec<f64>> {
    let scaled = scale_to_population(fp, n)?;
    scaled.expand_with_smear(1, 0.0)
}

fn resolve_fixed_point(
    select: &FixedPointSelect,
    params: &ParameterSet,
) -> Result<(ClusterState, ParameterSet)> {
    if select.sync {
        let s = analysis::sync_fixed_point(params)?;
        let fp = ClusterState {
            n: vec![params.n as u64],
            y: vec![0.0],
            a: s.a_fp,
            period: Some(s.period),
        };
        return Ok((fp, *params));
    }
    if let Some(k) = select.equi {
        let fp = equi_at_tau(params, k)?;
        let run = fp.params_for(params)?;
        return Ok((fp, run));
    }
    if let Some(path) = &select.cluster {
        let text = fs::read_to_string(path)?;
        let seed: ClusterState = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cluster file: {e}")))?;
        seed.validate()?;
        let run = seed.params_for(params)?;
        let fp = analysis::refine_fixed_point(&seed, &run)?;
        return Ok((fp, run));
    }
    Err(Error::Config(
        "select a fixed point with --sync, --equi K, or --cluster FILE".into(),
    ))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut file = fs::File::create(&path)?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(path)
}

#[derive(Serialize)]
struct FixedPointReport<'a> {
    version: &'a str,
    params: &'a ParameterSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    sync: Option<crate::maps::SyncAnalysis>,
    fixed_point: &'a ClusterState,
    residual: f64,
}

#[derive(Serialize)]
struct SweepRow {
    tau: f64,
    value: f64,
}

#[derive(Serialize)]
struct VerifyReport {
    version: String,
    params: ParameterSet,
    seed: u64,
    convergence: Vec<ConvergenceRow>,
    slope: f64,
    lipschitz: verify::LipschitzReport,
}

#[derive(Serialize)]
struct ConvergenceRow {
    dt: f64,
    deviation: f64,
}

/// Execute a parsed command line. Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dfsync: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let out_dir = cli.common.out.clone();
    match cli.command {
        Command::Simulate { horizon, returns, sample_dt } => {
            let mut cfg = cfg;
            if let Some(h) = horizon {
                cfg.horizon = Some(h);
                cfg.returns = None;
            }
            if let Some(rr) = returns {
                cfg.returns = Some(rr);
            }
            if let Some(s) = sample_dt {
                cfg.sample_dt = if s > 0.0 { Some(s) } else { None };
            }
            cmd_simulate(&cfg, &out_dir)
        }
        Command::FixedPoint { select } => {
            let (fp, run_params) = resolve_fixed_point(&select, &cfg.params)?;
            let residual = analysis::fixed_point_residual(&fp, &run_params)?;
            let sync = if select.sync {
                Some(analysis::sync_fixed_point(&cfg.params)?)
            } else {
                None
            };
            let report = FixedPointReport {
                version: VERSION,
                params: &run_params,
                sync,
                fixed_point: &fp,
                residual,
            };
            let path = write_json(&out_dir, "fixed_point.json", &report)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Stability { select, estimate_beta_n, estimate_tau0, estimate_q0 } => {
            let (fp, run_params) = resolve_fixed_point(&select, &cfg.params)?;
            let options = ReportOptions {
                estimate_beta_n,
                estimate_tau_sup: estimate_tau0,
                estimate_q0,
            };
            let report = analysis::stability_report(&fp, &run_params, options)?;
            let path = write_json(&out_dir, "stability.json", &report)?;
            println!("{}", report.verdict);
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Continue { select, tau_target, steps } => {
            let (fp, run_params) = resolve_fixed_point(&select, &cfg.params)?;
            let continued = analysis::continue_fixed_point(&fp, &run_params, tau_target, steps)?;
            let target_params = run_params.with_tau(tau_target)?;
            let residual = analysis::fixed_point_residual(&continued, &target_params)?;
            let report = FixedPointReport {
                version: VERSION,
                params: &target_params,
                sync: None,
                fixed_point: &continued,
                residual,
            };
            let path = write_json(&out_dir, "continued.json", &report)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Sweep { tau, metric, epsilon, returns } => {
            cmd_sweep(&cfg, &out_dir, &tau, &metric, epsilon, returns, cli.common.jobs)
        }
        Command::Verify { dt, trials, radius, horizon } => {
            cmd_verify(&cfg, &out_dir, &dt, trials, radius, horizon)
        }
    }
}

fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let init = resolve_init(cfg)?;
    let stop = match (cfg.returns, cfg.horizon) {
        (Some(rr), _) => StopCondition::ReturnsOf { oscillator: cfg.params.n - 1, count: rr },
        (None, Some(h)) => StopCondition::Horizon(h),
        (None, None) => StopCondition::Horizon(20.0),
    };
    let traj = engine::simulate_until(&cfg.params, init, stop)?;
    fs::create_dir_all(out_dir)?;
    let traj_path = out_dir.join(&cfg.trajectory_file);
    let mut file = fs::File::create(&traj_path)?;
    traj.write_csv(&mut file, cfg.sample_dt)?;
    let events_path = out_dir.join(&cfg.events_file);
    let mut file = fs::File::create(&events_path)?;
    traj.write_events_jsonl(&mut file)?;
    println!(
        "simulated {} events over [{}, {}]; wrote {} and {}",
        traj.events.len(),
        traj.t0,
        traj.t_end,
        traj_path.display(),
        events_path.display()
    );
    if !traj.near_collisions.is_empty() {
        eprintln!(
            "note: {} near-collisions below {:.0e} (distinct oscillators almost merging)",
            traj.near_collisions.len(),
            engine::NEAR_COLLISION_GAP
        );
    }
    Ok(())
}

fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("range must be START:END:STEP, got `{spec}`")));
    }
    let start: f64 = parts[0].parse().map_err(|_| Error::Config("bad range start".into()))?;
    let end: f64 = parts[1].parse().map_err(|_| Error::Config("bad range end".into()))?;
    let step: f64 = parts[2].parse().map_err(|_| Error::Config("bad range step".into()))?;
    if !(step > 0.0) || end < start {
        return Err(Error::Config("range needs END >= START and STEP > 0".into()));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

/// Geometric-mean spread contraction per return of the smeared
/// synchronized state.
fn contraction_ratio(params: &ParameterSet, epsilon: f64, returns: usize) -> Result<f64> {
    let s = analysis::sync_fixed_point(params)?;
    let fp = ClusterState {
        n: vec![params.n as u64],
        y: vec![0.0],
        a: s.a_fp,
        period: Some(s.period),
    };
    let x = fp.expand_with_smear(1, epsilon)?;
    let traj = engine::simulate_until(
        params,
        InitialCondition::Value { x, a: s.a_fp },
        StopCondition::ReturnsOf { oscillator: params.n - 1, count: returns },
    )?;
    Ok(verify::spread_metrics(&traj, params.n - 1)?.mean_ratio)
}

fn smeared_multiplier_metric(params: &ParameterSet) -> Result<f64> {
    let s = analysis::sync_fixed_point(params)?;
    let fp = ClusterState {
        n: vec![params.n as u64],
        y: vec![0.0],
        a: s.a_fp,
        period: Some(s.period),
    };
    analysis::smeared_multiplier(&fp, params, 1)
}

fn cmd_sweep(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    tau_range: &str,
    metric: &str,
    epsilon: f64,
    returns: usize,
    jobs: usize,
) -> Result<()> {
    let taus = parse_range(tau_range)?;
    let eval = |tau: f64| -> (f64, f64) {
        let value = cfg
            .params
            .with_tau(tau)
            .and_then(|p| match metric {
                "contraction-ratio" => contraction_ratio(&p, epsilon, returns),
                "smeared-multiplier" => smeared_multiplier_metric(&p),
                other => Err(Error::Config(format!("unknown metric `{other}`"))),
            })
            .unwrap_or(f64::NAN);
        (tau, value)
    };
    let mut rows: Vec<SweepRow>;
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
        let results: Vec<(f64, f64)> = pool.install(|| {
            use rayon::prelude::*;
            taus.par_iter().map(|&tau| eval(tau)).collect()
        });
        rows = results
            .into_iter()
            .map(|(tau, value)| SweepRow { tau, value })
            .collect();
    } else {
        rows = taus.iter().map(|&tau| {
            let (tau, value) = eval(tau);
            SweepRow { tau, value }
        }).collect();
    }
    // Aggregation is ordered by the parameter, not completion order.
    rows.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap());
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("sweep.csv");
    let mut file = fs::File::create(&path)?;
    writeln!(file, "tau,{metric}")?;
    for row in &rows {
        writeln!(file, "{},{}", engine::fmt_float(row.tau), engine::fmt_float(row.value))?;
    }
    println!("wrote {}", path.display());
    for row in rows.iter().filter(|r| r.value.is_nan()) {
        eprintln!("note: tau = {} failed the parameter conditions; value recorded as NaN", row.tau);
    }
    Ok(())
}

fn cmd_verify(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    dts: &[f64],
    trials: usize,
    radius: f64,
    horizon: f64,
) -> Result<()> {
    let params = &cfg.params;
    // A mildly de-synchronized state exercises firing interleavings.
    let s = analysis::sync_fixed_point(params)?;
    let x0: Vec<f64> = (0..params.n)
        .map(|i| 0.35 * (params.n - 1 - i) as f64 / params.n.max(2) as f64)
        .collect();
    let a0 = s.a_fp;
    let exact = engine::simulate(params, InitialCondition::Value { x: x0.clone(), a: a0 }, horizon)?;
    let probes: Vec<f64> = (0..=2000).map(|i| horizon * i as f64 / 2000.0).collect();
    let mut convergence = Vec::new();
    for &dt in dts {
        let run = verify::reference_integrator(params, &x0, a0, dt, horizon, &probes)?;
        let dev = verify::trajectory_deviation(&exact, &run)?;
        convergence.push(ConvergenceRow { dt, deviation: dev.overall() });
    }
    let slope = crate::solve::loglog_slope(
        &convergence
            .iter()
            .map(|c| (c.dt, c.deviation))
            .collect::<Vec<_>>(),
    );
    let lipschitz = verify::lipschitz_probe(params, trials, radius, cfg.seed)?;
    let report = VerifyReport {
        version: VERSION.to_string(),
        params: *params,
        seed: cfg.seed,
        convergence,
        slope,
        lipschitz,
    };
    let path = write_json(out_dir, "verify.json", &report)?;
    println!("convergence slope {slope:.3}; wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_is_identity() {
        let mut cfg = ExperimentConfig::default();
        cfg.params.tau = 0.2;
        cfg.init = InitSpec::Explicit { x: vec![0.25, 0.5, 0.0], a: 0.625 };
        cfg.params.n = 3;
        cfg.returns = Some(50);
        cfg.horizon = None;
        let text = serialize_config(&cfg);
        let map = parse_config(&text).unwrap();
        let mut round = ExperimentConfig::default();
        round.horizon = None;
        apply_config_map(&mut round, &map).unwrap();
        round.seed = cfg.seed;
        assert_eq!(cfg, round);
    }

    #[test]
    fn unknown_keys_are_listed() {
        let text = "[params]\nR = 2.0\nbogus = 1\n[wat]\nx = 1\n";
        let err = parse_config(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("params.bogus"), "{msg}");
        assert!(msg.contains("[wat]"), "{msg}");
    }

    #[test]
    fn range_parsing_is_inclusive() {
        let taus = parse_range("0:0.3:0.1").unwrap();
        assert_eq!(taus.len(), 4);
        assert!((taus[3] - 0.3).abs() < 1e-12);
        assert!(parse_range("1:0:0.1").is_err());
    }

    #[test]
    fn flags_override_config_defaults() {
        let common = CommonArgs {
            config: None,
            out: PathBuf::from("."),
            seed: 9,
            jobs: 1,
            r: Some(3.0),
            beta: None,
            nu: None,
            tau: Some(0.1),
            n: Some(4),
        };
        let cfg = resolve_config(&common).unwrap();
        assert_eq!(cfg.params.r, 3.0);
        assert_eq!(cfg.params.tau, 0.1);
        assert_eq!(cfg.params.n, 4);
        assert_eq!(cfg.seed, 9);
    }
}
