//! Command-line front end: scenario generation, single runs, Monte Carlo
//! sweeps, a synthetic ICP demo and summary aggregation.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use srfgo::harness::{self, Mode, RunConfig, SweepSpec};
use srfgo::icp::{self, IcpParams, SceneSpec};
use srfgo::simkit::{self, Scenario, SpoofProfile, TrajectoryKind, TrajectorySource};
use srfgo::{Error, Pose, Tangent};

/// Spoofing onset used when a ramp rate is given without a start time.
const DEFAULT_SPOOF_START_S: f64 = 100.0;
/// Neighbourhood size for target normals in the ICP demo.
const NORMAL_NEIGHBORS: usize = 10;

#[derive(Parser)]
#[command(
    name = "srfgo",
    version,
    about = "Spoofing-resilient GNSS/odometry localization simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a scenario, its ground truth and its measurements.
    Simulate(SimulateArgs),
    /// Run one localization mode on one scenario.
    Run(RunArgs),
    /// Monte Carlo over modes × ramp rates × window sizes.
    Sweep(SweepArgs),
    /// Register two synthetic scans of a scene.
    IcpDemo(IcpDemoArgs),
    /// Aggregate per-run summaries found under a directory.
    Report(ReportArgs),
}

/// Scenario fields shared by every subcommand that builds one.
#[derive(Args, Clone, Default)]
struct ScenarioArgs {
    /// Generated trajectory shape: straight, circuit or smooth.
    #[arg(long)]
    trajectory: Option<TrajectoryKind>,
    /// Ground-truth CSV (t,x,y,z,qx,qy,qz,qw) instead of a generated trajectory.
    #[arg(long, conflicts_with = "trajectory")]
    trajectory_file: Option<PathBuf>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    gps_rate: Option<f64>,
    #[arg(long)]
    satellites: Option<usize>,
    #[arg(long)]
    sigma_gps: Option<f64>,
    /// Spoofing onset in seconds.
    #[arg(long)]
    spoof_start: Option<f64>,
}

impl ScenarioArgs {
    fn apply(&self, sc: &mut Scenario) -> Result<(), Error> {
        if let Some(path) = &self.trajectory_file {
            sc.trajectory = TrajectorySource::File { path: path.clone() };
        } else if self.trajectory.is_some() || self.duration.is_some() || self.speed.is_some() {
            let (mut kind, mut duration_s, mut speed_mps) = (TrajectoryKind::Smooth, 200.0, 10.0);
            if let TrajectorySource::Generated {
                kind: k,
                duration_s: d,
                speed_mps: s,
            } = &sc.trajectory
            {
                (kind, duration_s, speed_mps) = (*k, *d, *s);
            }
            sc.trajectory = TrajectorySource::Generated {
                kind: self.trajectory.unwrap_or(kind),
                duration_s: self.duration.unwrap_or(duration_s),
                speed_mps: self.speed.unwrap_or(speed_mps),
            };
        }
        if let Some(dt) = self.dt {
            sc.dt = dt;
            sc.odom_rate_hz = 1.0 / dt;
        }
        if let Some(r) = self.gps_rate {
            sc.gps_rate_hz = r;
        }
        if let Some(m) = self.satellites {
            sc.num_satellites = m;
        }
        if let Some(s) = self.sigma_gps {
            sc.sigma_gps = s;
        }
        if let (Some(t), Some(p)) = (self.spoof_start, sc.spoof.as_mut()) {
            p.t_start = t;
        }
        Ok(())
    }
}

fn set_ramp(sc: &mut Scenario, ramp_rate: f64, start: Option<f64>) {
    sc.spoof = if ramp_rate > 0.0 {
        let base = sc
            .spoof
            .unwrap_or(SpoofProfile::new(DEFAULT_SPOOF_START_S, ramp_rate));
        Some(SpoofProfile {
            t_start: start.unwrap_or(base.t_start),
            ramp_rate,
            direction: base.direction,
        })
    } else {
        None
    };
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Spoofing ramp rate in m/s; zero disables spoofing.
    #[arg(long)]
    ramp_rate: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Estimator fields shared by `run` and `sweep`.
#[derive(Args)]
struct EstimatorArgs {
    #[arg(long)]
    window_shift: Option<usize>,
    /// Per-trial false-alarm probability of the detector.
    #[arg(long)]
    alpha: Option<f64>,
    /// Seconds between scheduled authentications.
    #[arg(long)]
    auth_period: Option<f64>,
}

impl EstimatorArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.window_shift {
            cfg.window_shift = s;
        }
        if let Some(a) = self.alpha {
            cfg.detector.alpha = a;
        }
        if let Some(p) = self.auth_period {
            cfg.auth_period_s = p;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// odometry-only, naive-fgo or sr-fgo.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ramp_rate: Option<f64>,
    #[arg(long)]
    window_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write wall-clock timing to timing.json.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep JSON with an optional `base` run configuration and the grid fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Runs per cell.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    mode: Vec<Mode>,
    #[arg(long, value_delimiter = ',')]
    ramp_rate: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    window_size: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    timing: bool,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    #[serde(default)]
    base: Option<RunConfig>,
    #[serde(default)]
    modes: Option<Vec<Mode>>,
    #[serde(default)]
    ramp_rates: Option<Vec<f64>>,
    #[serde(default)]
    window_sizes: Option<Vec<usize>>,
    #[serde(default)]
    runs: Option<usize>,
    #[serde(default)]
    base_seed: Option<u64>,
    #[serde(default)]
    spoof_start_s: Option<f64>,
}

#[derive(Args)]
struct IcpDemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative motion between the scans: translation in m.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_hyphen_values = true, default_values_t = [0.5, 0.2, 0.0])]
    translation: Vec<f64>,
    /// Relative motion between the scans: yaw in degrees.
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    yaw_deg: f64,
    /// Points per square metre.
    #[arg(long, default_value_t = 10.0)]
    density: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory searched recursively for per-run summary.json files.
    dir: PathBuf,
    /// Write the aggregate as JSON here instead of printing a table.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_config(path)?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut sc = match &args.config {
        Some(p) => parse_json(p)?,
        None => Scenario::default(),
    };
    args.scenario.apply(&mut sc)?;
    if let Some(s) = args.seed {
        sc.seed = s;
    }
    if let Some(r) = args.ramp_rate {
        set_ramp(&mut sc, r, args.scenario.spoof_start);
    }
    sc.validate()?;
    let (truth, stream) = sc.realize()?;
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("scenario.json"), &sc)?;
    simkit::save_trajectory(&args.out.join("trajectory.csv"), &truth)?;
    simkit::save_measurements(&args.out, &stream)?;
    println!(
        "{} poses, {} GPS epochs written to {}",
        truth.len(),
        stream.gps.len(),
        args.out.display()
    );
    Ok(())
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => parse_json(p)?,
        None => RunConfig::default(),
    };
    args.scenario.apply(&mut cfg.scenario)?;
    args.estimator.apply(&mut cfg);
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.scenario.seed = s;
    }
    if let Some(r) = args.ramp_rate {
        set_ramp(&mut cfg.scenario, r, args.scenario.spoof_start);
    }
    if let Some(n) = args.window_size {
        cfg.window_size = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = run_config(&args)?;
    let rec = harness::run(&cfg)?;
    harness::write_run_outputs(&args.out, &rec, args.timing)?;
    write_json(&args.out.join("config.json"), &cfg)?;
    println!("{}", serde_json::to_string_pretty(&rec.summary)?);
    Ok(())
}

// A non-empty flag list wins over the config file.
fn pick_list<T: Clone>(flag: &[T], file: Option<Vec<T>>, name: &str) -> Result<Vec<T>> {
    if !flag.is_empty() {
        Ok(flag.to_vec())
    } else {
        file.ok_or_else(|| {
            config_error(format!("sweep needs --{name} or the matching config field"))
        })
    }
}

fn sweep_setup(args: &SweepArgs) -> Result<(RunConfig, SweepSpec)> {
    let file: SweepFile = match &args.config {
        Some(p) => parse_json(p)?,
        None => SweepFile::default(),
    };
    let mut base = file.base.unwrap_or_default();
    args.scenario.apply(&mut base.scenario)?;
    args.estimator.apply(&mut base);
    let modes = pick_list(&args.mode, file.modes, "mode")?;
    let ramp_rates = pick_list(&args.ramp_rate, file.ramp_rates, "ramp-rate")?;
    let window_sizes = pick_list(&args.window_size, file.window_sizes, "window-size")?;
    let runs = args
        .runs
        .or(file.runs)
        .ok_or_else(|| config_error("sweep needs --runs or `runs`"))?;
    let base_seed = args
        .seed
        .or(file.base_seed)
        .ok_or_else(|| config_error("sweep needs --seed or `base_seed`"))?;
    let spoof_start_s = args
        .scenario
        .spoof_start
        .or(file.spoof_start_s)
        .or(base.scenario.spoof.map(|p| p.t_start))
        .unwrap_or(DEFAULT_SPOOF_START_S);
    let spec = SweepSpec {
        modes,
        ramp_rates,
        window_sizes,
        runs,
        base_seed,
        spoof_start_s,
    };
    // Every cell must be valid before any work starts.
    for &m in &spec.modes {
        for &r in &spec.ramp_rates {
            for &n in &spec.window_sizes {
                harness::cell_config(&base, m, r, n, spec.spoof_start_s).validate()?;
            }
        }
    }
    if spec.runs == 0 {
        return Err(config_error("sweep needs at least one run per cell"));
    }
    Ok((base, spec))
}

fn sweep(args: SweepArgs) -> Result<()> {
    let (base, spec) = sweep_setup(&args)?;
    let cells = harness::run_sweep(&base, &spec)?;
    harness::write_sweep_outputs(&args.out, &cells, args.timing)?;
    for c in &cells {
        let s = &c.summary;
        println!(
            "{:<28} runs {:>3}/{:<3} mean error {:>9.3} ± {:<8.3} m  detected {}/{}",
            c.name,
            s.completed,
            s.runs,
            s.mean_error.mean,
            s.mean_error.std,
            s.detection.detected_runs,
            s.detection.spoofed_runs
        );
    }
    Ok(())
}

fn icp_demo(args: IcpDemoArgs) -> Result<()> {
    let t = &args.translation;
    let motion = Pose::exp(&Tangent::new(
        0.0,
        0.0,
        args.yaw_deg.to_radians(),
        0.0,
        0.0,
        0.0,
    ))
    .compose(&Pose::from_translation(t[0], t[1], t[2]));
    let scene = SceneSpec::two_walls();
    let viewpoint = Pose::from_translation(0.0, 0.0, 1.5);
    let raw = icp::gen_scene_cloud(&scene, &viewpoint, args.density, args.noise, args.seed)?;
    let target = icp::estimate_normals(&raw, NORMAL_NEIGHBORS, &Pose::identity().translation)?;
    let source = icp::gen_scene_cloud(
        &scene,
        &viewpoint.compose(&motion),
        args.density,
        args.noise,
        args.seed + 1,
    )?;
    let (estimate, report) =
        icp::register(&source, &target, &Pose::identity(), &IcpParams::default())?;
    let err = estimate.inverse().compose(&motion).log()?;
    let result = serde_json::json!({
        "true_motion": motion,
        "estimate": estimate,
        "rotation_error_deg": err.fixed_rows::<3>(0).norm().to_degrees(),
        "translation_error_m": err.fixed_rows::<3>(3).norm(),
        "report": report,
    });
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        icp::save_cloud(&dir.join("source.csv"), &source)?;
        icp::save_cloud(&dir.join("target.csv"), &target)?;
        write_json(&dir.join("result.json"), &result)?;
    }
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    if !args.dir.is_dir() {
        return Err(config_error(format!(
            "{} is not a directory",
            args.dir.display()
        )));
    }
    let rows = harness::report(&args.dir)?;
    if let Some(out) = &args.out {
        return write_json(out, &rows);
    }
    println!(
        "{:<14} {:>6} {:>6} {:>5} {:>20} {:>10} {:>9} {:>10}",
        "mode", "ramp", "N", "runs", "mean error (m)", "max (m)", "detected", "fa/trial"
    );
    for r in &rows {
        let d = &r.detection;
        println!(
            "{:<14} {:>6} {:>6} {:>5} {:>11.3} ± {:<6.3} {:>10.3} {:>5}/{:<3} {:>10.2e}",
            r.mode.as_str(),
            r.ramp_rate.map_or("-".to_string(), |x| x.to_string()),
            r.window_size,
            r.runs,
            r.mean_error.mean,
            r.mean_error.std,
            r.max_error.mean,
            d.detected_runs,
            d.spoofed_runs,
            d.per_trial_fa_rate
        );
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::Json(_)
            | Error::Parse { .. }
            | Error::InvalidProbability(_)
            | Error::InvalidDegreesOfFreedom(_),
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::IcpDemo(a) => icp_demo(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
