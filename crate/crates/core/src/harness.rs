//! Experiment pipeline: the three localization modes, metrics, Monte Carlo
//! sweeps and result files.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chimera::{
    on_authentication, AuthAction, AuthEvent, AuthOutcome, AuthRecord, AuthSchedule, AuthState,
    Channel, SLOW_CHANNEL_PERIOD_S,
};
use crate::detector::{
    mitigate, test_statistic, threshold, Decision, DetectorConfig, DetectorState, Trial,
};
use crate::error::{Error, Result};
use crate::factors::{information_from_stds, Factor, GpsFactor};
use crate::liegroup::Pose;
use crate::simkit::{
    write_trajectory, GpsEpoch, MeasurementStream, Scenario, SpoofProfile, Trajectory,
};
use crate::solver::{odometry, Node, SolverParams, WindowGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    OdometryOnly,
    NaiveFgo,
    SrFgo,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::OdometryOnly, Mode::NaiveFgo, Mode::SrFgo];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::OdometryOnly => "odometry-only",
            Mode::NaiveFgo => "naive-fgo",
            Mode::SrFgo => "sr-fgo",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode '{s}' (odometry-only, naive-fgo, sr-fgo)"
                ))
            })
    }
}

fn default_auth_period() -> f64 {
    SLOW_CHANNEL_PERIOD_S
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub mode: Mode,
    pub window_size: usize,
    pub window_shift: usize,
    #[serde(default)]
    pub detector: DetectorConfig,
    /// Seconds between scheduled authentications.
    #[serde(default = "default_auth_period")]
    pub auth_period_s: f64,
    #[serde(default)]
    pub solver: SolverParams,
    /// GPS noise std assumed by the estimator; defaults to the scenario's.
    #[serde(default)]
    pub model_sigma_gps: Option<f64>,
    /// Odometry noise stds assumed by the estimator; default to the scenario's.
    #[serde(default)]
    pub model_sigma_icp: Option<[f64; 6]>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            mode: Mode::SrFgo,
            window_size: 100,
            window_shift: 10,
            detector: DetectorConfig::default(),
            auth_period_s: SLOW_CHANNEL_PERIOD_S,
            solver: SolverParams::default(),
            model_sigma_gps: None,
            model_sigma_icp: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.detector.validate()?;
        self.solver.validate()?;
        if self.window_size < 2 {
            return Err(Error::Config("window size must be at least 2".into()));
        }
        // One node must survive each slide to carry the anchor.
        if self.window_shift == 0 || self.window_shift >= self.window_size {
            return Err(Error::Config(format!(
                "window shift {} must lie in [1, {})",
                self.window_shift, self.window_size
            )));
        }
        let sched = self.schedule()?;
        if sched.epoch_length_steps % self.window_shift != 0 {
            return Err(Error::Config(
                "authentication epoch must be a multiple of the window shift".into(),
            ));
        }
        if !(self.sigma_gps() > 0.0) || self.sigma_icp().iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(
                "estimator noise model needs positive standard deviations".into(),
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<AuthSchedule> {
        if !(self.auth_period_s > 0.0) {
            return Err(Error::Config(
                "authentication period must be positive".into(),
            ));
        }
        let steps = (self.auth_period_s / self.scenario.dt).round() as usize;
        let channel = if self.auth_period_s == SLOW_CHANNEL_PERIOD_S {
            Channel::Slow
        } else {
            Channel::Custom
        };
        AuthSchedule::new(steps, channel)
    }

    pub fn sigma_gps(&self) -> f64 {
        self.model_sigma_gps.unwrap_or(self.scenario.sigma_gps)
    }

    pub fn sigma_icp(&self) -> [f64; 6] {
        self.model_sigma_icp.unwrap_or(self.scenario.sigma_icp)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.scenario.seed = seed;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub step: usize,
    pub message: String,
}

/// Wall-clock cost of window optimizations; excluded from deterministic outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub windows: usize,
    pub mean_window_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub window_size: usize,
    pub steps: usize,
    pub mean_error: f64,
    pub max_error: f64,
    pub final_error: f64,
    pub spoof: Option<SpoofProfile>,
    pub trials: usize,
    /// Trials whose own statistic exceeded the threshold.
    pub exceedances: usize,
    pub detections: usize,
    pub first_detection_s: Option<f64>,
    /// First detection at or after the attack start, minus the start.
    pub time_to_detect_s: Option<f64>,
    pub failsafe: bool,
    pub solver_failures: Vec<FailureRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub times: Vec<f64>,
    /// Causal estimate: each node as estimated right after the window
    /// optimization that first contained it.
    pub trajectory: Vec<Pose>,
    /// Final window after its last optimization.
    pub smoothed: Vec<Node>,
    pub errors: Vec<f64>,
    pub trials: Vec<Trial>,
    pub auth_log: Vec<AuthRecord>,
    pub timing: Timing,
    pub summary: RunSummary,
}

/// `e_k = ‖t_k^ref − t_k^est‖₂`.
pub fn l2_errors(est: &[Pose], reference: &[Pose]) -> Result<Vec<f64>> {
    if est.len() != reference.len() {
        return Err(Error::Config(format!(
            "trajectory lengths differ: {} vs {}",
            est.len(),
            reference.len()
        )));
    }
    Ok(est
        .iter()
        .zip(reference)
        .map(|(e, r)| (r.translation - e.translation).norm())
        .collect())
}

/// `(mean, max)` of an error series.
pub fn summarize(series: &[f64]) -> Result<(f64, f64)> {
    if series.is_empty() {
        return Err(Error::Config("cannot summarize an empty series".into()));
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((mean, max))
}

/// Probability of at least one false alarm in `trials` independent trials.
pub fn epoch_false_alarm_probability(alpha: f64, trials: usize) -> f64 {
    1.0 - (1.0 - alpha).powi(trials as i32)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub nominal_runs: usize,
    pub nominal_trials: usize,
    pub nominal_false_alarms: usize,
    pub per_trial_fa_rate: f64,
    pub per_run_fa_rate: f64,
    pub spoofed_runs: usize,
    pub detected_runs: usize,
    pub mean_time_to_detect: Option<f64>,
}

/// False-alarm rates over nominal records and time-to-detect over spoofed ones.
///
/// A nominal trial is a false alarm when its own statistic exceeds the
/// threshold; latched repeats are not counted twice.
pub fn detection_stats(records: &[RunRecord]) -> DetectionStats {
    let summaries: Vec<&RunSummary> = records.iter().map(|r| &r.summary).collect();
    detection_stats_from_summaries(&summaries)
}

pub fn detection_stats_from_summaries(summaries: &[&RunSummary]) -> DetectionStats {
    let mut s = DetectionStats::default();
    let mut ttd = Vec::new();
    for r in summaries {
        match &r.spoof {
            None => {
                s.nominal_runs += 1;
                s.nominal_trials += r.trials;
                s.nominal_false_alarms += r.exceedances;
                if r.exceedances > 0 {
                    s.per_run_fa_rate += 1.0;
                }
            }
            Some(_) => {
                s.spoofed_runs += 1;
                if let Some(t) = r.time_to_detect_s {
                    s.detected_runs += 1;
                    ttd.push(t);
                }
            }
        }
    }
    if s.nominal_trials > 0 {
        s.per_trial_fa_rate = s.nominal_false_alarms as f64 / s.nominal_trials as f64;
    }
    if s.nominal_runs > 0 {
        s.per_run_fa_rate /= s.nominal_runs as f64;
    }
    if !ttd.is_empty() {
        s.mean_time_to_detect = Some(ttd.iter().sum::<f64>() / ttd.len() as f64);
    }
    s
}

fn gps_factors(epoch: &GpsEpoch, sigma: f64) -> Result<Vec<Factor>> {
    epoch
        .sat_positions
        .iter()
        .zip(&epoch.ranges)
        .map(|(s, r)| Ok(Factor::Gps(GpsFactor::new(epoch.step, *s, *r, sigma)?)))
        .collect()
}

/// Single-epoch least-squares position from pseudoranges, starting at `init`.
pub fn gps_position_fix(epoch: &GpsEpoch, init: &Vector3<f64>) -> Option<Vector3<f64>> {
    let mut p = *init;
    for _ in 0..20 {
        let mut h = Matrix3::zeros();
        let mut b = Vector3::zeros();
        for (s, rho) in epoch.sat_positions.iter().zip(&epoch.ranges) {
            let d = p - s;
            let range = d.norm();
            let u = d / range;
            h += u * u.transpose();
            b += u * (rho - range);
        }
        let step = h.cholesky()?.solve(&b);
        p += step;
        if step.norm() < 1e-9 {
            break;
        }
    }
    p.iter().all(|v| v.is_finite()).then_some(p)
}

// Scheduled authentications fail exactly when an attack is under way.
fn auth_outcome(cfg: &RunConfig, step: usize) -> AuthOutcome {
    match &cfg.scenario.spoof {
        Some(p) if step > 0 && p.is_active(step as f64 * cfg.scenario.dt) => AuthOutcome::Failed,
        _ => AuthOutcome::Authentic,
    }
}

struct ModeOutput {
    estimates: Vec<Pose>,
    smoothed: Vec<Node>,
    trials: Vec<Trial>,
    auth_log: Vec<AuthRecord>,
    failures: Vec<FailureRecord>,
    failsafe: bool,
    timing: Timing,
}

fn run_odometry_only(
    cfg: &RunConfig,
    truth: &Trajectory,
    stream: &MeasurementStream,
) -> Result<ModeOutput> {
    let sched = cfg.schedule()?;
    let mut est = Vec::with_capacity(truth.len());
    est.push(truth.poses[0]);
    let mut auth_log = vec![AuthRecord {
        time: 0,
        outcome: AuthOutcome::Authentic,
        action: AuthAction::PositionFix,
    }];
    for (k, odo) in stream.odometry.iter().enumerate() {
        let step = k + 1;
        let mut next = est[k].compose(odo);
        if sched.is_scheduled(step) {
            let outcome = auth_outcome(cfg, step);
            let mut action = AuthAction::Ignored;
            if outcome == AuthOutcome::Authentic {
                if let Some(p) = stream
                    .gps_at(step)
                    .and_then(|e| gps_position_fix(e, &next.translation))
                {
                    next.translation = p;
                    action = AuthAction::PositionFix;
                }
            }
            auth_log.push(AuthRecord {
                time: step,
                outcome,
                action,
            });
        }
        est.push(next);
    }
    let last = truth.len() - 1;
    Ok(ModeOutput {
        smoothed: vec![Node {
            time: last,
            pose: est[last],
        }],
        estimates: est,
        trials: Vec::new(),
        auth_log,
        failures: Vec::new(),
        failsafe: false,
        timing: Timing::default(),
    })
}

fn run_fgo(
    cfg: &RunConfig,
    truth: &Trajectory,
    stream: &MeasurementStream,
    resilient: bool,
) -> Result<ModeOutput> {
    let sched = cfg.schedule()?;
    let n = cfg.window_size;
    let shift = cfg.window_shift;
    let sigma_gps = cfg.sigma_gps();
    let odo_info = information_from_stds(&cfg.sigma_icp());
    let last = truth.len() - 1;

    let mut graph = WindowGraph::new(n, 0, truth.poses[0])?;
    let mut est = Vec::with_capacity(truth.len());
    est.push(truth.poses[0]);
    let mut detector = DetectorState::new();
    let mut auth = AuthState::new();
    let mut failures = Vec::new();
    let mut window_seconds = Vec::new();

    let start = AuthEvent {
        time: 0,
        outcome: AuthOutcome::Authentic,
    };
    if resilient {
        on_authentication(
            &sched,
            start,
            n,
            &mut auth,
            &mut detector,
            &mut graph,
            &cfg.solver,
        )?;
    } else {
        auth.log.push(AuthRecord {
            time: 0,
            outcome: start.outcome,
            action: AuthAction::Ignored,
        });
    }
    if let Some(e) = stream.gps_at(0) {
        graph.extend(&[], gps_factors(e, sigma_gps)?)?;
    }

    let mut k = 0;
    while k < last {
        let k_new = (k + shift).min(last);
        let new_times: Vec<usize> = (k + 1..=k_new).collect();
        let mut factors = Vec::new();
        for &t in &new_times {
            factors.push(odometry(t - 1, stream.odometry[t - 1], odo_info)?);
            if !detector.spoofed {
                if let Some(e) = stream.gps_at(t) {
                    factors.extend(gps_factors(e, sigma_gps)?);
                }
            }
        }
        let overflow = (graph.len() + new_times.len()).saturating_sub(n);
        graph.slide(&new_times, factors, overflow)?;

        let clock = Instant::now();
        let solved = graph.optimize(&cfg.solver);
        window_seconds.push(clock.elapsed().as_secs_f64());
        if let Err(e) = solved {
            failures.push(FailureRecord {
                step: k_new,
                message: e.to_string(),
            });
        }

        if resilient && !detector.spoofed && !auth.is_trusted(k_new) {
            match test_statistic(&graph) {
                Ok((q, dof)) => {
                    let tau = threshold(&cfg.detector, dof)?;
                    if detector.decide(k_new, q, tau, dof) == Decision::SpoofDetected {
                        graph = match mitigate(&graph, &cfg.solver) {
                            Ok((g, _)) => g,
                            Err(e) => {
                                failures.push(FailureRecord {
                                    step: k_new,
                                    message: e.to_string(),
                                });
                                graph.strip_gps()
                            }
                        };
                    }
                }
                Err(Error::NoGpsFactors) => {}
                Err(e) => return Err(e),
            }
        }

        if k_new > 0 && sched.is_scheduled(k_new) {
            let event = AuthEvent {
                time: k_new,
                outcome: auth_outcome(cfg, k_new),
            };
            if resilient {
                match on_authentication(
                    &sched,
                    event,
                    n,
                    &mut auth,
                    &mut detector,
                    &mut graph,
                    &cfg.solver,
                ) {
                    Ok(_) => {}
                    Err(e @ Error::SolverFailure { .. }) => {
                        failures.push(FailureRecord {
                            step: k_new,
                            message: e.to_string(),
                        });
                        graph = graph.strip_gps();
                        detector.spoofed = true;
                        auth.failsafe = true;
                    }
                    Err(e) => return Err(e),
                }
            } else {
                auth.log.push(AuthRecord {
                    time: k_new,
                    outcome: event.outcome,
                    action: AuthAction::Ignored,
                });
            }
        }

        for &t in &new_times {
            est.push(*graph.pose(t).ok_or(Error::NodeNotInWindow { time: t })?);
        }
        k = k_new;
    }

    let windows = window_seconds.len();
    let mean_window_seconds = if windows > 0 {
        window_seconds.iter().sum::<f64>() / windows as f64
    } else {
        0.0
    };
    Ok(ModeOutput {
        estimates: est,
        smoothed: graph.nodes().to_vec(),
        trials: detector.history,
        auth_log: auth.log,
        failures,
        failsafe: auth.failsafe,
        timing: Timing {
            windows,
            mean_window_seconds,
        },
    })
}

/// Generates the scenario and runs one localization mode end to end.
pub fn run(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let (truth, stream) = cfg.scenario.realize()?;
    if truth.len() < 2 {
        return Err(Error::Config("trajectory needs at least two poses".into()));
    }
    let out = match cfg.mode {
        Mode::OdometryOnly => run_odometry_only(cfg, &truth, &stream)?,
        Mode::NaiveFgo => run_fgo(cfg, &truth, &stream, false)?,
        Mode::SrFgo => run_fgo(cfg, &truth, &stream, true)?,
    };
    let dt = cfg.scenario.dt;
    let errors = l2_errors(&out.estimates, &truth.poses)?;
    let (mean_error, max_error) = summarize(&errors)?;
    let spoof = cfg.scenario.spoof;
    let detections: Vec<&Trial> = out
        .trials
        .iter()
        .filter(|t| t.decision == Decision::SpoofDetected)
        .collect();
    let first_detection_s = detections.first().map(|t| t.time as f64 * dt);
    let time_to_detect_s = spoof.and_then(|p| {
        detections
            .iter()
            .map(|t| t.time as f64 * dt)
            .find(|&t| t >= p.t_start)
            .map(|t| t - p.t_start)
    });
    let summary = RunSummary {
        mode: cfg.mode,
        seed: cfg.scenario.seed,
        window_size: cfg.window_size,
        steps: errors.len(),
        mean_error,
        max_error,
        final_error: errors[errors.len() - 1],
        spoof,
        trials: out.trials.len(),
        exceedances: out.trials.iter().filter(|t| t.q > t.tau).count(),
        detections: detections.len(),
        first_detection_s,
        time_to_detect_s,
        failsafe: out.failsafe,
        solver_failures: out.failures,
    };
    Ok(RunRecord {
        config: cfg.clone(),
        times: (0..truth.len()).map(|k| k as f64 * dt).collect(),
        trajectory: out.estimates,
        smoothed: out.smoothed,
        errors,
        trials: out.trials,
        auth_log: out.auth_log,
        timing: out.timing,
        summary,
    })
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes the per-run files; `timing.json` only when `with_timing` is set.
pub fn write_run_outputs(dir: &Path, rec: &RunRecord, with_timing: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dt = rec.config.scenario.dt;
    let mut buf = Vec::new();
    write_trajectory(
        &mut buf,
        &Trajectory {
            times: rec.times.clone(),
            poses: rec.trajectory.clone(),
        },
    )?;
    std::fs::write(dir.join("trajectory.csv"), buf)?;
    let mut buf = Vec::new();
    let smoothed = Trajectory {
        times: rec.smoothed.iter().map(|n| n.time as f64 * dt).collect(),
        poses: rec.smoothed.iter().map(|n| n.pose).collect(),
    };
    write_trajectory(&mut buf, &smoothed)?;
    std::fs::write(dir.join("smoothed.csv"), buf)?;
    let errors = csv_text(
        &["t", "error"],
        rec.times
            .iter()
            .zip(&rec.errors)
            .map(|(t, e)| vec![t.to_string(), e.to_string()]),
    )?;
    std::fs::write(dir.join("errors.csv"), errors)?;
    let detections = csv_text(
        &["time_s", "q", "tau", "n", "decision"],
        rec.trials.iter().map(|t| {
            vec![
                (t.time as f64 * dt).to_string(),
                t.q.to_string(),
                t.tau.to_string(),
                t.n.to_string(),
                t.decision.as_str().to_string(),
            ]
        }),
    )?;
    std::fs::write(dir.join("detections.csv"), detections)?;
    let auth = csv_text(
        &["time_s", "outcome", "action"],
        rec.auth_log.iter().map(|a| {
            vec![
                (a.time as f64 * dt).to_string(),
                a.outcome.as_str().to_string(),
                a.action.as_str().to_string(),
            ]
        }),
    )?;
    std::fs::write(dir.join("auth.csv"), auth)?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&rec.summary)? + "\n",
    )?;
    if with_timing {
        std::fs::write(
            dir.join("timing.json"),
            serde_json::to_string_pretty(&rec.timing)? + "\n",
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRun {
    pub run_index: usize,
    pub seed: u64,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and (n − 1) standard deviation, in input order.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mode: Mode,
    pub ramp_rate: Option<f64>,
    pub window_size: usize,
    pub runs: usize,
    pub base_seed: u64,
    pub completed: usize,
    pub failed_runs: Vec<usize>,
    pub mean_error: MeanStd,
    pub max_error: MeanStd,
    pub final_error: MeanStd,
    pub failsafe_runs: usize,
    pub detection: DetectionStats,
}

pub fn summarize_cell(cfg: &RunConfig, base_seed: u64, runs: &[MonteCarloRun]) -> CellSummary {
    let recs: Vec<RunRecord> = runs.iter().filter_map(|r| r.record.clone()).collect();
    let pick = |f: fn(&RunSummary) -> f64| recs.iter().map(|r| f(&r.summary)).collect::<Vec<_>>();
    CellSummary {
        mode: cfg.mode,
        ramp_rate: cfg.scenario.spoof.map(|p| p.ramp_rate),
        window_size: cfg.window_size,
        runs: runs.len(),
        base_seed,
        completed: recs.len(),
        failed_runs: runs
            .iter()
            .filter(|r| r.record.is_none())
            .map(|r| r.run_index)
            .collect(),
        mean_error: MeanStd::of(&pick(|s| s.mean_error)),
        max_error: MeanStd::of(&pick(|s| s.max_error)),
        final_error: MeanStd::of(&pick(|s| s.final_error)),
        failsafe_runs: recs.iter().filter(|r| r.summary.failsafe).count(),
        detection: detection_stats(&recs),
    }
}

/// Runs `runs` independent seeds `base_seed + i` in parallel. Results are
/// ordered by run index, so the output does not depend on thread count.
pub fn monte_carlo(
    cfg: &RunConfig,
    runs: usize,
    base_seed: u64,
) -> Result<(Vec<MonteCarloRun>, CellSummary)> {
    if runs == 0 {
        return Err(Error::Config("Monte Carlo needs at least one run".into()));
    }
    cfg.validate()?;
    let results: Vec<MonteCarloRun> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            match run(&cfg.with_seed(seed)) {
                Ok(r) => MonteCarloRun {
                    run_index: i,
                    seed,
                    record: Some(r),
                    error: None,
                },
                Err(e) => MonteCarloRun {
                    run_index: i,
                    seed,
                    record: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let summary = summarize_cell(cfg, base_seed, &results);
    Ok((results, summary))
}

/// Grid of Monte Carlo cells: modes × ramp rates × window sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub modes: Vec<Mode>,
    /// Ramp rates in m/s; zero means a nominal (unspoofed) cell.
    pub ramp_rates: Vec<f64>,
    pub window_sizes: Vec<usize>,
    pub runs: usize,
    pub base_seed: u64,
    pub spoof_start_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub name: String,
    pub config: RunConfig,
    pub runs: Vec<MonteCarloRun>,
    pub summary: CellSummary,
}

impl SweepCell {
    pub fn mean_window_seconds(&self) -> f64 {
        let t: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.record.as_ref())
            .map(|r| r.timing.mean_window_seconds)
            .collect();
        MeanStd::of(&t).mean
    }
}

pub fn cell_config(
    base: &RunConfig,
    mode: Mode,
    ramp_rate: f64,
    window_size: usize,
    spoof_start_s: f64,
) -> RunConfig {
    let mut c = base.clone();
    c.mode = mode;
    c.window_size = window_size;
    c.scenario.spoof = if ramp_rate > 0.0 {
        let direction = base
            .scenario
            .spoof
            .map(|p| p.direction)
            .unwrap_or([1.0, 0.0, 0.0]);
        Some(SpoofProfile {
            t_start: spoof_start_s,
            ramp_rate,
            direction,
        })
    } else {
        None
    };
    c
}

pub fn cell_name(mode: Mode, ramp_rate: f64, window_size: usize) -> String {
    let mut s = String::new();
    let _ = write!(s, "{}_r{}_n{}", mode.as_str(), ramp_rate, window_size);
    s
}

pub fn run_sweep(base: &RunConfig, spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    if spec.modes.is_empty() || spec.ramp_rates.is_empty() || spec.window_sizes.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one mode, ramp rate and window size".into(),
        ));
    }
    if spec.ramp_rates.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Config("ramp rates must be non-negative".into()));
    }
    let mut cells = Vec::new();
    for &mode in &spec.modes {
        for &rate in &spec.ramp_rates {
            for &n in &spec.window_sizes {
                let cfg = cell_config(base, mode, rate, n, spec.spoof_start_s);
                let (runs, summary) = monte_carlo(&cfg, spec.runs, spec.base_seed)?;
                cells.push(SweepCell {
                    name: cell_name(mode, rate, n),
                    config: cfg,
                    runs,
                    summary,
                });
            }
        }
    }
    Ok(cells)
}

/// Per-run directories under `dir/<cell>/run_<i>` plus an aggregate `summary.json`.
pub fn write_sweep_outputs(dir: &Path, cells: &[SweepCell], with_timing: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for cell in cells {
        for r in &cell.runs {
            let run_dir = dir.join(&cell.name).join(format!("run_{:03}", r.run_index));
            match &r.record {
                Some(rec) => write_run_outputs(&run_dir, rec, with_timing)?,
                None => {
                    std::fs::create_dir_all(&run_dir)?;
                    std::fs::write(
                        run_dir.join("error.txt"),
                        r.error.clone().unwrap_or_default() + "\n",
                    )?;
                }
            }
        }
    }
    let summaries: Vec<&CellSummary> = cells.iter().map(|c| &c.summary).collect();
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summaries)? + "\n",
    )?;
    if with_timing {
        let timing: Vec<serde_json::Value> = cells
            .iter()
            .map(|c| serde_json::json!({ "cell": c.name, "mean_window_seconds": c.mean_window_seconds() }))
            .collect();
        std::fs::write(
            dir.join("timing.json"),
            serde_json::to_string_pretty(&timing)? + "\n",
        )?;
    }
    Ok(())
}

/// Aggregate over the per-run summaries that share mode, ramp rate and window size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: Mode,
    pub ramp_rate: Option<f64>,
    pub window_size: usize,
    pub runs: usize,
    pub mean_error: MeanStd,
    pub max_error: MeanStd,
    pub final_error: MeanStd,
    pub failsafe_runs: usize,
    pub detection: DetectionStats,
}

fn collect_summaries(dir: &Path, out: &mut Vec<RunSummary>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_summaries(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "summary.json") {
            let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            // Sweep-level summaries are arrays of cells; only per-run objects are aggregated.
            if value.is_object() {
                out.push(serde_json::from_value(value)?);
            }
        }
    }
    Ok(())
}

/// Walks `dir` for per-run `summary.json` files and aggregates them by cell.
pub fn report(dir: &Path) -> Result<Vec<ReportRow>> {
    let mut summaries = Vec::new();
    collect_summaries(dir, &mut summaries)?;
    if summaries.is_empty() {
        return Err(Error::Config(format!(
            "no run summaries under {}",
            dir.display()
        )));
    }
    let mut keys: Vec<(Mode, Option<f64>, usize)> = Vec::new();
    for s in &summaries {
        let key = (s.mode, s.spoof.map(|p| p.ramp_rate), s.window_size);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by(|a, b| {
        (a.0, a.2)
            .cmp(&(b.0, b.2))
            .then(a.1.unwrap_or(0.0).total_cmp(&b.1.unwrap_or(0.0)))
    });
    Ok(keys
        .into_iter()
        .map(|(mode, ramp_rate, window_size)| {
            let group: Vec<&RunSummary> = summaries
                .iter()
                .filter(|s| {
                    s.mode == mode
                        && s.spoof.map(|p| p.ramp_rate) == ramp_rate
                        && s.window_size == window_size
                })
                .collect();
            let pick = |f: fn(&RunSummary) -> f64| group.iter().map(|s| f(s)).collect::<Vec<_>>();
            ReportRow {
                mode,
                ramp_rate,
                window_size,
                runs: group.len(),
                mean_error: MeanStd::of(&pick(|s| s.mean_error)),
                max_error: MeanStd::of(&pick(|s| s.max_error)),
                final_error: MeanStd::of(&pick(|s| s.final_error)),
                failsafe_runs: group.iter().filter(|s| s.failsafe).count(),
                detection: detection_stats_from_summaries(&group),
            }
        })
        .collect())
}
