//! Scenario generation: ground truth, constellation, pseudoranges, odometry.
//!
//! Everything is expressed in a local East-North-Up frame whose origin is the
//! trajectory start. The earth center sits at `(0, 0, -EARTH_RADIUS)`.
//!
//! Every random draw comes from a ChaCha8 generator seeded by the scenario
//! seed, with separate streams for the trajectory, GPS noise and odometry
//! noise. Spoofing only adds a deterministic bias, so nominal and spoofed runs
//! with the same seed consume identical noise.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::factors::odom_predict;
use crate::liegroup::{Pose, Rotation, Tangent};

pub use crate::harness::monte_carlo;

pub const EARTH_RADIUS: f64 = 6_371_000.0;
pub const GPS_ORBIT_ALTITUDE: f64 = 20_200_000.0;
/// Earth gravitational parameter, m³/s².
pub const EARTH_MU: f64 = 3.986_004_418e14;
/// Quaternion norms further than this from one are rejected on load.
pub const QUATERNION_NORM_TOL: f64 = 1e-3;

const STREAM_TRAJECTORY: u64 = 0;
const STREAM_GPS: u64 = 1;
const STREAM_ODOMETRY: u64 = 2;

/// Generator for one named stream of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw by inverse-CDF on a uniform in the open unit interval.
pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let n = Normal::standard();
    n.inverse_cdf(u)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Straight,
    Circuit,
    Smooth,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(Self::Straight),
            "circuit" => Ok(Self::Circuit),
            "smooth" => Ok(Self::Smooth),
            other => Err(Error::Config(format!("unknown trajectory kind '{other}'"))),
        }
    }
}

/// Time-stamped ground-truth poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

pub const CIRCUIT_RADIUS: f64 = 200.0;

// Smooth-turn model: a new target yaw rate every few seconds, tracked by a
// first-order lag so heading stays continuous.
const TURN_SEGMENT_S: f64 = 5.0;
const MAX_YAW_RATE: f64 = 0.1;
const YAW_RATE_LAG_S: f64 = 1.0;

/// Planar vehicle trajectory sampled every `dt` seconds, body x forward.
pub fn gen_trajectory(
    kind: TrajectoryKind,
    duration_s: f64,
    speed_mps: f64,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    if !(duration_s > 0.0 && dt > 0.0 && speed_mps >= 0.0) {
        return Err(Error::Config(
            "trajectory needs positive duration and step and non-negative speed".into(),
        ));
    }
    let steps = (duration_s / dt).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let pose_at =
        |x: f64, y: f64, yaw: f64| Pose::new(Rotation::about_z(yaw), Vector3::new(x, y, 0.0));
    let poses = match kind {
        TrajectoryKind::Straight => times
            .iter()
            .map(|&t| pose_at(speed_mps * t, 0.0, 0.0))
            .collect(),
        TrajectoryKind::Circuit => {
            let r = CIRCUIT_RADIUS;
            times
                .iter()
                .map(|&t| {
                    let th = speed_mps * t / r;
                    pose_at(r * th.sin(), r - r * th.cos(), th)
                })
                .collect()
        }
        TrajectoryKind::Smooth => {
            let mut rng = stream_rng(seed, STREAM_TRAJECTORY);
            let per_segment = ((TURN_SEGMENT_S / dt).round() as usize).max(1);
            let gain = 1.0 - (-dt / YAW_RATE_LAG_S).exp();
            let (mut x, mut y, mut yaw, mut rate, mut target) = (0.0, 0.0, 0.0f64, 0.0, 0.0);
            let mut out = Vec::with_capacity(steps + 1);
            for k in 0..=steps {
                out.push(pose_at(x, y, yaw));
                if k % per_segment == 0 {
                    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                    target = MAX_YAW_RATE * (2.0 * u - 1.0);
                }
                rate += gain * (target - rate);
                // Midpoint heading keeps the path consistent with the yaw.
                let mid = yaw + 0.5 * rate * dt;
                x += speed_mps * dt * mid.cos();
                y += speed_mps * dt * mid.sin();
                yaw += rate * dt;
            }
            out
        }
    };
    Ok(Trajectory { times, poses })
}

/// Writes `t,x,y,z,qx,qy,qz,qw` rows.
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "x", "y", "z", "qx", "qy", "qz", "qw"])?;
    for (t, p) in traj.times.iter().zip(&traj.poses) {
        let q = p.rotation.to_quaternion();
        let tr = p.translation;
        wr.write_record(
            [*t, tr.x, tr.y, tr.z, q.i, q.j, q.k, q.w]
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>(),
        )?;
    }
    wr.flush()?;
    Ok(())
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_trajectory(std::fs::File::create(path)?, traj)
}

pub fn read_trajectory<R: Read>(r: R) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "x", "y", "z", "qx", "qy", "qz", "qw"] {
        return Err(Error::Parse {
            line: 1,
            reason: "expected header t,x,y,z,qx,qy,qz,qw".into(),
        });
    }
    let mut times: Vec<f64> = Vec::new();
    let mut poses = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != 8 {
            return Err(Error::Parse {
                line,
                reason: format!("expected 8 fields, found {}", rec.len()),
            });
        }
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line,
                reason: e.to_string(),
            })?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse {
                line,
                reason: "non-finite value".into(),
            });
        }
        if let Some(&prev) = times.last() {
            if v[0] <= prev {
                return Err(Error::Parse {
                    line,
                    reason: "timestamps must increase strictly".into(),
                });
            }
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if (q.norm() - 1.0).abs() > QUATERNION_NORM_TOL {
            return Err(Error::Parse {
                line,
                reason: format!("quaternion norm {} is not unit", q.norm()),
            });
        }
        times.push(v[0]);
        poses.push(Pose::new(
            Rotation::from_quaternion(&UnitQuaternion::from_quaternion(q)),
            Vector3::new(v[1], v[2], v[3]),
        ));
    }
    if poses.is_empty() {
        return Err(Error::Parse {
            line: 1,
            reason: "trajectory file has no rows".into(),
        });
    }
    Ok(Trajectory { times, poses })
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    read_trajectory(std::fs::File::open(path)?)
}

/// Circular-orbit constellation seen from the local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    // Per satellite: initial unit position and unit in-plane velocity
    // direction, both relative to the earth center.
    orbits: Vec<(Vector3<f64>, Vector3<f64>)>,
    radius: f64,
    mean_motion: f64,
}

impl Constellation {
    /// `m` satellites at evenly spaced azimuths with elevations alternating
    /// between 30° and 60° at `t = 0`.
    pub fn new(m: usize) -> Result<Self> {
        if m < 4 {
            return Err(Error::Config(format!(
                "constellation needs at least 4 satellites, got {m}"
            )));
        }
        let radius = EARTH_RADIUS + GPS_ORBIT_ALTITUDE;
        let center = Vector3::new(0.0, 0.0, -EARTH_RADIUS);
        let orbits = (0..m)
            .map(|j| {
                let az = 2.0 * PI * j as f64 / m as f64;
                let el = if j % 2 == 0 { 30f64 } else { 60f64 }.to_radians();
                let los = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
                // Range along the line of sight that reaches the orbit sphere.
                let b = -los.dot(&center);
                let range = -b + (b * b - center.norm_squared() + radius * radius).sqrt();
                let u = (los * range - center) / radius;
                let east = Vector3::z().cross(&u).normalize();
                let north = u.cross(&east);
                let inc = if j % 2 == 0 { 55f64 } else { -55f64 }.to_radians();
                (u, east * inc.cos() + north * inc.sin())
            })
            .collect();
        Ok(Self {
            orbits,
            radius,
            mean_motion: (EARTH_MU / radius.powi(3)).sqrt(),
        })
    }

    pub fn len(&self) -> usize {
        self.orbits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbits.is_empty()
    }

    pub fn sat_positions(&self, t: f64) -> Vec<Vector3<f64>> {
        let center = Vector3::new(0.0, 0.0, -EARTH_RADIUS);
        let (s, c) = (self.mean_motion * t).sin_cos();
        self.orbits
            .iter()
            .map(|(u, v)| center + (u * c + v * s) * self.radius)
            .collect()
    }
}

pub fn sat_positions(t: f64, constellation: &Constellation) -> Vec<Vector3<f64>> {
    constellation.sat_positions(t)
}

/// Noisy ranges from the receiver position to each satellite.
pub fn gen_pseudoranges<R: RngCore>(
    truth: &Pose,
    sats: &[Vector3<f64>],
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    gen_ranges_from(&truth.translation, sats, sigma, rng)
}

fn gen_ranges_from<R: RngCore>(
    position: &Vector3<f64>,
    sats: &[Vector3<f64>],
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    sats.iter()
        .map(|s| (position - s).norm() + sigma * standard_normal(rng))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpoofProfile {
    pub t_start: f64,
    pub ramp_rate: f64,
    #[serde(default = "east")]
    pub direction: [f64; 3],
}

fn east() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

impl SpoofProfile {
    pub fn new(t_start: f64, ramp_rate: f64) -> Self {
        Self {
            t_start,
            ramp_rate,
            direction: east(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = Vector3::from(self.direction);
        if !(self.ramp_rate >= 0.0 && self.t_start >= 0.0) {
            return Err(Error::Config(
                "spoof ramp rate and start must be non-negative".into(),
            ));
        }
        if (d.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "spoof direction must be a unit vector".into(),
            ));
        }
        Ok(())
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_start
    }
}

/// Position-domain spoofing offset at time `t`.
pub fn spoof_bias(t: f64, p: &SpoofProfile) -> Vector3<f64> {
    if t < p.t_start {
        return Vector3::zeros();
    }
    Vector3::from(p.direction) * (p.ramp_rate * (t - p.t_start))
}

/// Ranges from the spoofed position `truth + spoof_bias(t)` with nominal noise.
pub fn gen_spoofed_pseudoranges<R: RngCore>(
    truth: &Pose,
    t: f64,
    p: &SpoofProfile,
    sats: &[Vector3<f64>],
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    gen_ranges_from(&(truth.translation + spoof_bias(t, p)), sats, sigma, rng)
}

/// Body-frame relative motion `truth_i⁻¹·truth_{i+1}` perturbed by `exp(ε)`.
pub fn gen_odometry<R: RngCore>(
    truth_i: &Pose,
    truth_ip1: &Pose,
    sigma_icp: &[f64; 6],
    rng: &mut R,
) -> Pose {
    let mut eps = Tangent::zeros();
    for (e, s) in eps.iter_mut().zip(sigma_icp) {
        *e = s * standard_normal(rng);
    }
    odom_predict(truth_i, truth_ip1).retract(&eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectorySource {
    Generated {
        kind: TrajectoryKind,
        duration_s: f64,
        speed_mps: f64,
    },
    File {
        path: PathBuf,
    },
}

/// Scenario description; the JSON form of the simulation configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub trajectory: TrajectorySource,
    pub dt: f64,
    pub gps_rate_hz: f64,
    pub odom_rate_hz: f64,
    pub num_satellites: usize,
    pub sigma_gps: f64,
    /// Rotation stds (rad) then translation stds (m).
    pub sigma_icp: [f64; 6],
    #[serde(default)]
    pub spoof: Option<SpoofProfile>,
    pub seed: u64,
}

pub const DEFAULT_SIGMA_GPS: f64 = 7.0;
pub const DEFAULT_SIGMA_ICP: [f64; 6] = [0.01, 0.01, 0.01, 0.05, 0.05, 0.05];
/// Shortest scenario that still covers one slow-channel authentication epoch.
pub const MIN_DURATION_S: f64 = crate::chimera::SLOW_CHANNEL_PERIOD_S;

impl Default for Scenario {
    fn default() -> Self {
        Self {
            trajectory: TrajectorySource::Generated {
                kind: TrajectoryKind::Smooth,
                duration_s: 200.0,
                speed_mps: 10.0,
            },
            dt: 0.1,
            gps_rate_hz: 1.0,
            odom_rate_hz: 10.0,
            num_satellites: 8,
            sigma_gps: DEFAULT_SIGMA_GPS,
            sigma_icp: DEFAULT_SIGMA_ICP,
            spoof: None,
            seed: 0,
        }
    }
}

// Integer ratio `a / b` when it is one within rounding.
fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let n = r.round();
    (n >= 1.0 && (r - n).abs() < 1e-9 * n.max(1.0)).then_some(n as usize)
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        let steps_per_second = 1.0 / self.dt;
        // One graph node per odometry measurement.
        if integer_ratio(steps_per_second, self.odom_rate_hz) != Some(1) {
            return Err(Error::Config("odometry rate must equal 1/dt".into()));
        }
        if integer_ratio(steps_per_second, self.gps_rate_hz).is_none() {
            return Err(Error::Config("GPS rate must divide 1/dt".into()));
        }
        if self.num_satellites < 4 {
            return Err(Error::Config(format!(
                "at least 4 satellites required, got {}",
                self.num_satellites
            )));
        }
        if !(self.sigma_gps >= 0.0) || self.sigma_icp.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config(
                "noise standard deviations must be non-negative".into(),
            ));
        }
        if let TrajectorySource::Generated {
            duration_s,
            speed_mps,
            ..
        } = &self.trajectory
        {
            if *duration_s < MIN_DURATION_S {
                return Err(Error::Config(format!(
                    "duration {duration_s} s is shorter than one epoch"
                )));
            }
            if !(*speed_mps >= 0.0) {
                return Err(Error::Config("speed must be non-negative".into()));
            }
        }
        if let Some(p) = &self.spoof {
            p.validate()?;
        }
        Ok(())
    }

    /// Steps between GPS epochs.
    pub fn gps_every(&self) -> usize {
        integer_ratio(1.0 / self.dt, self.gps_rate_hz).unwrap_or(1)
    }

    pub fn truth(&self) -> Result<Trajectory> {
        match &self.trajectory {
            TrajectorySource::Generated {
                kind,
                duration_s,
                speed_mps,
            } => gen_trajectory(*kind, *duration_s, *speed_mps, self.dt, self.seed),
            TrajectorySource::File { path } => {
                let traj = load_trajectory(path)?;
                for (k, t) in traj.times.iter().enumerate() {
                    if (t - traj.times[0] - k as f64 * self.dt).abs() > 1e-6 {
                        return Err(Error::Config(format!(
                            "trajectory row {k} is off the dt grid"
                        )));
                    }
                }
                let duration = traj.times[traj.len() - 1] - traj.times[0];
                if duration < MIN_DURATION_S - 1e-6 {
                    return Err(Error::Config(format!(
                        "trajectory lasts {duration} s, shorter than one epoch"
                    )));
                }
                Ok(traj)
            }
        }
    }

    /// Ground truth and the full measurement stream for this scenario's seed.
    pub fn realize(&self) -> Result<(Trajectory, MeasurementStream)> {
        self.validate()?;
        let truth = self.truth()?;
        let stream = gen_measurements(self, &truth)?;
        Ok((truth, stream))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsEpoch {
    pub step: usize,
    pub sat_positions: Vec<Vector3<f64>>,
    pub ranges: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementStream {
    pub dt: f64,
    /// `odometry[k]` links step `k` to step `k + 1`.
    pub odometry: Vec<Pose>,
    /// GPS epochs in increasing step order.
    pub gps: Vec<GpsEpoch>,
}

impl MeasurementStream {
    pub fn gps_at(&self, step: usize) -> Option<&GpsEpoch> {
        self.gps
            .binary_search_by_key(&step, |e| e.step)
            .ok()
            .map(|i| &self.gps[i])
    }
}

pub fn gen_measurements(sc: &Scenario, truth: &Trajectory) -> Result<MeasurementStream> {
    let constellation = Constellation::new(sc.num_satellites)?;
    let mut gps_rng = stream_rng(sc.seed, STREAM_GPS);
    let mut odo_rng = stream_rng(sc.seed, STREAM_ODOMETRY);
    let every = sc.gps_every();
    let mut gps = Vec::new();
    for (k, pose) in truth.poses.iter().enumerate() {
        if k % every != 0 {
            continue;
        }
        let t = k as f64 * sc.dt;
        let sats = constellation.sat_positions(t);
        let ranges = match &sc.spoof {
            Some(p) => gen_spoofed_pseudoranges(pose, t, p, &sats, sc.sigma_gps, &mut gps_rng),
            None => gen_pseudoranges(pose, &sats, sc.sigma_gps, &mut gps_rng),
        };
        if ranges.iter().any(|r| *r <= 0.0) {
            return Err(Error::Config(format!(
                "non-positive pseudorange at step {k}"
            )));
        }
        gps.push(GpsEpoch {
            step: k,
            sat_positions: sats,
            ranges,
        });
    }
    let odometry = truth
        .poses
        .windows(2)
        .map(|w| gen_odometry(&w[0], &w[1], &sc.sigma_icp, &mut odo_rng))
        .collect();
    Ok(MeasurementStream {
        dt: sc.dt,
        odometry,
        gps,
    })
}

/// Writes `odometry.csv` (`step,x,y,z,qx,qy,qz,qw`, the relative pose from
/// `step` to `step + 1`) and `gps.csv` (`step,sat,sx,sy,sz,range`) into `dir`.
pub fn save_measurements(dir: &Path, stream: &MeasurementStream) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut wr = csv::Writer::from_path(dir.join("odometry.csv"))?;
    wr.write_record(["step", "x", "y", "z", "qx", "qy", "qz", "qw"])?;
    for (k, p) in stream.odometry.iter().enumerate() {
        let q = p.rotation.to_quaternion();
        let tr = p.translation;
        let mut row = vec![k.to_string()];
        row.extend(
            [tr.x, tr.y, tr.z, q.i, q.j, q.k, q.w]
                .iter()
                .map(|v| v.to_string()),
        );
        wr.write_record(&row)?;
    }
    wr.flush()?;
    let mut wr = csv::Writer::from_path(dir.join("gps.csv"))?;
    wr.write_record(["step", "sat", "sx", "sy", "sz", "range"])?;
    for e in &stream.gps {
        for (j, (s, r)) in e.sat_positions.iter().zip(&e.ranges).enumerate() {
            let mut row = vec![e.step.to_string(), j.to_string()];
            row.extend([s.x, s.y, s.z, *r].iter().map(|v| v.to_string()));
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mean_std(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    }

    #[test]
    fn straight_trajectory_length() {
        let tr = gen_trajectory(TrajectoryKind::Straight, 200.0, 10.0, 0.1, 1).unwrap();
        assert_eq!(tr.len(), 2001);
        let d = (tr.poses[2000].translation - tr.poses[0].translation).norm();
        assert_relative_eq!(d, 2000.0, epsilon = 1e-9);
    }

    #[test]
    fn circuit_stays_on_circle() {
        let tr = gen_trajectory(TrajectoryKind::Circuit, 200.0, 10.0, 0.1, 1).unwrap();
        let c = Vector3::new(0.0, CIRCUIT_RADIUS, 0.0);
        for p in &tr.poses {
            assert!(((p.translation - c).norm() - CIRCUIT_RADIUS).abs() < 1e-6);
        }
    }

    #[test]
    fn smooth_trajectory_deterministic_and_consistent() {
        let a = gen_trajectory(TrajectoryKind::Smooth, 200.0, 10.0, 0.1, 9).unwrap();
        let b = gen_trajectory(TrajectoryKind::Smooth, 200.0, 10.0, 0.1, 9).unwrap();
        let c = gen_trajectory(TrajectoryKind::Smooth, 200.0, 10.0, 0.1, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // Displacement each step points along the body x axis, up to half a
        // step of turning.
        for w in a.poses.windows(2) {
            let rel = odom_predict(&w[0], &w[1]);
            assert!(rel.translation.y.abs() < 0.01 && (rel.translation.x - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!("zigzag".parse::<TrajectoryKind>().is_err());
        assert_eq!(
            "circuit".parse::<TrajectoryKind>().unwrap(),
            TrajectoryKind::Circuit
        );
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let tr = gen_trajectory(TrajectoryKind::Smooth, 20.0, 10.0, 0.1, 3).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &tr).unwrap();
        let back = read_trajectory(buf.as_slice()).unwrap();
        let q = |x: f64| (x * 1e9).round();
        for (a, b) in tr.poses.iter().zip(&back.poses) {
            let (ma, mb) = (a.to_matrix(), b.to_matrix());
            for (x, y) in ma.iter().zip(mb.iter()) {
                assert_eq!(q(*x), q(*y));
            }
        }
        assert_eq!(tr.times, back.times);
    }

    #[test]
    fn malformed_trajectory_files_rejected() {
        let header = "t,x,y,z,qx,qy,qz,qw\n";
        assert!(read_trajectory("".as_bytes()).is_err());
        assert!(read_trajectory(header.as_bytes()).is_err());
        let bad_q = format!("{header}0,0,0,0,0,0,0,0.9\n");
        assert!(read_trajectory(bad_q.as_bytes()).is_err());
        let slightly_off = format!("{header}0,0,0,0,0,0,0,1.0005\n");
        let tr = read_trajectory(slightly_off.as_bytes()).unwrap();
        assert!(tr.poses[0].rotation.orthogonality_error() < 1e-12);
        let backwards = format!("{header}1,0,0,0,0,0,0,1\n0.5,0,0,0,0,0,0,1\n");
        assert!(read_trajectory(backwards.as_bytes()).is_err());
        let short = format!("{header}1,0,0,0,0,0,1\n");
        assert!(read_trajectory(short.as_bytes()).is_err());
    }

    #[test]
    fn constellation_geometry() {
        let c = Constellation::new(8).unwrap();
        let center = Vector3::new(0.0, 0.0, -EARTH_RADIUS);
        let s0 = c.sat_positions(0.0);
        assert_eq!(s0.len(), 8);
        let r = EARTH_RADIUS + GPS_ORBIT_ALTITUDE;
        for s in &s0 {
            assert!(((s - center).norm() - r).abs() < 0.01 * r);
            // Above the local horizon.
            assert!(s.z > 0.0);
        }
        let s1 = c.sat_positions(0.1);
        for (a, b) in s0.iter().zip(&s1) {
            assert!((a - b).norm() < 5_000.0);
        }
        assert_eq!(s0, c.sat_positions(0.0));
        assert!(Constellation::new(3).is_err());
    }

    #[test]
    fn constellation_has_finite_gdop_over_the_run() {
        let c = Constellation::new(8).unwrap();
        for t in [0.0, 100.0, 200.0] {
            let mut h = nalgebra::Matrix4::<f64>::zeros();
            for s in c.sat_positions(t) {
                let u = -s.normalize();
                let row = nalgebra::RowVector4::new(u.x, u.y, u.z, 1.0);
                h += row.transpose() * row;
            }
            let gdop = h.try_inverse().unwrap().trace().sqrt();
            assert!(gdop.is_finite() && gdop < 10.0, "gdop {gdop}");
        }
    }

    #[test]
    fn pseudorange_noise_statistics() {
        let sats = vec![Vector3::new(1.0e7, 2.0e7, 1.5e7)];
        let truth = Pose::from_translation(5.0, -3.0, 1.0);
        let geo = (truth.translation - sats[0]).norm();
        let mut rng = stream_rng(42, STREAM_GPS);
        let errs: Vec<f64> = (0..10_000)
            .map(|_| gen_pseudoranges(&truth, &sats, 7.0, &mut rng)[0] - geo)
            .collect();
        let (m, s) = mean_std(&errs);
        assert!((6.8..=7.2).contains(&s), "std {s}");
        assert!(m.abs() <= 0.2, "mean {m}");
        let exact = gen_pseudoranges(&truth, &sats, 0.0, &mut rng);
        assert_eq!(exact[0], geo);
        let a = gen_pseudoranges(&truth, &sats, 7.0, &mut stream_rng(5, 1));
        let b = gen_pseudoranges(&truth, &sats, 7.0, &mut stream_rng(5, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn spoof_bias_examples() {
        let p = SpoofProfile::new(100.0, 2.0);
        assert_eq!(spoof_bias(100.0, &p), Vector3::zeros());
        assert_eq!(spoof_bias(50.0, &p), Vector3::zeros());
        assert_eq!(spoof_bias(200.0, &p), Vector3::new(200.0, 0.0, 0.0));
        assert_eq!(
            spoof_bias(150.0, &SpoofProfile::new(100.0, 1.0)),
            Vector3::new(50.0, 0.0, 0.0)
        );
        let mut bad = p;
        bad.direction = [1.0, 1.0, 0.0];
        assert!(bad.validate().is_err());
        bad = p;
        bad.ramp_rate = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spoofed_ranges_geometry() {
        let truth = Pose::from_translation(10.0, 20.0, 0.0);
        let sat = Vector3::new(2.0e7, 0.0, 1.0e7);
        let p = SpoofProfile::new(0.0, 1.0);
        let b = spoof_bias(30.0, &p);
        let mut rng = stream_rng(0, 1);
        let rho = gen_spoofed_pseudoranges(&truth, 30.0, &p, &[sat], 0.0, &mut rng)[0];
        assert_eq!(rho, (truth.translation + b - sat).norm());

        // Bias orthogonal to the line of sight: second-order change only.
        let los = (sat - truth.translation).normalize();
        let ortho = los.cross(&Vector3::z()).normalize();
        let mut pp = SpoofProfile::new(0.0, 1.0);
        pp.direction = [ortho.x, ortho.y, ortho.z];
        let range = (truth.translation - sat).norm();
        let rho = gen_spoofed_pseudoranges(&truth, 30.0, &pp, &[sat], 0.0, &mut rng)[0];
        assert!((rho - range).abs() <= 30.0f64.powi(2) / (2.0 * range) + 1e-6);

        // Before the attack the stream matches nominal draws.
        let late = SpoofProfile::new(1e6, 1.0);
        let a = gen_spoofed_pseudoranges(&truth, 5.0, &late, &[sat], 7.0, &mut stream_rng(3, 1));
        let n = gen_pseudoranges(&truth, &[sat], 7.0, &mut stream_rng(3, 1));
        assert_eq!(a, n);
    }

    #[test]
    fn odometry_noise_statistics() {
        let a = Pose::new(Rotation::about_z(0.3), Vector3::new(1.0, 2.0, 0.0));
        let b = Pose::new(Rotation::about_z(0.35), Vector3::new(1.9, 2.4, 0.1));
        let truth_rel = odom_predict(&a, &b);
        assert!(
            gen_odometry(&a, &b, &[0.0; 6], &mut stream_rng(0, 2)).max_abs_diff(&truth_rel) < 1e-15
        );
        let mut rng = stream_rng(11, STREAM_ODOMETRY);
        let draws: Vec<Tangent> = (0..10_000)
            .map(|_| {
                gen_odometry(&a, &b, &DEFAULT_SIGMA_ICP, &mut rng)
                    .ominus(&truth_rel)
                    .unwrap()
            })
            .collect();
        for (c, sigma) in DEFAULT_SIGMA_ICP.iter().enumerate() {
            let col: Vec<f64> = draws.iter().map(|d| d[c]).collect();
            let (_, s) = mean_std(&col);
            assert!(
                (s / sigma - 1.0).abs() < 0.05,
                "component {c}: {s} vs {sigma}"
            );
        }
    }

    #[test]
    fn noiseless_odometry_composes_to_truth() {
        let tr = gen_trajectory(TrajectoryKind::Smooth, 30.0, 10.0, 0.1, 4).unwrap();
        let mut rng = stream_rng(0, 2);
        let mut p = tr.poses[0];
        for w in tr.poses.windows(2) {
            p = p.compose(&gen_odometry(&w[0], &w[1], &[0.0; 6], &mut rng));
        }
        assert!(p.max_abs_diff(tr.poses.last().unwrap()) < 1e-9);
    }

    #[test]
    fn scenario_json_round_trip_and_validation() {
        let sc = Scenario {
            spoof: Some(SpoofProfile::new(100.0, 1.0)),
            ..Scenario::default()
        };
        let s = serde_json::to_string(&sc).unwrap();
        assert_eq!(Scenario::from_json(&s).unwrap(), sc);
        let extra = s.replacen('{', "{\"bogus\":1,", 1);
        assert!(Scenario::from_json(&extra).is_err());
        let short = Scenario {
            trajectory: TrajectorySource::Generated {
                kind: TrajectoryKind::Straight,
                duration_s: 60.0,
                speed_mps: 10.0,
            },
            ..Scenario::default()
        };
        assert!(short.validate().is_err());
        assert!(Scenario {
            gps_rate_hz: 3.0,
            ..Scenario::default()
        }
        .validate()
        .is_err());
        assert!(Scenario {
            num_satellites: 3,
            ..Scenario::default()
        }
        .validate()
        .is_err());
        assert_eq!(Scenario::default().gps_every(), 10);
    }

    #[test]
    fn nominal_and_spoofed_streams_align_before_attack() {
        let nominal = Scenario {
            seed: 17,
            ..Scenario::default()
        };
        let spoofed = Scenario {
            spoof: Some(SpoofProfile::new(100.0, 1.0)),
            ..nominal.clone()
        };
        let (ta, a) = nominal.realize().unwrap();
        let (tb, b) = spoofed.realize().unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.odometry, b.odometry);
        for (x, y) in a.gps.iter().zip(&b.gps) {
            if (x.step as f64) * 0.1 < 100.0 {
                assert_eq!(x, y);
            } else if x.step > 1000 {
                assert_ne!(x.ranges, y.ranges);
            }
        }
        assert_eq!(a.gps.len(), 201);
        assert!(a.gps.iter().all(|e| e.ranges.iter().all(|r| *r > 0.0)));
    }
}
