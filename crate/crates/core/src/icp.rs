//! Point-to-plane ICP on synthetic clouds.
//!
//! Solves for the transform `T` that maps source points onto the target's
//! tangent planes, minimizing `Σ (nᵀ(T·p_s − p_t))²`. Increments are applied
//! on the left, `T ← exp(δ)·T`, so the Jacobian of one residual with respect
//! to `δ = [ω; ρ]` is `[(p'×n)ᵀ, nᵀ]` with `p' = T·p_s`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{Pose, Tangent};
use crate::simkit::{standard_normal, stream_rng};

/// Smallest cloud accepted for registration.
pub const MIN_REGISTRATION_POINTS: usize = 100;
/// Smallest correspondence set that constrains all six degrees of freedom.
pub const MIN_CORRESPONDENCES: usize = 6;
// Relative eigenvalue below which a neighborhood is considered rank deficient.
const RANK_TOL: f64 = 1e-9;
const MAX_BACKTRACKS: usize = 20;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Per-point unit normal; `None` marks a degenerate neighborhood.
    pub normals: Option<Vec<Option<Vector3<f64>>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| pose.transform_point(p))
                .collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| n.map(|n| pose.rotation * n)).collect()),
        }
    }
}

/// Static 3-d tree over a point set. Ties are broken by lowest point index.
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        Self::with_indices(points, (0..points.len()).collect())
    }

    /// Tree over the subset `indices` of `points`.
    pub fn with_indices(points: &'a [Vector3<f64>], mut order: Vec<usize>) -> Self {
        let mut axes = vec![0u8; order.len()];
        build(points, &mut order, &mut axes, 0);
        Self {
            points,
            order,
            axes,
        }
    }

    /// The `k` nearest points as `(index, squared distance)`, closest first.
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut best = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(q, k, 0, self.order.len(), &mut best);
        }
        best
    }

    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        self.knn(q, 1).into_iter().next()
    }

    fn search(
        &self,
        q: &Vector3<f64>,
        k: usize,
        lo: usize,
        hi: usize,
        best: &mut Vec<(usize, f64)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let d2 = (self.points[i] - q).norm_squared();
        let key = (d2, i);
        if best.len() < k || key < (best[best.len() - 1].1, best[best.len() - 1].0) {
            let pos = best.partition_point(|&(j, e)| (e, j) < key);
            best.insert(pos, (i, d2));
            best.truncate(k);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[i][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, k, near.0, near.1, best);
        if best.len() < k || diff * diff <= best[best.len() - 1].1 {
            self.search(q, k, far.0, far.1, best);
        }
    }
}

fn build(points: &[Vector3<f64>], order: &mut [usize], axes: &mut [u8], depth: usize) {
    if order.is_empty() {
        return;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = if order.len() > 1 {
        (hi - lo).imax()
    } else {
        depth % 3
    };
    order.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let mid = order.len() / 2;
    axes[mid] = axis as u8;
    let (ol, or) = order.split_at_mut(mid);
    let (al, ar) = axes.split_at_mut(mid);
    build(points, ol, al, depth + 1);
    build(points, &mut or[1..], &mut ar[1..], depth + 1);
}

/// Normals from the smallest-eigenvalue direction of each k-neighborhood,
/// oriented toward `viewpoint`. Rank-deficient neighborhoods get `None`.
pub fn estimate_normals(
    cloud: &PointCloud,
    k_neighbors: usize,
    viewpoint: &Vector3<f64>,
) -> Result<PointCloud> {
    if k_neighbors < 3 {
        return Err(Error::Config(format!(
            "normal estimation needs k >= 3, got {k_neighbors}"
        )));
    }
    if k_neighbors > cloud.len() {
        return Err(Error::Config(format!(
            "k = {k_neighbors} exceeds cloud size {}",
            cloud.len()
        )));
    }
    let tree = KdTree::new(&cloud.points);
    let normals = cloud
        .points
        .iter()
        .map(|p| {
            let nbrs = tree.knn(p, k_neighbors);
            let mean = nbrs
                .iter()
                .map(|(i, _)| cloud.points[*i])
                .sum::<Vector3<f64>>()
                / nbrs.len() as f64;
            let cov = nbrs.iter().fold(Matrix3::zeros(), |acc, (i, _)| {
                let d = cloud.points[*i] - mean;
                acc + d * d.transpose()
            });
            let eig = SymmetricEigen::new(cov);
            let mut idx = [0usize, 1, 2];
            idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let largest = eig.eigenvalues[idx[2]];
            if largest <= 0.0 || eig.eigenvalues[idx[1]] <= RANK_TOL * largest {
                return None;
            }
            let mut n: Vector3<f64> = eig.eigenvectors.column(idx[0]).normalize();
            let toward = (viewpoint - p).dot(&n);
            // Sensor on the plane: fall back to a fixed sign convention.
            let flip = if toward.abs() > 1e-12 {
                toward < 0.0
            } else {
                n[n.iamax()] < 0.0
            };
            if flip {
                n = -n;
            }
            Some(n)
        })
        .collect();
    Ok(PointCloud {
        points: cloud.points.clone(),
        normals: Some(normals),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcpParams {
    pub max_correspondence_dist: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_correspondence_dist: 1.0,
            max_iterations: 30,
            convergence_tol: 1e-6,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_correspondence_dist > 0.0
            && self.max_iterations > 0
            && self.convergence_tol > 0.0
        {
            Ok(())
        } else {
            Err(Error::Config("ICP parameters must all be positive".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpReport {
    pub iterations: usize,
    pub converged: bool,
    pub inliers: usize,
    pub inlier_rms: f64,
    /// Truncated objective at the initial guess and after each accepted step.
    pub objective_trace: Vec<f64>,
}

struct Matching {
    // (source index, target index, point-to-plane residual)
    pairs: Vec<(usize, usize, f64)>,
    objective: f64,
}

fn match_points(
    source: &[Vector3<f64>],
    target: &PointCloud,
    normals: &[Option<Vector3<f64>>],
    tree: &KdTree,
    pose: &Pose,
    d_max: f64,
) -> Matching {
    let cap = d_max * d_max;
    let mut pairs = Vec::new();
    let mut objective = 0.0;
    for (s, p) in source.iter().enumerate() {
        let q = pose.transform_point(p);
        match tree.nearest(&q) {
            Some((t, d2)) if d2 <= cap => {
                let n = normals[t].expect("tree holds only points with normals");
                let r = n.dot(&(q - target.points[t]));
                pairs.push((s, t, r));
                objective += r * r;
            }
            // Unmatched points pay the full truncation cost so the objective
            // cannot drop just by losing correspondences.
            _ => objective += cap,
        }
    }
    Matching { pairs, objective }
}

/// Aligns `source` to `target` starting from `init`; returns `T` with
/// `target ≈ T·source`.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    params: &IcpParams,
) -> Result<(Pose, IcpReport)> {
    params.validate()?;
    if source.len() < MIN_REGISTRATION_POINTS || target.len() < MIN_REGISTRATION_POINTS {
        return Err(Error::Registration(format!(
            "clouds need at least {MIN_REGISTRATION_POINTS} points (source {}, target {})",
            source.len(),
            target.len()
        )));
    }
    let normals = target
        .normals
        .as_ref()
        .ok_or_else(|| Error::Registration("target cloud has no normals".into()))?;
    let valid: Vec<usize> = (0..target.len())
        .filter(|&i| normals[i].is_some())
        .collect();
    let tree = KdTree::with_indices(&target.points, valid);
    let d_max = params.max_correspondence_dist;

    let mut pose = *init;
    let mut m = match_points(&source.points, target, normals, &tree, &pose, d_max);
    let mut trace = vec![m.objective];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        if m.pairs.len() < MIN_CORRESPONDENCES {
            return Err(Error::Registration(format!(
                "{} correspondences within {d_max} m, need {MIN_CORRESPONDENCES}",
                m.pairs.len()
            )));
        }
        iterations += 1;
        let mut h = Matrix6::zeros();
        let mut b = Vector6::zeros();
        for &(s, t, r) in &m.pairs {
            let q = pose.transform_point(&source.points[s]);
            let n = normals[t].expect("matched target has a normal");
            let c = q.cross(&n);
            let j = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
            h += j * j.transpose();
            b += j * r;
        }
        let delta: Tangent = match h.cholesky() {
            Some(ch) => -ch.solve(&b),
            None => {
                h.pseudo_inverse(1e-12)
                    .map_err(|e| Error::Registration(e.to_string()))?
                    * -b
            }
        };
        if delta.norm() < params.convergence_tol {
            converged = true;
            break;
        }
        // Backtrack until the truncated objective does not increase.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = Pose::exp(&(delta * step)).compose(&pose);
            let cm = match_points(&source.points, target, normals, &tree, &cand, d_max);
            if cm.objective <= m.objective {
                accepted = Some((cand, cm));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, cm)) => {
                let moved = delta.norm() * step;
                pose = cand;
                m = cm;
                trace.push(m.objective);
                if moved < params.convergence_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                // No descent along the Gauss-Newton direction: local minimum.
                converged = true;
                break;
            }
        }
    }
    if m.pairs.len() < MIN_CORRESPONDENCES {
        return Err(Error::Registration(format!(
            "{} correspondences at the final estimate",
            m.pairs.len()
        )));
    }
    let sq = m.pairs.iter().map(|(_, _, r)| r * r).sum::<f64>();
    let report = IcpReport {
        iterations,
        converged,
        inliers: m.pairs.len(),
        inlier_rms: (sq / m.pairs.len() as f64).sqrt(),
        objective_trace: trace,
    };
    Ok((pose, report))
}

/// A scene surface in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Surface {
    /// Parallelogram `origin + u·edge_u + v·edge_v`, `u, v ∈ [0, 1]`.
    Patch {
        origin: Vector3<f64>,
        edge_u: Vector3<f64>,
        edge_v: Vector3<f64>,
    },
    /// Axis-aligned box surface.
    Box {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
}

impl Surface {
    fn patches(&self) -> Vec<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
        match self {
            Surface::Patch {
                origin,
                edge_u,
                edge_v,
            } => vec![(*origin, *edge_u, *edge_v)],
            Surface::Box { min, max } => {
                let d = max - min;
                let (ex, ey, ez) = (Vector3::x() * d.x, Vector3::y() * d.y, Vector3::z() * d.z);
                vec![
                    (*min, ex, ey),
                    (*min + ez, ex, ey),
                    (*min, ex, ez),
                    (*min + ey, ex, ez),
                    (*min, ey, ez),
                    (*min + ex, ey, ez),
                ]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub surfaces: Vec<Surface>,
}

impl SceneSpec {
    /// Ground plane plus two perpendicular walls, 20 m × 20 m footprint.
    pub fn two_walls() -> Self {
        Self {
            surfaces: vec![
                Surface::Patch {
                    origin: Vector3::new(-10.0, -10.0, 0.0),
                    edge_u: Vector3::new(20.0, 0.0, 0.0),
                    edge_v: Vector3::new(0.0, 20.0, 0.0),
                },
                Surface::Patch {
                    origin: Vector3::new(8.0, -10.0, 0.0),
                    edge_u: Vector3::new(0.0, 20.0, 0.0),
                    edge_v: Vector3::new(0.0, 0.0, 3.0),
                },
                Surface::Patch {
                    origin: Vector3::new(-10.0, 8.0, 0.0),
                    edge_u: Vector3::new(20.0, 0.0, 0.0),
                    edge_v: Vector3::new(0.0, 0.0, 3.0),
                },
            ],
        }
    }

    /// Same scene moved rigidly by `g`.
    pub fn transformed(&self, g: &Pose) -> Self {
        let surfaces = self
            .surfaces
            .iter()
            .flat_map(|s| s.patches())
            .map(|(o, u, v)| Surface::Patch {
                origin: g.transform_point(&o),
                edge_u: g.rotation * u,
                edge_v: g.rotation * v,
            })
            .collect();
        Self { surfaces }
    }
}

/// Uniform area sampling at `density` points per m², expressed in the frame
/// of a sensor at `pose`, with isotropic Gaussian noise.
pub fn gen_scene_cloud(
    scene: &SceneSpec,
    pose: &Pose,
    density: f64,
    noise_std: f64,
    seed: u64,
) -> Result<PointCloud> {
    if !(density > 0.0 && noise_std >= 0.0) || scene.surfaces.is_empty() {
        return Err(Error::Config(
            "scene needs surfaces, positive density and non-negative noise".into(),
        ));
    }
    let mut rng = stream_rng(seed, 0);
    let to_sensor = pose.inverse();
    let mut points = Vec::new();
    for (o, eu, ev) in scene.surfaces.iter().flat_map(|s| s.patches()) {
        let area = eu.cross(&ev).norm();
        let count = (area * density).round() as usize;
        for _ in 0..count {
            let u = (rand::RngCore::next_u64(&mut rng) >> 11) as f64 / (1u64 << 53) as f64;
            let v = (rand::RngCore::next_u64(&mut rng) >> 11) as f64 / (1u64 << 53) as f64;
            let mut p = to_sensor.transform_point(&(o + eu * u + ev * v));
            // Noise is a sensor-frame effect.
            if noise_std > 0.0 {
                p += Vector3::new(
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                ) * noise_std;
            }
            points.push(p);
        }
    }
    Ok(PointCloud::new(points))
}

/// Writes `x,y,z` or `x,y,z,nx,ny,nz` rows; missing normals are left empty.
pub fn write_cloud<W: Write>(w: W, cloud: &PointCloud) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    match &cloud.normals {
        None => {
            wr.write_record(["x", "y", "z"])?;
            for p in &cloud.points {
                wr.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
            }
        }
        Some(ns) => {
            wr.write_record(["x", "y", "z", "nx", "ny", "nz"])?;
            for (p, n) in cloud.points.iter().zip(ns) {
                let nf = |f: fn(&Vector3<f64>) -> f64| {
                    n.as_ref().map(|n| f(n).to_string()).unwrap_or_default()
                };
                wr.write_record([
                    p.x.to_string(),
                    p.y.to_string(),
                    p.z.to_string(),
                    nf(|n| n.x),
                    nf(|n| n.y),
                    nf(|n| n.z),
                ])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn read_cloud<R: Read>(r: R) -> Result<PointCloud> {
    let mut rd = csv::Reader::from_reader(r);
    let width = rd.headers()?.len();
    if width != 3 && width != 6 {
        return Err(Error::Parse {
            line: 1,
            reason: format!("expected 3 or 6 columns, found {width}"),
        });
    }
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                reason: e.to_string(),
            })
        };
        points.push(Vector3::new(num(&rec[0])?, num(&rec[1])?, num(&rec[2])?));
        if width == 6 {
            if rec[3].trim().is_empty() {
                normals.push(None);
            } else {
                let n = Vector3::new(num(&rec[3])?, num(&rec[4])?, num(&rec[5])?);
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::Parse {
                        line,
                        reason: "normal is not unit length".into(),
                    });
                }
                normals.push(Some(n));
            }
        }
    }
    Ok(PointCloud {
        points,
        normals: (width == 6).then_some(normals),
    })
}

pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_cloud(std::fs::File::create(path)?, cloud)
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    read_cloud(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::Rotation;
    use proptest::prelude::*;

    fn brute_knn(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let cloud =
            gen_scene_cloud(&SceneSpec::two_walls(), &Pose::identity(), 2.0, 0.05, 1).unwrap();
        let tree = KdTree::new(&cloud.points);
        let mut rng = stream_rng(2, 0);
        for _ in 0..200 {
            let q = Vector3::new(
                standard_normal(&mut rng),
                standard_normal(&mut rng),
                standard_normal(&mut rng),
            ) * 6.0;
            assert_eq!(tree.knn(&q, 7), brute_knn(&cloud.points, &q, 7));
        }
    }

    #[test]
    fn kd_tree_ties_go_to_lowest_index() {
        let pts = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Vector3::zeros()).unwrap().0, 0);
        let dup = vec![Vector3::new(0.5, 0.5, 0.0); 5];
        assert_eq!(KdTree::new(&dup).nearest(&Vector3::zeros()).unwrap().0, 0);
    }

    #[test]
    fn planar_normals() {
        let scene = SceneSpec {
            surfaces: vec![Surface::Patch {
                origin: Vector3::new(-5.0, -5.0, 0.0),
                edge_u: Vector3::new(10.0, 0.0, 0.0),
                edge_v: Vector3::new(0.0, 10.0, 0.0),
            }],
        };
        let c = gen_scene_cloud(&scene, &Pose::identity(), 5.0, 0.0, 3).unwrap();
        assert!(c.points.iter().all(|p| p.z == 0.0));
        let with = estimate_normals(&c, 8, &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        for n in with.normals.unwrap() {
            let n = n.unwrap();
            assert!((n - Vector3::z()).norm() < 1e-6);
        }
    }

    #[test]
    fn sphere_normals_radial() {
        // Fibonacci sphere, radius 1, viewed from the center.
        let m = 4000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Vector3<f64>> = (0..m)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                Vector3::new(r * th.cos(), r * th.sin(), z)
            })
            .collect();
        let c = estimate_normals(&PointCloud::new(pts.clone()), 10, &Vector3::zeros()).unwrap();
        for (p, n) in pts.iter().zip(c.normals.unwrap()) {
            let n = n.unwrap();
            let angle = n.dot(&(-p)).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle < 5.0, "angle {angle}");
        }
    }

    #[test]
    fn normal_estimation_rejects_bad_k_and_flags_lines() {
        let c = PointCloud::new((0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect());
        assert!(estimate_normals(&c, 11, &Vector3::zeros()).is_err());
        assert!(estimate_normals(&c, 2, &Vector3::zeros()).is_err());
        let n = estimate_normals(&c, 4, &Vector3::zeros()).unwrap();
        assert!(n.normals.unwrap().iter().all(|n| n.is_none()));
    }

    fn scene_pair(offset: &Pose, seed: u64) -> (PointCloud, PointCloud) {
        let scene = SceneSpec::two_walls();
        let target = gen_scene_cloud(&scene, &Pose::identity(), 4.0, 0.01, seed).unwrap();
        let target = estimate_normals(&target, 10, &Vector3::zeros()).unwrap();
        let source = gen_scene_cloud(&scene, offset, 4.0, 0.01, seed + 1000).unwrap();
        (source, target)
    }

    #[test]
    fn identical_clouds_give_identity() {
        let (_, target) = scene_pair(&Pose::identity(), 5);
        let (t, rep) =
            register(&target, &target, &Pose::identity(), &IcpParams::default()).unwrap();
        assert!(t.max_abs_diff(&Pose::identity()) < 1e-9);
        assert!(rep.inlier_rms < 1e-9);
    }

    #[test]
    fn recovers_known_displacement() {
        let truth = Pose::new(
            Rotation::about_z(3f64.to_radians()),
            Vector3::new(0.5, 0.0, 0.0),
        );
        let (source, target) = scene_pair(&truth, 7);
        let (t, rep) =
            register(&source, &target, &Pose::identity(), &IcpParams::default()).unwrap();
        let err = t.ominus(&truth).unwrap();
        assert!(err.fixed_rows::<3>(3).norm() < 0.05, "{err}");
        assert!(err.fixed_rows::<3>(0).norm().to_degrees() < 0.5, "{err}");
        assert!(rep.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_overlap_fails() {
        let (source, target) = scene_pair(&Pose::identity(), 9);
        let far = source.transformed(&Pose::from_translation(500.0, 0.0, 0.0));
        assert!(matches!(
            register(&far, &target, &Pose::identity(), &IcpParams::default()),
            Err(Error::Registration(_))
        ));
    }

    #[test]
    fn target_without_normals_fails() {
        let (source, _) = scene_pair(&Pose::identity(), 9);
        assert!(register(&source, &source, &Pose::identity(), &IcpParams::default()).is_err());
    }

    #[test]
    fn scene_generation_deterministic_and_scales_with_density() {
        let s = SceneSpec::two_walls();
        let a = gen_scene_cloud(&s, &Pose::identity(), 2.0, 0.01, 4).unwrap();
        let b = gen_scene_cloud(&s, &Pose::identity(), 2.0, 0.01, 4).unwrap();
        let c = gen_scene_cloud(&s, &Pose::identity(), 4.0, 0.01, 4).unwrap();
        assert_eq!(a, b);
        assert!((c.len() as i64 - 2 * a.len() as i64).abs() <= 3);
    }

    #[test]
    fn box_surface_points_lie_on_faces() {
        let scene = SceneSpec {
            surfaces: vec![Surface::Box {
                min: Vector3::zeros(),
                max: Vector3::new(1.0, 2.0, 3.0),
            }],
        };
        let c = gen_scene_cloud(&scene, &Pose::identity(), 10.0, 0.0, 1).unwrap();
        assert_eq!(c.len(), 2 * (20 + 30 + 60));
        for p in &c.points {
            let on = [p.x, p.y, p.z]
                .iter()
                .zip([1.0, 2.0, 3.0])
                .any(|(v, m)| *v == 0.0 || (*v - m).abs() < 1e-12);
            assert!(on);
        }
    }

    #[test]
    fn cloud_csv_round_trip() {
        let c = gen_scene_cloud(&SceneSpec::two_walls(), &Pose::identity(), 0.5, 0.01, 2).unwrap();
        let c = estimate_normals(&c, 6, &Vector3::zeros()).unwrap();
        let mut buf = Vec::new();
        write_cloud(&mut buf, &c).unwrap();
        assert_eq!(read_cloud(buf.as_slice()).unwrap(), c);
        let plain = PointCloud::new(c.points.clone());
        let mut buf = Vec::new();
        write_cloud(&mut buf, &plain).unwrap();
        assert_eq!(read_cloud(buf.as_slice()).unwrap(), plain);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn self_registration_returns_identity(
            tx in -0.14f64..0.14, ty in -0.14f64..0.14, yaw in -2.0f64..2.0, roll in -1.0f64..1.0
        ) {
            let (_, target) = scene_pair(&Pose::identity(), 21);
            let init = Pose::new(
                Rotation::exp(&Vector3::new(roll.to_radians(), 0.0, yaw.to_radians())),
                Vector3::new(tx, ty, 0.0),
            );
            let (t, _) = register(&target, &target, &init, &IcpParams::default()).unwrap();
            prop_assert!(t.max_abs_diff(&Pose::identity()) < 1e-6);
        }

        #[test]
        fn common_frame_change_keeps_relative_transform(
            gx in -20.0f64..20.0, gy in -20.0f64..20.0, gyaw in -3.0f64..3.0
        ) {
            let g = Pose::new(Rotation::about_z(gyaw), Vector3::new(gx, gy, 1.0));
            let a = Pose::identity();
            let b = Pose::new(Rotation::about_z(3f64.to_radians()), Vector3::new(0.5, 0.0, 0.0));
            let scene = SceneSpec::two_walls();
            let moved = scene.transformed(&g);
            let solve = |sc: &SceneSpec, pa: &Pose, pb: &Pose| {
                let target = estimate_normals(&gen_scene_cloud(sc, pa, 2.0, 0.01, 3).unwrap(), 10, &Vector3::zeros()).unwrap();
                let source = gen_scene_cloud(sc, pb, 2.0, 0.01, 4).unwrap();
                register(&source, &target, &Pose::identity(), &IcpParams::default()).unwrap().0
            };
            let r1 = solve(&scene, &a, &b);
            let r2 = solve(&moved, &g.compose(&a), &g.compose(&b));
            prop_assert!(r1.max_abs_diff(&r2) < 1e-6);
        }
    }
}
