//! Sliding-window factor graph and its damped Gauss-Newton solver.
//!
//! Window nodes are consecutive in time and linked by exactly one odometry
//! factor each, so the normal equations are block tridiagonal with 6×6 blocks.
//! They are factored with a block Cholesky in O(N) instead of a dense solve.

use nalgebra::{Cholesky, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{AnchorFactor, Factor, GpsFactor, OdometryFactor};
use crate::liegroup::{Pose, Tangent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub time: usize,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub max_iterations: usize,
    pub relative_decrease_tol: f64,
    pub step_norm_tol: f64,
    pub damping_init: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            relative_decrease_tol: 1e-6,
            step_norm_tol: 1e-8,
            damping_init: 1e-6,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.relative_decrease_tol > 0.0
            && self.step_norm_tol > 0.0
            && self.damping_init > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "solver parameters must all be positive".into(),
            ))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub final_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `eᵀΩe` of each factor at the returned estimate, in factor order.
    pub factor_costs: Vec<f64>,
    /// Objective after every accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
}

// Damping escalation ceiling before the solve is declared failed.
const MAX_DAMPING: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowGraph {
    nodes: Vec<Node>,
    factors: Vec<Factor>,
    capacity: usize,
}

impl WindowGraph {
    /// Window with a single node anchored at `pose`.
    pub fn new(capacity: usize, time: usize, pose: Pose) -> Result<Self> {
        if capacity < 2 {
            return Err(Error::Config(format!(
                "window capacity must be at least 2, got {capacity}"
            )));
        }
        Ok(Self {
            nodes: vec![Node { time, pose }],
            factors: vec![Factor::Anchor(AnchorFactor::with_default_information(
                time, pose,
            ))],
            capacity,
        })
    }

    /// Builds a graph from explicit parts and validates its structure.
    pub fn from_parts(capacity: usize, nodes: Vec<Node>, factors: Vec<Factor>) -> Result<Self> {
        let g = Self {
            nodes,
            factors,
            capacity,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first_time(&self) -> usize {
        self.nodes[0].time
    }

    pub fn last(&self) -> &Node {
        self.nodes.last().expect("window is never empty")
    }

    pub fn pose(&self, time: usize) -> Option<&Pose> {
        let first = self.nodes.first()?.time;
        self.nodes.get(time.checked_sub(first)?).map(|n| &n.pose)
    }

    pub fn gps_count(&self) -> usize {
        self.factors.iter().filter(|f| f.is_gps()).count()
    }

    pub fn gps_factors(&self) -> impl Iterator<Item = &GpsFactor> {
        self.factors.iter().filter_map(|f| match f {
            Factor::Gps(g) => Some(g),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidGraph("window has no nodes".into()));
        }
        if self.nodes.len() > self.capacity {
            return Err(Error::InvalidGraph(format!(
                "{} nodes exceed window capacity {}",
                self.nodes.len(),
                self.capacity
            )));
        }
        for w in self.nodes.windows(2) {
            if w[1].time != w[0].time + 1 {
                return Err(Error::InvalidGraph(format!(
                    "node times {} -> {} not consecutive",
                    w[0].time, w[1].time
                )));
            }
        }
        let first = self.first_time();
        let mut links = vec![0usize; self.nodes.len().saturating_sub(1)];
        for f in &self.factors {
            for t in f.nodes() {
                if self.pose(t).is_none() {
                    return Err(Error::NodeNotInWindow { time: t });
                }
            }
            if let Factor::Odometry(o) = f {
                links[o.from - first] += 1;
            }
        }
        if let Some(i) = links.iter().position(|&c| c != 1) {
            return Err(Error::InvalidGraph(format!(
                "nodes {} and {} linked by {} odometry factors",
                first + i,
                first + i + 1,
                links[i]
            )));
        }
        Ok(())
    }

    /// `Σ eᵀΩe` over every factor.
    pub fn objective(&self) -> Result<f64> {
        let mut total = 0.0;
        for f in &self.factors {
            total += f.cost(|t| self.pose(t))?;
        }
        Ok(total)
    }

    fn factor_costs(&self) -> Result<Vec<f64>> {
        self.factors
            .iter()
            .map(|f| f.cost(|t| self.pose(t)))
            .collect()
    }

    /// Appends nodes whose initial estimates are dead-reckoned from the current
    /// newest estimate through the odometry factors in `new_factors`.
    pub fn extend(&mut self, new_times: &[usize], new_factors: Vec<Factor>) -> Result<()> {
        for &t in new_times {
            let last = self.last();
            if t != last.time + 1 {
                return Err(Error::InvalidGraph(format!(
                    "new node {t} does not follow {}",
                    last.time
                )));
            }
            let odo = new_factors
                .iter()
                .find_map(|f| match f {
                    Factor::Odometry(o) if o.to == t => Some(o),
                    _ => None,
                })
                .ok_or_else(|| {
                    Error::InvalidGraph(format!("no odometry factor reaches new node {t}"))
                })?;
            let pose = last.pose.compose(&odo.measured);
            self.nodes.push(Node { time: t, pose });
        }
        self.factors.extend(new_factors);
        if self.nodes.len() > self.capacity {
            return Err(Error::InvalidGraph(format!(
                "{} nodes exceed window capacity {}",
                self.nodes.len(),
                self.capacity
            )));
        }
        self.validate()
    }

    /// Drops the oldest `shift` nodes and every factor touching them, then
    /// re-anchors the new oldest node at its current estimate.
    pub fn evict(&mut self, shift: usize) -> Result<()> {
        if shift >= self.nodes.len() {
            return Err(Error::WindowUnderflow {
                shift,
                nodes: self.nodes.len(),
            });
        }
        if shift == 0 {
            return Ok(());
        }
        self.nodes.drain(..shift);
        let first = self.first_time();
        self.factors
            .retain(|f| !matches!(f, Factor::Anchor(_)) && f.nodes().iter().all(|&t| t >= first));
        let anchor = AnchorFactor::with_default_information(first, self.nodes[0].pose);
        self.factors.insert(0, Factor::Anchor(anchor));
        Ok(())
    }

    /// Evicts `shift` nodes, then appends the new nodes and factors.
    pub fn slide(
        &mut self,
        new_times: &[usize],
        new_factors: Vec<Factor>,
        shift: usize,
    ) -> Result<()> {
        self.evict(shift)?;
        self.extend(new_times, new_factors)
    }

    /// Copy of the graph with every GPS factor removed.
    pub fn strip_gps(&self) -> WindowGraph {
        WindowGraph {
            nodes: self.nodes.clone(),
            factors: self
                .factors
                .iter()
                .filter(|f| !f.is_gps())
                .cloned()
                .collect(),
            capacity: self.capacity,
        }
    }

    /// Levenberg-Marquardt around Gauss-Newton; updates node estimates in place.
    ///
    /// On failure the estimates are left at the last accepted state.
    pub fn optimize(&mut self, params: &SolverParams) -> Result<SolveReport> {
        params.validate()?;
        let mut objective = self.objective()?;
        let mut trace = vec![objective];
        let mut damping = params.damping_init;
        let mut iterations = 0;
        let mut converged = objective == 0.0;

        while !converged && iterations < params.max_iterations {
            iterations += 1;
            let system = self.build_system()?;
            let mut accepted = false;
            while damping <= MAX_DAMPING {
                let step = match system.solve_damped(damping) {
                    Some(step) => step,
                    None => {
                        damping *= 10.0;
                        continue;
                    }
                };
                let candidate = self.retracted(&step);
                let cand_obj = match candidate.objective() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        damping *= 10.0;
                        continue;
                    }
                };
                if cand_obj <= objective {
                    let step_norm = step.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt();
                    let decrease = (objective - cand_obj) / objective.max(f64::MIN_POSITIVE);
                    self.nodes = candidate.nodes;
                    objective = cand_obj;
                    trace.push(objective);
                    damping = (damping / 10.0).max(1e-15);
                    accepted = true;
                    converged = decrease < params.relative_decrease_tol
                        || step_norm < params.step_norm_tol
                        || objective == 0.0;
                    break;
                }
                damping *= 10.0;
            }
            if !accepted {
                // No damped step improves the objective: either we are at a
                // minimum to machine precision, or the system is unusable.
                if system.solve_damped(params.damping_init).is_some() {
                    converged = true;
                    break;
                }
                return Err(Error::SolverFailure {
                    iterations,
                    objective,
                });
            }
        }

        Ok(SolveReport {
            final_objective: objective,
            iterations,
            converged,
            factor_costs: self.factor_costs()?,
            objective_trace: trace,
        })
    }

    fn retracted(&self, step: &[Vector6<f64>]) -> WindowGraph {
        let nodes = self
            .nodes
            .iter()
            .zip(step)
            .map(|(n, d)| Node {
                time: n.time,
                pose: n.pose.retract(d),
            })
            .collect();
        WindowGraph {
            nodes,
            factors: self.factors.clone(),
            capacity: self.capacity,
        }
    }

    /// Accumulates `H = Σ JᵀΩJ` and `b = Σ JᵀΩe` in factor order.
    pub fn build_system(&self) -> Result<BlockTridiagonal> {
        let n = self.nodes.len();
        let first = self.first_time();
        let mut sys = BlockTridiagonal::zeros(n);
        let idx = |t: usize| t - first;
        for f in &self.factors {
            match f {
                Factor::Gps(g) => {
                    let i = idx(g.node);
                    let (r, j) = g.linearize(&self.nodes[i].pose)?;
                    let w = g.information();
                    sys.diag[i] += j.transpose() * j * w;
                    sys.rhs[i] += j.transpose() * (w * r);
                }
                Factor::Odometry(o) => {
                    let (i, k) = (idx(o.from), idx(o.to));
                    let (e, ji, jk) = o.linearize(&self.nodes[i].pose, &self.nodes[k].pose)?;
                    let oji = o.information * ji;
                    let ojk = o.information * jk;
                    let oe = o.information * e;
                    sys.diag[i] += ji.transpose() * oji;
                    sys.diag[k] += jk.transpose() * ojk;
                    sys.upper[i] += ji.transpose() * ojk;
                    sys.rhs[i] += ji.transpose() * oe;
                    sys.rhs[k] += jk.transpose() * oe;
                }
                Factor::Anchor(a) => {
                    let i = idx(a.node);
                    let (e, j) = a.linearize(&self.nodes[i].pose)?;
                    sys.diag[i] += j.transpose() * a.information * j;
                    sys.rhs[i] += j.transpose() * (a.information * e);
                }
            }
        }
        Ok(sys)
    }
}

/// Block tridiagonal normal equations `H δ = −b`.
#[derive(Clone, Debug)]
pub struct BlockTridiagonal {
    pub diag: Vec<Matrix6<f64>>,
    /// `upper[i]` couples node `i` (rows) with node `i + 1` (columns).
    pub upper: Vec<Matrix6<f64>>,
    pub rhs: Vec<Vector6<f64>>,
}

impl BlockTridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![Matrix6::zeros(); n],
            upper: vec![Matrix6::zeros(); n.saturating_sub(1)],
            rhs: vec![Vector6::zeros(); n],
        }
    }

    /// Solves `(H + λ·diag(H)) δ = −b`; `None` if the block Cholesky fails.
    pub fn solve_damped(&self, damping: f64) -> Option<Vec<Tangent>> {
        let n = self.diag.len();
        let mut chol: Vec<Cholesky<f64, nalgebra::U6>> = Vec::with_capacity(n);
        // Sub-diagonal factor blocks L_{i+1,i}.
        let mut lower: Vec<Matrix6<f64>> = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let mut d = self.diag[i];
            for k in 0..6 {
                d[(k, k)] += damping * self.diag[i][(k, k)].max(1e-12);
            }
            if i > 0 {
                let l = &lower[i - 1];
                d -= l * l.transpose();
            }
            let c = d.cholesky()?;
            if i + 1 < n {
                // L_{i+1,i} = U_iᵀ · L_ii⁻ᵀ
                let li = c.l();
                let ut = self.upper[i].transpose();
                let x = li.solve_lower_triangular(&ut.transpose())?;
                lower.push(x.transpose());
            }
            chol.push(c);
        }
        // Forward: L y = −b
        let mut y: Vec<Vector6<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut r = -self.rhs[i];
            if i > 0 {
                r -= lower[i - 1] * y[i - 1];
            }
            y.push(chol[i].l().solve_lower_triangular(&r)?);
        }
        // Backward: Lᵀ x = y
        let mut x = vec![Vector6::zeros(); n];
        for i in (0..n).rev() {
            let mut r = y[i];
            if i + 1 < n {
                r -= lower[i].transpose() * x[i + 1];
            }
            x[i] = chol[i].l().transpose().solve_upper_triangular(&r)?;
        }
        Some(x)
    }

    /// Dense copy of `H`, for checks.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.diag.len();
        let mut h = nalgebra::DMatrix::zeros(6 * n, 6 * n);
        for i in 0..n {
            h.view_mut((6 * i, 6 * i), (6, 6)).copy_from(&self.diag[i]);
            if i + 1 < n {
                h.view_mut((6 * i, 6 * i + 6), (6, 6))
                    .copy_from(&self.upper[i]);
                h.view_mut((6 * i + 6, 6 * i), (6, 6))
                    .copy_from(&self.upper[i].transpose());
            }
        }
        h
    }
}

/// Convenience constructor for an odometry factor between `from` and `from + 1`.
pub fn odometry(from: usize, measured: Pose, information: Matrix6<f64>) -> Result<Factor> {
    Ok(Factor::Odometry(OdometryFactor::new(
        from,
        measured,
        information,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{information_from_stds, odom_predict};
    use nalgebra::{DVector, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn info() -> Matrix6<f64> {
        information_from_stds(&[0.01, 0.01, 0.01, 0.05, 0.05, 0.05])
    }

    fn truth_chain(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|k| {
                let k = k as f64;
                Pose::exp(&Tangent::new(0.0, 0.0, 0.05 * k, 0.0, 0.0, 0.0))
                    .compose(&Pose::from_translation(3.0 * k, 0.2 * k * k, 0.1 * k))
            })
            .collect()
    }

    fn sats() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(2.0e7, 0.0, 1.2e7),
            Vector3::new(-1.5e7, 1.0e7, 1.4e7),
            Vector3::new(0.0, -2.0e7, 1.0e7),
            Vector3::new(5.0e6, 1.8e7, 1.6e7),
            Vector3::new(-1.0e7, -1.2e7, 1.9e7),
            Vector3::new(1.1e7, 1.1e7, 2.0e7),
        ]
    }

    /// Graph over `truth` with exact odometry, anchored at the truth start,
    /// with estimates perturbed away from truth.
    fn chain_graph(truth: &[Pose], with_gps: bool, rng: &mut ChaCha8Rng) -> WindowGraph {
        let mut g = WindowGraph::new(truth.len().max(2), 0, truth[0]).unwrap();
        for k in 1..truth.len() {
            let mut factors =
                vec![odometry(k - 1, odom_predict(&truth[k - 1], &truth[k]), info()).unwrap()];
            if with_gps {
                for s in sats() {
                    let r = (truth[k].translation - s).norm();
                    factors.push(Factor::Gps(GpsFactor::new(k, s, r, 7.0).unwrap()));
                }
            }
            g.extend(&[k], factors).unwrap();
        }
        for n in g.nodes.iter_mut().skip(1) {
            let d = Tangent::from_fn(|i, _| {
                if i < 3 {
                    rng.random_range(-0.05..0.05)
                } else {
                    rng.random_range(-2.0..2.0)
                }
            });
            n.pose = n.pose.retract(&d);
        }
        g
    }

    #[test]
    fn objective_examples() {
        let p = Pose::identity();
        let g = WindowGraph::new(10, 0, p).unwrap();
        assert_eq!(g.objective().unwrap(), 0.0);

        let sat = Vector3::new(3.0, 4.0, 0.0);
        let one = Factor::Gps(GpsFactor::new(0, sat, 5.0 + 7.0, 7.0).unwrap());
        let g1 = WindowGraph::from_parts(10, vec![Node { time: 0, pose: p }], vec![one.clone()])
            .unwrap();
        assert!((g1.objective().unwrap() - 1.0).abs() < 1e-15);

        let two = Factor::Gps(GpsFactor::new(0, sat, 5.0 + 3.0, 2.0).unwrap());
        let g2 = WindowGraph::from_parts(10, vec![Node { time: 0, pose: p }], vec![two.clone()])
            .unwrap();
        let both =
            WindowGraph::from_parts(10, vec![Node { time: 0, pose: p }], vec![one, two]).unwrap();
        assert_eq!(
            both.objective().unwrap(),
            g1.objective().unwrap() + g2.objective().unwrap()
        );
    }

    #[test]
    fn anchor_only_converges_to_prior() {
        let prior = Pose::exp(&Tangent::new(0.3, -0.2, 0.5, 10.0, -4.0, 2.0));
        let mut g = WindowGraph::new(5, 0, prior).unwrap();
        g.nodes[0].pose = prior.retract(&Tangent::new(0.01, -0.02, 0.005, 0.3, 0.1, -0.2));
        let rep = g.optimize(&SolverParams::default()).unwrap();
        assert!(rep.converged);
        assert!(g.nodes[0].pose.max_abs_diff(&prior) < 1e-8);
    }

    #[test]
    fn noiseless_chain_recovers_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = truth_chain(3);
        let mut g = chain_graph(&truth, false, &mut rng);
        g.optimize(&SolverParams::default()).unwrap();
        for (n, t) in g.nodes.iter().zip(&truth) {
            assert!(n.pose.max_abs_diff(t) < 1e-8);
        }
    }

    #[test]
    fn noiseless_gps_recovers_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = truth_chain(2);
        // Leave node 0 loose too: drop the anchor, GPS plus odometry fix it.
        let mut g = chain_graph(&truth, true, &mut rng);
        let s = sats();
        g.factors.retain(|f| !matches!(f, Factor::Anchor(_)));
        for sat in &s {
            let r = (truth[0].translation - sat).norm();
            g.factors
                .push(Factor::Gps(GpsFactor::new(0, *sat, r, 7.0).unwrap()));
        }
        g.nodes[0].pose = truth[0].retract(&Tangent::new(0.0, 0.0, 0.0, 1.5, -1.0, 0.7));
        g.optimize(&SolverParams::default()).unwrap();
        for (n, t) in g.nodes.iter().zip(&truth) {
            assert!((n.pose.translation - t.translation).norm() < 1e-6);
        }
    }

    #[test]
    fn long_noiseless_window_recovers_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = truth_chain(100);
        let mut g = chain_graph(&truth, true, &mut rng);
        let rep = g.optimize(&SolverParams::default()).unwrap();
        assert!(rep.converged);
        for (n, t) in g.nodes.iter().zip(&truth) {
            assert!((n.pose.translation - t.translation).norm() < 1e-5);
        }
    }

    #[test]
    fn accepted_steps_never_increase_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = truth_chain(40);
        let mut g = chain_graph(&truth, true, &mut rng);
        let rep = g.optimize(&SolverParams::default()).unwrap();
        assert!(rep.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(rep.final_objective >= 0.0);
    }

    #[test]
    fn block_solver_matches_dense_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = truth_chain(12);
        let g = chain_graph(&truth, true, &mut rng);
        let sys = g.build_system().unwrap();
        let step = sys.solve_damped(0.0).unwrap();
        let h = sys.to_dense();
        let b = DVector::from_iterator(
            6 * sys.rhs.len(),
            sys.rhs.iter().flat_map(|v| v.iter().copied()),
        );
        let dense = h.cholesky().unwrap().solve(&(-b));
        let ours = DVector::from_iterator(dense.len(), step.iter().flat_map(|v| v.iter().copied()));
        assert!((dense - ours).amax() < 1e-9);
    }

    #[test]
    fn optimization_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            chain_graph(&truth_chain(30), true, &mut rng)
        };
        let (mut a, mut b) = (build(), build());
        let ra = a.optimize(&SolverParams::default()).unwrap();
        let rb = b.optimize(&SolverParams::default()).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn indefinite_system_is_rejected_at_every_damping() {
        let mut sys = BlockTridiagonal::zeros(3);
        for d in sys.diag.iter_mut() {
            *d = -Matrix6::identity();
        }
        for damping in [0.0, 1e-6, 1.0, 1e6] {
            assert!(sys.solve_damped(damping).is_none());
        }
    }

    #[test]
    fn slide_keeps_window_full_and_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = truth_chain(111);
        let mut g = chain_graph(&truth[..100], true, &mut rng);
        let new_times: Vec<usize> = (100..110).collect();
        let factors = new_times
            .iter()
            .map(|&k| odometry(k - 1, odom_predict(&truth[k - 1], &truth[k]), info()).unwrap())
            .collect();
        g.slide(&new_times, factors, 10).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g.first_time(), 10);
        g.validate().unwrap();
        let anchors: Vec<_> = g
            .factors
            .iter()
            .filter(|f| matches!(f, Factor::Anchor(_)))
            .collect();
        assert_eq!(anchors.len(), 1);
        match anchors[0] {
            Factor::Anchor(a) => {
                assert_eq!(a.node, 10);
                assert_eq!(a.prior, g.nodes[0].pose);
            }
            _ => unreachable!(),
        }
        assert!(g.optimize(&SolverParams::default()).is_ok());
    }

    #[test]
    fn slide_underflow_rejected() {
        let mut g = WindowGraph::new(10, 0, Pose::identity()).unwrap();
        assert!(matches!(
            g.slide(&[], vec![], 1),
            Err(Error::WindowUnderflow { .. })
        ));
    }

    #[test]
    fn two_slides_of_five_equal_one_of_ten() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = truth_chain(31);
        let base = chain_graph(&truth[..21], false, &mut rng);
        let odo =
            |k: usize| odometry(k - 1, odom_predict(&truth[k - 1], &truth[k]), info()).unwrap();

        let mut once = base.clone();
        let times: Vec<usize> = (21..31).collect();
        once.slide(&times, times.iter().map(|&k| odo(k)).collect(), 10)
            .unwrap();

        let mut twice = base.clone();
        let a: Vec<usize> = (21..26).collect();
        twice
            .slide(&a, a.iter().map(|&k| odo(k)).collect(), 5)
            .unwrap();
        let b: Vec<usize> = (26..31).collect();
        twice
            .slide(&b, b.iter().map(|&k| odo(k)).collect(), 5)
            .unwrap();

        assert_eq!(once.nodes, twice.nodes);
    }

    #[test]
    fn strip_gps_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = chain_graph(&truth_chain(5), true, &mut rng);
        let k = g.gps_count();
        assert!(k > 0);
        let s = g.strip_gps();
        assert_eq!(s.factors.len(), g.factors.len() - k);
        assert_eq!(s.strip_gps(), s);
        s.validate().unwrap();
    }

    #[test]
    fn stripped_graph_dead_reckons_from_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let truth = truth_chain(20);
        // GPS biased by a constant offset; odometry exact.
        let mut g = chain_graph(&truth, false, &mut rng);
        for (k, pose) in truth.iter().enumerate().skip(1) {
            for s in sats() {
                let r = (pose.translation + Vector3::new(100.0, 0.0, 0.0) - s).norm();
                g.factors
                    .push(Factor::Gps(GpsFactor::new(k, s, r, 7.0).unwrap()));
            }
        }
        let mut s = g.strip_gps();
        s.optimize(&SolverParams::default()).unwrap();
        let mut dr = truth[0];
        for k in 1..20 {
            dr = dr.compose(&odom_predict(&truth[k - 1], &truth[k]));
            assert!(s.pose(k).unwrap().max_abs_diff(&dr) < 1e-6);
        }
    }

    #[test]
    fn gauge_invariance_without_gps() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let truth = truth_chain(15);
        let mut g = chain_graph(&truth, false, &mut rng);
        // Noisy odometry so the optimum is not zero.
        for f in g.factors.iter_mut() {
            if let Factor::Odometry(o) = f {
                let d = Tangent::from_fn(|i, _| {
                    if i < 3 {
                        rng.random_range(-0.01..0.01)
                    } else {
                        rng.random_range(-0.05..0.05)
                    }
                });
                o.measured = o.measured.retract(&d);
            }
        }
        let gt = Pose::exp(&Tangent::new(0.4, -1.0, 2.0, 300.0, -50.0, 12.0));
        let mut moved = g.clone();
        for n in moved.nodes.iter_mut() {
            n.pose = gt.compose(&n.pose);
        }
        for f in moved.factors.iter_mut() {
            if let Factor::Anchor(a) = f {
                a.prior = gt.compose(&a.prior);
            }
        }
        let a = g.optimize(&SolverParams::default()).unwrap();
        let b = moved.optimize(&SolverParams::default()).unwrap();
        assert!((a.final_objective - b.final_objective).abs() <= 1e-9);
    }
}
