//! Measurement factors: GPS pseudoranges, odometry between consecutive
//! poses, and the anchor prior that fixes the window gauge.
//!
//! Node references are global time indices. Every residual follows the
//! `measured ⊖ predicted` sign convention and every Jacobian is taken with
//! respect to a right perturbation of the involved pose.

use nalgebra::{DMatrix, DVector, Matrix6, RowVector6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{se3_right_jacobian_inv, Pose, Tangent};

/// Receiver/satellite separations below this are treated as degenerate.
pub const MIN_RANGE: f64 = 1e-6;

/// Information weight of the gauge anchor, applied to every tangent axis.
pub const ANCHOR_INFORMATION: f64 = 1e4;

/// Expected pseudorange `‖t − s‖` for a pose and satellite position.
pub fn gps_predict(pose: &Pose, sat_position: &Vector3<f64>) -> Result<f64> {
    let d = (pose.translation - sat_position).norm();
    if d < MIN_RANGE {
        return Err(Error::DegenerateGeometry { distance: d });
    }
    Ok(d)
}

/// Body-frame relative motion between consecutive poses, `x_i⁻¹·x_{i+1}`.
pub fn odom_predict(x_i: &Pose, x_ip1: &Pose) -> Pose {
    x_i.inverse().compose(x_ip1)
}

/// `diag(σ_r⁻², σ_r⁻², σ_r⁻², σ_t⁻², σ_t⁻², σ_t⁻²)` from a rotation-first std vector.
pub fn information_from_stds(stds: &[f64; 6]) -> Matrix6<f64> {
    Matrix6::from_diagonal(&Tangent::from_iterator(stds.iter().map(|s| 1.0 / (s * s))))
}

fn check_spd(m: &Matrix6<f64>) -> Result<()> {
    let symmetric = (m - m.transpose()).abs().max() <= 1e-9 * m.abs().max().max(1.0);
    if !symmetric || m.cholesky().is_none() {
        return Err(Error::InvalidGraph("information matrix is not SPD".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsFactor {
    pub node: usize,
    pub sat_position: Vector3<f64>,
    pub measured_range: f64,
    pub sigma: f64,
}

impl GpsFactor {
    pub fn new(
        node: usize,
        sat_position: Vector3<f64>,
        measured_range: f64,
        sigma: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidGraph(format!(
                "GPS sigma must be positive, got {sigma}"
            )));
        }
        if !(measured_range > 0.0) {
            return Err(Error::InvalidGraph(format!(
                "pseudorange must be positive, got {measured_range}"
            )));
        }
        Ok(Self {
            node,
            sat_position,
            measured_range,
            sigma,
        })
    }

    pub fn residual(&self, pose: &Pose) -> Result<f64> {
        Ok(self.measured_range - gps_predict(pose, &self.sat_position)?)
    }

    /// Residual and its 1×6 Jacobian. The rotation block is identically zero.
    pub fn linearize(&self, pose: &Pose) -> Result<(f64, RowVector6<f64>)> {
        let diff = pose.translation - self.sat_position;
        let range = diff.norm();
        if range < MIN_RANGE {
            return Err(Error::DegenerateGeometry { distance: range });
        }
        let los = diff / range;
        let body = pose.rotation.transpose() * los;
        let jac = RowVector6::new(0.0, 0.0, 0.0, -body.x, -body.y, -body.z);
        Ok((self.measured_range - range, jac))
    }

    pub fn information(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdometryFactor {
    pub from: usize,
    pub to: usize,
    pub measured: Pose,
    pub information: Matrix6<f64>,
}

impl OdometryFactor {
    pub fn new(from: usize, measured: Pose, information: Matrix6<f64>) -> Result<Self> {
        check_spd(&information)?;
        Ok(Self {
            from,
            to: from + 1,
            measured,
            information,
        })
    }

    pub fn residual(&self, x_i: &Pose, x_ip1: &Pose) -> Result<Tangent> {
        self.measured.ominus(&odom_predict(x_i, x_ip1))
    }

    /// Residual plus Jacobians with respect to `x_i` and `x_{i+1}`.
    pub fn linearize(
        &self,
        x_i: &Pose,
        x_ip1: &Pose,
    ) -> Result<(Tangent, Matrix6<f64>, Matrix6<f64>)> {
        // A = pred⁻¹·M = x_{i+1}⁻¹·x_i·M
        let a = x_ip1.inverse().compose(x_i).compose(&self.measured);
        let e = a.log()?;
        let jr_inv = se3_right_jacobian_inv(&e);
        let j_from = jr_inv * self.measured.inverse().adjoint();
        let j_to = -jr_inv * a.inverse().adjoint();
        Ok((e, j_from, j_to))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorFactor {
    pub node: usize,
    pub prior: Pose,
    pub information: Matrix6<f64>,
}

impl AnchorFactor {
    pub fn new(node: usize, prior: Pose, information: Matrix6<f64>) -> Result<Self> {
        check_spd(&information)?;
        Ok(Self {
            node,
            prior,
            information,
        })
    }

    /// Anchor with the default `1e4·I₆` information.
    pub fn with_default_information(node: usize, prior: Pose) -> Self {
        Self {
            node,
            prior,
            information: Matrix6::identity() * ANCHOR_INFORMATION,
        }
    }

    pub fn residual(&self, x: &Pose) -> Result<Tangent> {
        self.prior.ominus(x)
    }

    pub fn linearize(&self, x: &Pose) -> Result<(Tangent, Matrix6<f64>)> {
        let a = x.inverse().compose(&self.prior);
        let e = a.log()?;
        Ok((e, -se3_right_jacobian_inv(&e) * a.inverse().adjoint()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Factor {
    Gps(GpsFactor),
    Odometry(OdometryFactor),
    Anchor(AnchorFactor),
}

/// Residual and per-node Jacobians of one factor at the current estimate.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub residual: DVector<f64>,
    /// `(node time index, residual_dim × 6 Jacobian)`.
    pub jacobians: Vec<(usize, DMatrix<f64>)>,
    pub information: DMatrix<f64>,
}

impl Factor {
    pub fn nodes(&self) -> Vec<usize> {
        match self {
            Factor::Gps(f) => vec![f.node],
            Factor::Odometry(f) => vec![f.from, f.to],
            Factor::Anchor(f) => vec![f.node],
        }
    }

    pub fn is_gps(&self) -> bool {
        matches!(self, Factor::Gps(_))
    }

    pub fn linearize<'a, F>(&self, states: F) -> Result<Linearization>
    where
        F: Fn(usize) -> Option<&'a Pose>,
    {
        let get = |t: usize| states(t).ok_or(Error::NodeNotInWindow { time: t });
        Ok(match self {
            Factor::Gps(f) => {
                let (r, j) = f.linearize(get(f.node)?)?;
                Linearization {
                    residual: DVector::from_element(1, r),
                    jacobians: vec![(f.node, DMatrix::from_row_slice(1, 6, j.as_slice()))],
                    information: DMatrix::from_element(1, 1, f.information()),
                }
            }
            Factor::Odometry(f) => {
                let (e, ji, jj) = f.linearize(get(f.from)?, get(f.to)?)?;
                Linearization {
                    residual: DVector::from_column_slice(e.as_slice()),
                    jacobians: vec![
                        (f.from, DMatrix::from_column_slice(6, 6, ji.as_slice())),
                        (f.to, DMatrix::from_column_slice(6, 6, jj.as_slice())),
                    ],
                    information: DMatrix::from_column_slice(6, 6, f.information.as_slice()),
                }
            }
            Factor::Anchor(f) => {
                let (e, j) = f.linearize(get(f.node)?)?;
                Linearization {
                    residual: DVector::from_column_slice(e.as_slice()),
                    jacobians: vec![(f.node, DMatrix::from_column_slice(6, 6, j.as_slice()))],
                    information: DMatrix::from_column_slice(6, 6, f.information.as_slice()),
                }
            }
        })
    }

    /// Information-weighted squared error `eᵀΩe`.
    pub fn cost<'a, F>(&self, states: F) -> Result<f64>
    where
        F: Fn(usize) -> Option<&'a Pose>,
    {
        let get = |t: usize| states(t).ok_or(Error::NodeNotInWindow { time: t });
        Ok(match self {
            Factor::Gps(f) => {
                let r = f.residual(get(f.node)?)?;
                r * r * f.information()
            }
            Factor::Odometry(f) => {
                let e = f.residual(get(f.from)?, get(f.to)?)?;
                (e.transpose() * f.information * e)[0]
            }
            Factor::Anchor(f) => {
                let e = f.residual(get(f.node)?)?;
                (e.transpose() * f.information * e)[0]
            }
        })
    }
}
