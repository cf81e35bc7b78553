//! Geometric tracking controller with a position integrator.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrotor::{
    allocation_inverse_raw, quat_sandwich, rotation_matrix, ParamVector, PhysicalConstants, RotorBounds, RotorInput,
    State13,
};
use crate::trajectory::PiecewiseBezier;

/// Diagonal gains (one entry per axis).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    pub k_r: [f64; 3],
    pub k_v: [f64; 3],
    pub k_i: [f64; 3],
    pub k_q: [f64; 3],
    pub k_w: [f64; 3],
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            k_r: [6.0; 3],
            k_v: [4.0; 3],
            k_i: [0.05; 3],
            k_q: [1.2; 3],
            k_w: [0.3; 3],
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k_r, self.k_v, self.k_i, self.k_q, self.k_w];
        if all.iter().flatten().all(|&k| k > 0.0 && k.is_finite()) {
            Ok(())
        } else {
            Err(Error::domain("controller gains must be positive and finite"))
        }
    }
}

/// Position integrator state ξ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub xi: [f64; 3],
}

/// Desired flat output (x, y, z, yaw) and its first two derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferencePoint {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl ReferencePoint {
    pub fn hover(pos: Vector3<f64>, yaw: f64) -> Self {
        Self {
            pos,
            vel: Vector3::zeros(),
            acc: Vector3::zeros(),
            yaw,
            yaw_rate: 0.0,
        }
    }

    /// Samples a 4-dimensional (x, y, z, yaw) trajectory.
    pub fn from_trajectory(traj: &PiecewiseBezier, t: f64) -> Result<Self> {
        if traj.n_dim() != 4 {
            return Err(Error::Dimension {
                expected: 4,
                got: traj.n_dim(),
            });
        }
        let d = traj.evaluate_upto(t, 2)?;
        let v3 = |row: &Vec<f64>| Vector3::new(row[0], row[1], row[2]);
        Ok(Self {
            pos: v3(&d[0]),
            vel: v3(&d[1]),
            acc: v3(&d[2]),
            yaw: d[0][3],
            yaw_rate: d[1][3],
        })
    }
}

/// Gains plus the saturation and safety limits around the control law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Controller {
    pub gains: ControllerGains,
    pub rotor_bounds: RotorBounds,
    /// Component-wise bound on |ξ| (anti-windup).
    pub xi_limit: f64,
    /// Smallest admissible norm of the desired force vector.
    pub thrust_eps: f64,
}

impl Default for Controller {
    fn default() -> Self {
        Self {
            gains: ControllerGains::default(),
            rotor_bounds: RotorBounds::default(),
            xi_limit: 5.0,
            thrust_eps: 1e-6,
        }
    }
}

/// Result of one evaluation of the control law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOutput {
    /// Rotor command before clamping.
    pub raw: [f64; 4],
    /// Command actually applied.
    pub u: RotorInput,
    pub saturated: bool,
    pub xi_dot: [f64; 3],
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    (r.transpose() * r - Matrix3::identity()).amax() <= tol && (r.determinant() - 1.0).abs() <= tol
}

/// `e_q = ½ (R_dᵀ R − Rᵀ R_d)^∨`.
pub fn attitude_error(r_d: &Matrix3<f64>, q: &nalgebra::Vector4<f64>) -> Result<Vector3<f64>> {
    if !is_rotation(r_d, 1e-8) {
        return Err(Error::domain("desired attitude is not a rotation matrix"));
    }
    Ok(attitude_error_unchecked(r_d, &rotation_matrix(q)))
}

#[inline]
fn attitude_error_unchecked(r_d: &Matrix3<f64>, r: &Matrix3<f64>) -> Vector3<f64> {
    0.5 * vee(&(r_d.transpose() * r - r.transpose() * r_d))
}

/// Rotation whose third column is along `f_vec` and whose heading matches `yaw`.
pub fn desired_attitude(f_vec: &Vector3<f64>, yaw: f64, eps: f64) -> Result<Matrix3<f64>> {
    let norm = f_vec.norm();
    if !(norm > eps) {
        return Err(Error::DegenerateThrust { norm, eps });
    }
    let z = f_vec / norm;
    let x_c = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let y = z.cross(&x_c);
    let yn = y.norm();
    if yn < 1e-9 {
        return Err(Error::domain("desired thrust is parallel to the heading direction"));
    }
    let y = y / yn;
    let x = y.cross(&z);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

impl Controller {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        self.rotor_bounds.validate()?;
        if !(self.xi_limit > 0.0 && self.thrust_eps > 0.0) {
            return Err(Error::domain("integrator limit and thrust epsilon must be positive"));
        }
        Ok(())
    }

    /// Evaluates the control law at a raw state slice (13 entries).
    pub fn control_raw(
        &self,
        xi: &[f64; 3],
        x: &[f64],
        reference: &ReferencePoint,
        p_c: &ParamVector,
        c: &PhysicalConstants,
    ) -> Result<ControlOutput> {
        let g = &self.gains;
        let q = [x[6], x[7], x[8], x[9]];
        let r = Vector3::new(x[0], x[1], x[2]);
        let v = Vector3::new(x[3], x[4], x[5]);
        let w = Vector3::new(x[10], x[11], x[12]);
        let e_r = r - reference.pos;
        let e_v = v - reference.vel;
        let mut f_vec = c.mass * (Vector3::new(0.0, 0.0, c.gravity) + reference.acc);
        for i in 0..3 {
            f_vec[i] -= g.k_r[i] * e_r[i] + g.k_v[i] * e_v[i] + g.k_i[i] * xi[i];
        }
        let r_d = desired_attitude(&f_vec, reference.yaw, self.thrust_eps)?;
        let zb = quat_sandwich(&q, &[0.0, 0.0, 1.0]);
        let thrust = f_vec.dot(&Vector3::new(zb[0], zb[1], zb[2]));
        let n2: f64 = q.iter().map(|a| a * a).sum();
        let qn = nalgebra::Vector4::new(q[0], q[1], q[2], q[3]) / n2.sqrt();
        let e_q = attitude_error_unchecked(&r_d, &rotation_matrix(&qn));
        let torque = Vector3::new(
            -g.k_q[0] * e_q[0] - g.k_w[0] * w[0],
            -g.k_q[1] * e_q[1] - g.k_w[1] * w[1],
            -g.k_q[2] * e_q[2] - g.k_w[2] * w[2],
        );
        let raw = allocation_inverse_raw(thrust, &torque, p_c, c.arm_length);
        let (u, saturated) = RotorInput(raw).clamped(&self.rotor_bounds);
        let mut xi_dot = [e_r[0], e_r[1], e_r[2]];
        for i in 0..3 {
            // Stop integrating outward once the clamp is reached.
            if (xi[i] >= self.xi_limit && xi_dot[i] > 0.0) || (xi[i] <= -self.xi_limit && xi_dot[i] < 0.0) {
                xi_dot[i] = 0.0;
            }
        }
        Ok(ControlOutput {
            raw,
            u,
            saturated,
            xi_dot,
            thrust,
            torque,
        })
    }

    /// `(u, ξ̇)` for a structured state.
    pub fn control(
        &self,
        state: &ControllerState,
        x: &State13,
        reference: &ReferencePoint,
        p_c: &ParamVector,
        c: &PhysicalConstants,
    ) -> Result<(RotorInput, [f64; 3])> {
        let out = self.control_raw(&state.xi, &x.to_array(), reference, p_c, c)?;
        Ok((out.u, out.xi_dot))
    }

    pub fn clamp_xi(&self, xi: &mut [f64]) {
        for v in xi.iter_mut() {
            *v = v.clamp(-self.xi_limit, self.xi_limit);
        }
    }
}
