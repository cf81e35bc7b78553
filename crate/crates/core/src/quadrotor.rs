//! Rigid-body quadrotor model.
//!
//! State layout is `[r (3), v (3), q (4, w x y z), ω (3)]`. Position and
//! velocity live in the world frame, ω in the body frame, and `q` rotates body
//! vectors into the world frame with Hamilton products (`R(q) v = q ⊗ v ⊗ q*`).
//!
//! The dynamics are written once over [`Scalar`] so the same code drives the
//! simulator (`f64`) and the automatic differentiation used for Lie derivatives.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};

pub const STATE_DIM: usize = 13;
pub const INPUT_DIM: usize = 4;
pub const PARAM_DIM: usize = 2;

/// Allowed drift of `‖q‖` from one before rotation helpers refuse the input.
pub const UNIT_QUAT_TOL: f64 = 1e-6;

/// Full quadrotor state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State13 {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Unit quaternion in (w, x, y, z) order.
    pub q: Vector4<f64>,
    pub w: Vector3<f64>,
}

impl State13 {
    /// At rest at `position` with the given heading.
    pub fn hover(position: Vector3<f64>, yaw: f64) -> Self {
        let (s, c) = (0.5 * yaw).sin_cos();
        Self {
            r: position,
            v: Vector3::zeros(),
            q: Vector4::new(c, 0.0, 0.0, s),
            w: Vector3::zeros(),
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let mut a = [0.0; STATE_DIM];
        a[0..3].copy_from_slice(self.r.as_slice());
        a[3..6].copy_from_slice(self.v.as_slice());
        a[6..10].copy_from_slice(self.q.as_slice());
        a[10..13].copy_from_slice(self.w.as_slice());
        a
    }

    pub fn from_slice(a: &[f64]) -> Self {
        debug_assert!(a.len() >= STATE_DIM);
        Self {
            r: Vector3::new(a[0], a[1], a[2]),
            v: Vector3::new(a[3], a[4], a[5]),
            q: Vector4::new(a[6], a[7], a[8], a[9]),
            w: Vector3::new(a[10], a[11], a[12]),
        }
    }

    pub fn normalize_quaternion(&mut self) {
        let n = self.q.norm();
        if n > 0.0 {
            self.q /= n;
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(&self.q)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Uncertain aerodynamic coefficients `p = [k_f, k_m]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// Rotor thrust coefficient, N·s².
    pub kf: f64,
    /// Drag-moment coefficient, m.
    pub km: f64,
}

impl ParamVector {
    pub fn new(kf: f64, km: f64) -> Result<Self> {
        let p = Self { kf, km };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kf > 0.0 && self.km > 0.0) || !self.kf.is_finite() || !self.km.is_finite() {
            return Err(Error::domain(format!(
                "parameters must be positive and finite (k_f = {}, k_m = {})",
                self.kf, self.km
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; PARAM_DIM] {
        [self.kf, self.km]
    }

    pub fn from_array(a: [f64; PARAM_DIM]) -> Self {
        Self { kf: a[0], km: a[1] }
    }
}

/// Mass properties and environment.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalConstants {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub arm_length: f64,
    pub gravity: f64,
    inertia_inv: Matrix3<f64>,
}

impl PhysicalConstants {
    pub fn new(mass: f64, inertia: Matrix3<f64>, arm_length: f64, gravity: f64) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::domain(format!("mass must be positive, got {mass}")));
        }
        if !(arm_length > 0.0) {
            return Err(Error::domain(format!("arm length must be positive, got {arm_length}")));
        }
        if (inertia - inertia.transpose()).abs().max() > 1e-12 * inertia.abs().max() {
            return Err(Error::domain("inertia matrix must be symmetric"));
        }
        if inertia.cholesky().is_none() {
            return Err(Error::domain("inertia matrix must be positive definite"));
        }
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| Error::domain("inertia matrix is singular"))?;
        Ok(Self {
            mass,
            inertia,
            arm_length,
            gravity,
            inertia_inv,
        })
    }

    /// Plausible Hummingbird-class values (m = 0.68 kg, J = diag(7e-3, 7e-3, 12e-3),
    /// ℓ = 0.17 m, g = 9.81 m/s²).
    pub fn hummingbird() -> Self {
        Self::new(
            0.68,
            Matrix3::from_diagonal(&Vector3::new(7e-3, 7e-3, 12e-3)),
            0.17,
            9.81,
        )
        .expect("default constants are valid")
    }

    pub fn inertia_inv(&self) -> &Matrix3<f64> {
        &self.inertia_inv
    }
}

/// Box bounds on the squared rotor speeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotorBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for RotorBounds {
    fn default() -> Self {
        Self { min: 1.0e3, max: 2.0e4 }
    }
}

impl RotorBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.min >= 0.0 && self.max > self.min) {
            return Err(Error::domain(format!(
                "rotor bounds need 0 <= min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    /// Signed distance outside the box, normalized by `max` (negative inside).
    pub fn margin(&self, u: &[f64; 4]) -> f64 {
        u.iter()
            .map(|&ui| (self.min - ui).max(ui - self.max) / self.max)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Squared rotor speeds (ω₁², ω₂², ω₃², ω₄²), rad²/s².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotorInput(pub [f64; 4]);

impl RotorInput {
    /// Clamps into the bounds and reports whether any channel was clipped.
    pub fn clamped(&self, b: &RotorBounds) -> (RotorInput, bool) {
        let mut out = self.0;
        let mut hit = false;
        for u in out.iter_mut() {
            if *u < b.min {
                *u = b.min;
                hit = true;
            } else if *u > b.max {
                *u = b.max;
                hit = true;
            }
        }
        (RotorInput(out), hit)
    }

    /// Rotor speeds ω_i = √u_i (negative inputs map to zero).
    pub fn rotor_speeds(&self) -> [f64; 4] {
        self.0.map(|u| u.max(0.0).sqrt())
    }
}

/// Collective thrust and body torque.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wrench {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

// ---------------------------------------------------------------------------
// Quaternion helpers (generic so automatic differentiation can pass through)

/// Hamilton product `a ⊗ b` of (w, x, y, z) quaternions.
#[inline]
pub fn quat_mul<T: Scalar>(a: &[T; 4], b: &[T; 4]) -> [T; 4] {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// `q ⊗ (0, v) ⊗ q*`, i.e. `R(q)·v` for unit `q` (scaled by ‖q‖² otherwise).
#[inline]
pub fn quat_sandwich<T: Scalar>(q: &[T; 4], v: &[T; 3]) -> [T; 3] {
    let [w, x, y, z] = *q;
    let two = 2.0;
    let r00 = w * w + x * x - y * y - z * z;
    let r11 = w * w - x * x + y * y - z * z;
    let r22 = w * w - x * x - y * y + z * z;
    let r01 = (x * y - w * z).scale(two);
    let r02 = (x * z + w * y).scale(two);
    let r10 = (x * y + w * z).scale(two);
    let r12 = (y * z - w * x).scale(two);
    let r20 = (x * z - w * y).scale(two);
    let r21 = (y * z + w * x).scale(two);
    [
        r00 * v[0] + r01 * v[1] + r02 * v[2],
        r10 * v[0] + r11 * v[1] + r12 * v[2],
        r20 * v[0] + r21 * v[1] + r22 * v[2],
    ]
}

/// Body-to-world rotation matrix of a unit quaternion.
pub fn rotation_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let qa = [q[0], q[1], q[2], q[3]];
    let c0 = quat_sandwich(&qa, &[1.0, 0.0, 0.0]);
    let c1 = quat_sandwich(&qa, &[0.0, 1.0, 0.0]);
    let c2 = quat_sandwich(&qa, &[0.0, 0.0, 1.0]);
    Matrix3::new(
        c0[0], c1[0], c2[0], //
        c0[1], c1[1], c2[1], //
        c0[2], c1[2], c2[2],
    )
}

/// Unit quaternion (w, x, y, z) of a rotation matrix (Shepperd's method).
pub fn quaternion_from_matrix(m: &Matrix3<f64>) -> Vector4<f64> {
    let tr = m.trace();
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        Vector4::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Vector4::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    let q = if q[0] < 0.0 { -q } else { q };
    q / q.norm()
}

/// Rotates `v` by the unit quaternion `q`.
pub fn quat_rotate(q: &Vector4<f64>, v: &Vector3<f64>) -> Result<Vector3<f64>> {
    let n = q.norm();
    if !((n - 1.0).abs() <= UNIT_QUAT_TOL) {
        return Err(Error::domain(format!("quaternion norm {n} is not unit")));
    }
    let r = quat_sandwich(&[q[0], q[1], q[2], q[3]], &[v[0], v[1], v[2]]);
    Ok(Vector3::new(r[0], r[1], r[2]))
}

/// Heading of a body-to-world rotation under the yaw-first 3-1-2 sequence
/// `R = R_z(ψ) R_x(φ) R_y(θ)`.
pub fn yaw_312(r: &Matrix3<f64>) -> f64 {
    (-r[(0, 1)]).atan2(r[(1, 1)])
}

// ---------------------------------------------------------------------------
// Allocation

/// The allocation matrix `S` mapping squared rotor speeds to `[f, τᵀ]ᵀ`.
pub fn allocation_matrix(p: &ParamVector, c: &PhysicalConstants) -> Matrix4<f64> {
    let l = c.arm_length;
    Matrix4::new(
        1.0, 1.0, 1.0, 1.0, //
        0.0, l, 0.0, -l, //
        -l, 0.0, l, 0.0, //
        p.km, -p.km, p.km, -p.km,
    ) * p.kf
}

#[inline]
pub(crate) fn allocation_generic<T: Scalar>(u: &[T; 4], kf: T, km: T, arm: f64) -> (T, [T; 3]) {
    let f = kf * (u[0] + u[1] + u[2] + u[3]);
    let tx = kf * (u[1] - u[3]).scale(arm);
    let ty = kf * (u[2] - u[0]).scale(arm);
    let tz = kf * km * (u[0] - u[1] + u[2] - u[3]);
    (f, [tx, ty, tz])
}

pub fn allocation_forward(u: &RotorInput, p: &ParamVector, c: &PhysicalConstants) -> Wrench {
    let (f, t) = allocation_generic(&u.0, p.kf, p.km, c.arm_length);
    Wrench {
        thrust: f,
        torque: Vector3::new(t[0], t[1], t[2]),
    }
}

/// Closed-form `S⁻¹ [f, τᵀ]ᵀ`.
pub fn allocation_inverse(w: &Wrench, p: &ParamVector, c: &PhysicalConstants) -> Result<RotorInput> {
    if !(p.kf > 0.0 && p.km > 0.0 && c.arm_length > 0.0) {
        return Err(Error::domain(
            "allocation matrix is singular (non-positive k_f, k_m or arm length)",
        ));
    }
    Ok(RotorInput(allocation_inverse_raw(w.thrust, &w.torque, p, c.arm_length)))
}

#[inline]
pub(crate) fn allocation_inverse_raw(f: f64, tau: &Vector3<f64>, p: &ParamVector, arm: f64) -> [f64; 4] {
    let a = f / p.kf;
    let b = tau[0] / (p.kf * arm);
    let cc = tau[1] / (p.kf * arm);
    let d = tau[2] / (p.kf * p.km);
    [
        0.25 * (a + d) - 0.5 * cc,
        0.25 * (a - d) + 0.5 * b,
        0.25 * (a + d) + 0.5 * cc,
        0.25 * (a - d) - 0.5 * b,
    ]
}

// ---------------------------------------------------------------------------
// Dynamics

/// Time derivative of a 13-dimensional state driven by a given wrench.
#[inline]
pub(crate) fn rigid_body_rhs<T: Scalar>(x: &[T], thrust: T, torque: &[T; 3], c: &PhysicalConstants) -> [T; STATE_DIM] {
    let q = [x[6], x[7], x[8], x[9]];
    let w = [x[10], x[11], x[12]];
    let zero = T::cst(0.0);
    let zb = quat_sandwich(&q, &[zero, zero, T::cst(1.0)]);
    let inv_m = 1.0 / c.mass;
    let acc = [
        (thrust * zb[0]).scale(inv_m),
        (thrust * zb[1]).scale(inv_m),
        (thrust * zb[2]).scale(inv_m) - T::cst(c.gravity),
    ];
    let qd = quat_mul(&q, &[zero, w[0], w[1], w[2]]);
    let j = &c.inertia;
    let jw = [
        w[0].scale(j[(0, 0)]) + w[1].scale(j[(0, 1)]) + w[2].scale(j[(0, 2)]),
        w[0].scale(j[(1, 0)]) + w[1].scale(j[(1, 1)]) + w[2].scale(j[(1, 2)]),
        w[0].scale(j[(2, 0)]) + w[1].scale(j[(2, 1)]) + w[2].scale(j[(2, 2)]),
    ];
    let gyro = [
        w[1] * jw[2] - w[2] * jw[1],
        w[2] * jw[0] - w[0] * jw[2],
        w[0] * jw[1] - w[1] * jw[0],
    ];
    let net = [torque[0] - gyro[0], torque[1] - gyro[1], torque[2] - gyro[2]];
    let ji = c.inertia_inv();
    let wd = [
        net[0].scale(ji[(0, 0)]) + net[1].scale(ji[(0, 1)]) + net[2].scale(ji[(0, 2)]),
        net[0].scale(ji[(1, 0)]) + net[1].scale(ji[(1, 1)]) + net[2].scale(ji[(1, 2)]),
        net[0].scale(ji[(2, 0)]) + net[1].scale(ji[(2, 1)]) + net[2].scale(ji[(2, 2)]),
    ];
    [
        x[3],
        x[4],
        x[5],
        acc[0],
        acc[1],
        acc[2],
        qd[0].scale(0.5),
        qd[1].scale(0.5),
        qd[2].scale(0.5),
        qd[3].scale(0.5),
        wd[0],
        wd[1],
        wd[2],
    ]
}

/// Raw-array form of [`dynamics`] used inside integrators.
#[inline]
pub fn dynamics_array(x: &[f64], u: &[f64; 4], p: &ParamVector, c: &PhysicalConstants) -> [f64; STATE_DIM] {
    let (f, tau) = allocation_generic(u, p.kf, p.km, c.arm_length);
    rigid_body_rhs(x, f, &tau, c)
}

/// `ẋ = f(x, u, p)`.
pub fn dynamics(x: &State13, u: &RotorInput, p: &ParamVector, c: &PhysicalConstants) -> [f64; STATE_DIM] {
    dynamics_array(&x.to_array(), &u.0, p, c)
}
