//! Closed-loop state and input sensitivities with respect to the uncertain
//! parameters, and the integral costs built on them.
//!
//! With plant `ẋ = f(x, u, p)`, controller `u = c(ξ, x, t)`, `ξ̇ = g(ξ, x, t)`,
//! the sensitivities `Π = ∂x/∂p`, `Π_ξ = ∂ξ/∂p` obey
//!
//! ```text
//! Π̇   = f_x Π + f_u Θ + f_p
//! Π̇_ξ = g_x Π + g_ξ Π_ξ
//! Θ   = c_x Π + c_ξ Π_ξ
//! ```
//!
//! and are integrated jointly with the closed-loop state.

use std::fmt::Write as _;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{integrate, IntegratorOptions, OdeSystem};
use crate::quadrotor::{dynamics_array, ParamVector, State13, PARAM_DIM, STATE_DIM};
use crate::sim::{output_grid, renormalize, state_check, trapezoid, ClosedLoop, SimTrace};

pub type PiMatrix = SMatrix<f64, STATE_DIM, PARAM_DIM>;
pub type PiXiMatrix = SMatrix<f64, 3, PARAM_DIM>;
pub type ThetaMatrix = SMatrix<f64, 4, PARAM_DIM>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityBundle {
    pub pi: PiMatrix,
    pub pi_xi: PiXiMatrix,
    pub theta: ThetaMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianSet {
    pub f_x: SMatrix<f64, STATE_DIM, STATE_DIM>,
    pub f_u: SMatrix<f64, STATE_DIM, 4>,
    pub f_p: SMatrix<f64, STATE_DIM, PARAM_DIM>,
    pub g_x: SMatrix<f64, 3, STATE_DIM>,
    pub g_xi: SMatrix<f64, 3, 3>,
    pub c_x: SMatrix<f64, 4, STATE_DIM>,
    pub c_xi: SMatrix<f64, 4, 3>,
}

impl JacobianSet {
    fn is_finite(&self) -> bool {
        self.f_x
            .iter()
            .chain(self.f_u.iter())
            .chain(self.f_p.iter())
            .chain(self.g_x.iter())
            .chain(self.g_xi.iter())
            .chain(self.c_x.iter())
            .chain(self.c_xi.iter())
            .all(|v| v.is_finite())
    }

    pub fn theta(&self, pi: &PiMatrix, pi_xi: &PiXiMatrix) -> ThetaMatrix {
        self.c_x * pi + self.c_xi * pi_xi
    }
}

#[inline]
fn fd_step(v: f64) -> f64 {
    1e-6f64.max(1e-6 * v.abs())
}

/// Perturbs entry `j` of a state slice; quaternion entries are renormalized.
fn perturbed(x: &[f64], j: usize, h: f64) -> [f64; STATE_DIM] {
    let mut y = [0.0; STATE_DIM];
    y.copy_from_slice(&x[..STATE_DIM]);
    y[j] += h;
    if (6..10).contains(&j) {
        renormalize(&mut y);
    }
    y
}

/// Central finite-difference Jacobians of the closed loop at `(x, ξ, t)`.
///
/// The plant is linearized at the applied (clamped) input; the controller
/// Jacobians use the unclamped law.
pub fn jacobians(cl: &ClosedLoop, x: &[f64], xi: &[f64; 3], t: f64) -> Result<JacobianSet> {
    let reference = cl.reference(t)?;
    let ctl = cl.controller;
    let law = |xs: &[f64], xis: &[f64; 3]| ctl.control_raw(xis, xs, &reference, &cl.p_c, cl.constants);
    let base = law(x, xi)?;
    let u = base.u.0;
    let p = cl.p_real;
    let c = cl.constants;

    let mut j = JacobianSet {
        f_x: SMatrix::zeros(),
        f_u: SMatrix::zeros(),
        f_p: SMatrix::zeros(),
        g_x: SMatrix::zeros(),
        g_xi: SMatrix::zeros(),
        c_x: SMatrix::zeros(),
        c_xi: SMatrix::zeros(),
    };
    for k in 0..STATE_DIM {
        let h = fd_step(x[k]);
        let xp = perturbed(x, k, h);
        let xm = perturbed(x, k, -h);
        let fp = dynamics_array(&xp, &u, &p, c);
        let fm = dynamics_array(&xm, &u, &p, c);
        let cp = law(&xp, xi)?;
        let cm = law(&xm, xi)?;
        for r in 0..STATE_DIM {
            j.f_x[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
        for r in 0..3 {
            j.g_x[(r, k)] = (cp.xi_dot[r] - cm.xi_dot[r]) / (2.0 * h);
        }
        for r in 0..4 {
            j.c_x[(r, k)] = (cp.raw[r] - cm.raw[r]) / (2.0 * h);
        }
    }
    for k in 0..3 {
        let h = fd_step(xi[k]);
        let (mut xp, mut xm) = (*xi, *xi);
        xp[k] += h;
        xm[k] -= h;
        let cp = law(x, &xp)?;
        let cm = law(x, &xm)?;
        for r in 0..3 {
            j.g_xi[(r, k)] = (cp.xi_dot[r] - cm.xi_dot[r]) / (2.0 * h);
        }
        for r in 0..4 {
            j.c_xi[(r, k)] = (cp.raw[r] - cm.raw[r]) / (2.0 * h);
        }
    }
    for k in 0..4 {
        let h = fd_step(u[k]);
        let (mut up, mut um) = (u, u);
        up[k] += h;
        um[k] -= h;
        let fp = dynamics_array(x, &up, &p, c);
        let fm = dynamics_array(x, &um, &p, c);
        for r in 0..STATE_DIM {
            j.f_u[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    let pa = p.as_array();
    for k in 0..PARAM_DIM {
        let h = fd_step(pa[k]);
        let (mut pp, mut pm) = (pa, pa);
        pp[k] += h;
        pm[k] -= h;
        let fp = dynamics_array(x, &u, &ParamVector::from_array(pp), c);
        let fm = dynamics_array(x, &u, &ParamVector::from_array(pm), c);
        for r in 0..STATE_DIM {
            j.f_p[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    if !j.is_finite() {
        return Err(Error::NumericalJacobian("closed-loop jacobians"));
    }
    Ok(j)
}

/// Initial conditions and switches for [`propagate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityOptions {
    pub pi0: PiMatrix,
    pub pi_xi0: PiXiMatrix,
    /// Drop the `f_p` forcing term (the homogeneous variational system).
    pub freeze_parameters: bool,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            pi0: PiMatrix::zeros(),
            pi_xi0: PiXiMatrix::zeros(),
            freeze_parameters: false,
        }
    }
}

const N_PI: usize = STATE_DIM * PARAM_DIM;
const N_PI_XI: usize = 3 * PARAM_DIM;
const OFF_XI: usize = STATE_DIM;
const OFF_PI: usize = STATE_DIM + 3;
const OFF_PI_XI: usize = OFF_PI + N_PI;
/// Dimension of the joint state/sensitivity ODE.
pub const JOINT_DIM: usize = OFF_PI_XI + N_PI_XI;

fn unpack_sens(y: &[f64]) -> (PiMatrix, PiXiMatrix) {
    (
        PiMatrix::from_row_slice(&y[OFF_PI..OFF_PI_XI]),
        PiXiMatrix::from_row_slice(&y[OFF_PI_XI..JOINT_DIM]),
    )
}

fn write_rows<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>, out: &mut [f64]) {
    for r in 0..R {
        for c in 0..C {
            out[r * C + c] = m[(r, c)];
        }
    }
}

struct SensitivityOde<'a> {
    cl: ClosedLoop<'a>,
    freeze: bool,
}

impl OdeSystem for SensitivityOde<'_> {
    fn dim(&self) -> usize {
        JOINT_DIM
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let cl = &self.cl;
        let x = &y[..STATE_DIM];
        let xi = [y[OFF_XI], y[OFF_XI + 1], y[OFF_XI + 2]];
        let reference = cl.reference(t)?;
        let out = cl.controller.control_raw(&xi, x, &reference, &cl.p_c, cl.constants)?;
        let xd = dynamics_array(x, &out.u.0, &cl.p_real, cl.constants);
        dy[..STATE_DIM].copy_from_slice(&xd);
        dy[OFF_XI..OFF_PI].copy_from_slice(&out.xi_dot);

        let j = jacobians(cl, x, &xi, t)?;
        let (pi, pi_xi) = unpack_sens(y);
        let theta = j.theta(&pi, &pi_xi);
        let mut pi_dot = j.f_x * pi + j.f_u * theta;
        if !self.freeze {
            pi_dot += j.f_p;
        }
        let pi_xi_dot = j.g_x * pi + j.g_xi * pi_xi;
        write_rows(&pi_dot, &mut dy[OFF_PI..OFF_PI_XI]);
        write_rows(&pi_xi_dot, &mut dy[OFF_PI_XI..JOINT_DIM]);
        Ok(())
    }

    fn post_step(&mut self, y: &mut [f64]) {
        renormalize(y);
        self.cl.controller.clamp_xi(&mut y[OFF_XI..OFF_PI]);
    }

    fn check(&self, y: &[f64]) -> std::result::Result<(), String> {
        state_check(y)?;
        if y[OFF_PI..].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err("non-finite sensitivity".into())
        }
    }
}

/// Integrates the closed loop together with `Π` and `Π_ξ`; the returned trace
/// carries a [`SensitivityBundle`] per output sample.
pub fn propagate(
    cl: &ClosedLoop,
    x0: &State13,
    xi0: [f64; 3],
    horizon: f64,
    opts: &IntegratorOptions,
    sens: &SensitivityOptions,
) -> Result<SimTrace> {
    let times = output_grid(cl.traj, horizon, opts)?;
    let mut y0 = vec![0.0; JOINT_DIM];
    y0[..STATE_DIM].copy_from_slice(&x0.to_array());
    y0[OFF_XI..OFF_PI].copy_from_slice(&xi0);
    write_rows(&sens.pi0, &mut y0[OFF_PI..OFF_PI_XI]);
    write_rows(&sens.pi_xi0, &mut y0[OFF_PI_XI..JOINT_DIM]);
    let mut sys = SensitivityOde {
        cl: *cl,
        freeze: sens.freeze_parameters,
    };
    let mut trace = SimTrace::default();
    let mut bundles = Vec::with_capacity(times.len());
    integrate(&mut sys, &y0, &times, opts, |t, y| {
        let xi = [y[OFF_XI], y[OFF_XI + 1], y[OFF_XI + 2]];
        trace.record(t, &y[..STATE_DIM], xi, cl)?;
        let (pi, pi_xi) = unpack_sens(y);
        let theta = jacobians(cl, &y[..STATE_DIM], &xi, t)?.theta(&pi, &pi_xi);
        bundles.push(SensitivityBundle { pi, pi_xi, theta });
        Ok(())
    })?;
    trace.sensitivity = Some(bundles);
    Ok(trace)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixNorm {
    #[default]
    Frobenius,
    Spectral,
}

impl MatrixNorm {
    pub fn apply<const R: usize>(&self, m: &SMatrix<f64, R, PARAM_DIM>) -> f64 {
        match self {
            MatrixNorm::Frobenius => m.norm(),
            MatrixNorm::Spectral => {
                // Largest eigenvalue of the 2×2 Gram matrix, in closed form.
                let g = m.transpose() * m;
                let (a, b, d) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
                let mean = 0.5 * (a + d);
                let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                (mean + rad).max(0.0).sqrt()
            }
        }
    }
}

/// Which rows of `Π` enter `F_Π`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSelection {
    #[default]
    Position,
    All,
    Rows(Vec<usize>),
}

impl RowSelection {
    pub fn mask(&self) -> Result<SVector<f64, STATE_DIM>> {
        let mut m = SVector::<f64, STATE_DIM>::zeros();
        match self {
            RowSelection::Position => m.fixed_rows_mut::<3>(0).fill(1.0),
            RowSelection::All => m.fill(1.0),
            RowSelection::Rows(rows) => {
                for &r in rows {
                    if r >= STATE_DIM {
                        return Err(Error::domain(format!("row {r} outside the state")));
                    }
                    m[r] = 1.0;
                }
            }
        }
        Ok(m)
    }
}

fn bundles(trace: &SimTrace) -> Result<&[SensitivityBundle]> {
    trace
        .sensitivity
        .as_deref()
        .ok_or_else(|| Error::Missing("trace carries no sensitivities".into()))
}

/// `F_Π = ∫ ‖M_sel Π(t)‖ dt` (trapezoidal on the trace grid).
pub fn cost_pi(trace: &SimTrace, rows: &RowSelection, norm: MatrixNorm) -> Result<f64> {
    let mask = rows.mask()?;
    let vals: Vec<f64> = bundles(trace)?
        .iter()
        .map(|b| {
            let mut sel = b.pi;
            for r in 0..STATE_DIM {
                if mask[r] == 0.0 {
                    sel.row_mut(r).fill(0.0);
                }
            }
            norm.apply(&sel)
        })
        .collect();
    Ok(trapezoid(&trace.times, &vals))
}

/// `F_Θ = ∫ ‖Θ(t)‖ dt` over all four rotor channels.
pub fn cost_theta(trace: &SimTrace, norm: MatrixNorm) -> Result<f64> {
    let vals: Vec<f64> = bundles(trace)?.iter().map(|b| norm.apply(&b.theta)).collect();
    Ok(trapezoid(&trace.times, &vals))
}

/// Trapezoidal `∫ Θ(t) dt`.
pub fn theta_integral(trace: &SimTrace) -> Result<ThetaMatrix> {
    let b = bundles(trace)?;
    let mut acc = ThetaMatrix::zeros();
    for i in 1..b.len() {
        acc += 0.5 * (trace.times[i] - trace.times[i - 1]) * (b[i].theta + b[i - 1].theta);
    }
    Ok(acc)
}

/// `t`, `Π` (row-major, `pi_<row>_<col>`), then `Θ` (`theta_<row>_<col>`).
pub fn sensitivity_csv(trace: &SimTrace) -> Result<String> {
    let b = bundles(trace)?;
    let mut out = String::from("t");
    for r in 0..STATE_DIM {
        for c in 0..PARAM_DIM {
            write!(out, ",pi_{r}_{c}").unwrap();
        }
    }
    for r in 0..4 {
        for c in 0..PARAM_DIM {
            write!(out, ",theta_{r}_{c}").unwrap();
        }
    }
    out.push('\n');
    for (t, s) in trace.times.iter().zip(b) {
        write!(out, "{t}").unwrap();
        for r in 0..STATE_DIM {
            for c in 0..PARAM_DIM {
                write!(out, ",{}", s.pi[(r, c)]).unwrap();
            }
        }
        for r in 0..4 {
            for c in 0..PARAM_DIM {
                write!(out, ",{}", s.theta[(r, c)]).unwrap();
            }
        }
        out.push('\n');
    }
    Ok(out)
}
