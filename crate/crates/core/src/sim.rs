//! Closed-loop simulation of the quadrotor tracking a reference trajectory.

use std::fmt::Write as _;

use crate::controller::{Controller, ReferencePoint};
use crate::error::{Error, Result};
use crate::integrate::{integrate, IntegratorOptions, OdeSystem};
use crate::quadrotor::{dynamics_array, ParamVector, PhysicalConstants, RotorInput, State13, STATE_DIM};
use crate::sensitivity::SensitivityBundle;
use crate::trajectory::{sample_times, PiecewiseBezier};

/// Positions or angular rates beyond these magnitudes count as divergence.
const MAX_POSITION: f64 = 1e4;
const MAX_RATE: f64 = 1e4;

/// Everything the closed loop needs besides its initial state.
#[derive(Clone, Copy, Debug)]
pub struct ClosedLoop<'a> {
    pub traj: &'a PiecewiseBezier,
    pub constants: &'a PhysicalConstants,
    pub controller: &'a Controller,
    /// Parameters assumed by the controller.
    pub p_c: ParamVector,
    /// Parameters of the simulated plant.
    pub p_real: ParamVector,
}

impl ClosedLoop<'_> {
    pub fn reference(&self, t: f64) -> Result<ReferencePoint> {
        ReferencePoint::from_trajectory(self.traj, t)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub states: Vec<State13>,
    pub controller_states: Vec<[f64; 3]>,
    /// Applied (clamped) rotor commands.
    pub inputs: Vec<RotorInput>,
    /// Commands before clamping.
    pub raw_inputs: Vec<[f64; 4]>,
    /// Number of output samples at which the rotor clamp was active.
    pub saturated_samples: usize,
    /// Largest normalized rotor-bound violation over the samples (≤ 0 inside).
    pub max_rotor_margin: f64,
    pub sensitivity: Option<Vec<SensitivityBundle>>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn final_state(&self) -> Option<&State13> {
        self.states.last()
    }

    pub(crate) fn record(&mut self, t: f64, x: &[f64], xi: [f64; 3], cl: &ClosedLoop) -> Result<()> {
        let reference = cl.reference(t)?;
        let out = cl.controller.control_raw(&xi, x, &reference, &cl.p_c, cl.constants)?;
        self.times.push(t);
        self.states.push(State13::from_slice(x));
        self.controller_states.push(xi);
        self.inputs.push(out.u);
        self.raw_inputs.push(out.raw);
        if out.saturated {
            self.saturated_samples += 1;
        }
        let margin = cl.controller.rotor_bounds.margin(&out.raw);
        if self.times.len() == 1 || margin > self.max_rotor_margin {
            self.max_rotor_margin = margin;
        }
        Ok(())
    }

    /// `t`, 13 state columns, ξ, and the applied rotor commands.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,z,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz,xi_x,xi_y,xi_z,u1,u2,u3,u4\n");
        for i in 0..self.len() {
            write!(out, "{}", self.times[i]).unwrap();
            for v in self.states[i].to_array() {
                write!(out, ",{v}").unwrap();
            }
            for v in self.controller_states[i] {
                write!(out, ",{v}").unwrap();
            }
            for v in self.inputs[i].0 {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Plant plus controller as an ODE in `[x (13), ξ (3)]`.
pub(crate) struct ClosedLoopOde<'a> {
    pub cl: ClosedLoop<'a>,
}

pub(crate) fn state_check(y: &[f64]) -> std::result::Result<(), String> {
    if !y.iter().all(|v| v.is_finite()) {
        return Err("non-finite state".into());
    }
    if y[..3].iter().any(|v| v.abs() > MAX_POSITION) {
        return Err("position out of range".into());
    }
    if y[10..13].iter().any(|v| v.abs() > MAX_RATE) {
        return Err("angular rate out of range".into());
    }
    Ok(())
}

pub(crate) fn renormalize(y: &mut [f64]) {
    let n = (y[6] * y[6] + y[7] * y[7] + y[8] * y[8] + y[9] * y[9]).sqrt();
    if n > 0.0 {
        for v in &mut y[6..10] {
            *v /= n;
        }
    }
}

impl OdeSystem for ClosedLoopOde<'_> {
    fn dim(&self) -> usize {
        STATE_DIM + 3
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let cl = &self.cl;
        let reference = cl.reference(t)?;
        let xi = [y[13], y[14], y[15]];
        let out = cl
            .controller
            .control_raw(&xi, &y[..STATE_DIM], &reference, &cl.p_c, cl.constants)?;
        let xd = dynamics_array(&y[..STATE_DIM], &out.u.0, &cl.p_real, cl.constants);
        dy[..STATE_DIM].copy_from_slice(&xd);
        dy[STATE_DIM..].copy_from_slice(&out.xi_dot);
        Ok(())
    }

    fn post_step(&mut self, y: &mut [f64]) {
        renormalize(y);
        self.cl.controller.clamp_xi(&mut y[STATE_DIM..]);
    }

    fn check(&self, y: &[f64]) -> std::result::Result<(), String> {
        state_check(y)
    }
}

/// Output grid `t0, t0 + Δ, …, t0 + horizon` for the trajectory start `t0`.
pub fn output_grid(traj: &PiecewiseBezier, horizon: f64, opts: &IntegratorOptions) -> Result<Vec<f64>> {
    if !(horizon > 0.0) {
        return Err(Error::domain("simulation horizon must be positive"));
    }
    let t0 = traj.start_time();
    let t1 = t0 + horizon;
    if t1 > traj.end_time() + 1e-9 * horizon.max(1.0) {
        return Err(Error::domain(format!(
            "horizon {horizon} exceeds trajectory span [{t0}, {}]",
            traj.end_time()
        )));
    }
    Ok(sample_times(t0, t1.min(traj.end_time()), opts.sample_interval))
}

/// Integrates the closed loop over `[t0, t0 + horizon]`.
pub fn simulate(
    cl: &ClosedLoop,
    x0: &State13,
    xi0: [f64; 3],
    horizon: f64,
    opts: &IntegratorOptions,
) -> Result<SimTrace> {
    let times = output_grid(cl.traj, horizon, opts)?;
    let mut y0 = x0.to_array().to_vec();
    y0.extend_from_slice(&xi0);
    let mut sys = ClosedLoopOde { cl: *cl };
    let mut trace = SimTrace::default();
    integrate(&mut sys, &y0, &times, opts, |t, y| {
        trace.record(t, &y[..STATE_DIM], [y[13], y[14], y[15]], cl)
    })?;
    Ok(trace)
}

/// Trapezoidal integral of sampled values.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Positional mean integral error norm `(1/T) ∫ ‖r − r_d‖ dt`.
pub fn tracking_error_norm(trace: &SimTrace, traj: &PiecewiseBezier) -> Result<f64> {
    if trace.len() < 2 {
        return Err(Error::Missing("trace needs at least two samples".into()));
    }
    let errs = trace
        .times
        .iter()
        .zip(&trace.states)
        .map(|(&t, s)| {
            let rd = traj.evaluate(t, 0)?;
            Ok(((s.r[0] - rd[0]).powi(2) + (s.r[1] - rd[1]).powi(2) + (s.r[2] - rd[2]).powi(2)).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(trapezoid(&trace.times, &errs) / trace.duration())
}
