//! Expanded empirical local observability Gramian (E²LOG).
//!
//! Lie derivatives of the measurement model and their state gradients come
//! from a truncated Taylor expansion of the flow carried out over dual
//! numbers: if `z(t)` solves `ż = F(z)` from `z₀`, then
//! `h(z(t)) = Σ ℒⁱh(z₀) tⁱ / i!`, so the i-th Taylor coefficient of
//! `h(z(t))` times `i!` is `ℒⁱh` and its dual part is `∇ℒⁱh`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad::{Dual, Scalar, Taylor};
use crate::controller::desired_attitude;
use crate::error::{Error, Result};
use crate::quadrotor::{
    allocation_generic, allocation_inverse_raw, quaternion_from_matrix, rigid_body_rhs, ParamVector, PhysicalConstants,
    STATE_DIM,
};
use crate::sim::SimTrace;
use crate::trajectory::PiecewiseBezier;

/// Augmented state `[x (13), k_f, k_m]`.
pub const AUG_DIM: usize = STATE_DIM + 2;
/// Largest supported Taylor order.
pub const MAX_ORDER: usize = 6;

/// Autonomous vector field `ż = F(z)` (inputs already frozen).
pub trait VectorField<const N: usize> {
    fn eval<T: Scalar>(&self, z: &[T; N]) -> [T; N];
}

/// Measurement map `y = h(z)`.
pub trait OutputMap<const N: usize> {
    fn n_out(&self) -> usize;
    fn eval<T: Scalar>(&self, z: &[T; N], out: &mut Vec<T>);
}

/// Lie derivatives `ℒ⁰h … ℒⁿh` and their gradients at a point.
#[derive(Clone, Debug)]
pub struct LieStack {
    /// `values[i]` is `ℒⁱh`, length `n_h`.
    pub values: Vec<Vec<f64>>,
    /// `grads[i]` is `∇ℒⁱh`, `n_h × N`.
    pub grads: Vec<DMatrix<f64>>,
}

fn lie_stack_k<const N: usize, const K: usize, F, H>(field: &F, output: &H, z0: &[f64; N]) -> LieStack
where
    F: VectorField<N>,
    H: OutputMap<N>,
{
    type D<const M: usize> = Dual<M>;
    let mut z: [Taylor<D<N>, K>; N] = std::array::from_fn(|i| Taylor::constant(D::<N>::variable(z0[i], i)));
    // Coefficient k of F(z) depends only on coefficients 0..=k of z.
    for k in 0..K - 1 {
        let dz = field.eval(&z);
        for i in 0..N {
            z[i].c[k + 1] = dz[i].c[k].scale(1.0 / (k + 1) as f64);
        }
    }
    let mut y = Vec::with_capacity(output.n_out());
    output.eval(&z, &mut y);
    let n_h = y.len();
    let mut values = Vec::with_capacity(K);
    let mut grads = Vec::with_capacity(K);
    let mut fact = 1.0;
    for i in 0..K {
        if i > 0 {
            fact *= i as f64;
        }
        values.push(y.iter().map(|yk| fact * yk.c[i].v).collect());
        grads.push(DMatrix::from_fn(n_h, N, |r, c| fact * y[r].c[i].g[c]));
    }
    LieStack { values, grads }
}

/// `ℒⁱh` and `∇ℒⁱh` for `i = 0..=order`.
pub fn lie_stack<const N: usize, F, H>(field: &F, output: &H, z0: &[f64; N], order: usize) -> Result<LieStack>
where
    F: VectorField<N>,
    H: OutputMap<N>,
{
    let s = match order {
        0 => lie_stack_k::<N, 1, F, H>(field, output, z0),
        1 => lie_stack_k::<N, 2, F, H>(field, output, z0),
        2 => lie_stack_k::<N, 3, F, H>(field, output, z0),
        3 => lie_stack_k::<N, 4, F, H>(field, output, z0),
        4 => lie_stack_k::<N, 5, F, H>(field, output, z0),
        5 => lie_stack_k::<N, 6, F, H>(field, output, z0),
        6 => lie_stack_k::<N, 7, F, H>(field, output, z0),
        _ => return Err(Error::domain(format!("Taylor order {order} exceeds {MAX_ORDER}"))),
    };
    if s.values
        .iter()
        .flatten()
        .chain(s.grads.iter().flat_map(|g| g.iter()))
        .any(|v| !v.is_finite())
    {
        return Err(Error::NumericalJacobian("lie derivatives"));
    }
    Ok(s)
}

/// `K(dt) = Σ_i dtⁱ / i! · ∇ℒⁱh`.
pub fn taylor_jacobian(grads: &[DMatrix<f64>], dt: f64) -> DMatrix<f64> {
    let mut k = grads[0].clone();
    let mut coef = 1.0;
    for (i, g) in grads.iter().enumerate().skip(1) {
        coef *= dt / i as f64;
        k += g * coef;
    }
    k
}

/// `∫₀ᴴ K'ᵀK' dt` with `K' = K(t) diag(s)⁻¹`, composite Simpson on `nodes`
/// equally spaced points (`nodes` odd, at least 3). Exactly symmetric.
pub fn segment_gramian(grads: &[DMatrix<f64>], horizon: f64, nodes: usize, scale: &[f64]) -> Result<DMatrix<f64>> {
    if nodes < 3 || nodes.is_multiple_of(2) {
        return Err(Error::domain("Simpson quadrature needs an odd number (>= 3) of nodes"));
    }
    let n = grads[0].ncols();
    if scale.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: scale.len(),
        });
    }
    if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::domain("scaling entries must be positive"));
    }
    let h = horizon / (nodes - 1) as f64;
    let mut w = DMatrix::zeros(n, n);
    for j in 0..nodes {
        let weight = if j == 0 || j == nodes - 1 {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
        let mut k = taylor_jacobian(grads, j as f64 * h);
        for (c, &s) in scale.iter().enumerate() {
            k.column_mut(c).unscale_mut(s);
        }
        w += k.tr_mul(&k) * weight;
    }
    Ok(symmetrize(w))
}

fn symmetrize(mut w: DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    for r in 0..n {
        for c in r + 1..n {
            let v = 0.5 * (w[(r, c)] + w[(c, r)]);
            w[(r, c)] = v;
            w[(c, r)] = v;
        }
    }
    w
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(w: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(w.clone()).eigenvalues.min()
}

pub fn lambda_max(w: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(w.clone()).eigenvalues.max()
}

/// Running sum of segment Gramians.
#[derive(Clone, Debug)]
pub struct GramianAccumulator {
    pub w: DMatrix<f64>,
    pub segment_count: usize,
    pub scale: Vec<f64>,
}

impl GramianAccumulator {
    pub fn new(scale: Vec<f64>) -> Self {
        let n = scale.len();
        Self {
            w: DMatrix::zeros(n, n),
            segment_count: 0,
            scale,
        }
    }

    pub fn add(&mut self, segment: &DMatrix<f64>) {
        self.w += segment;
        self.w = symmetrize(std::mem::take(&mut self.w));
        self.segment_count += 1;
    }

    pub fn lambda_min(&self) -> f64 {
        lambda_min(&self.w)
    }

    /// `F_E2LOG = −λ_min(W̃_O)`.
    pub fn cost(&self) -> f64 {
        -self.lambda_min()
    }
}

/// `−λ_min` of an arbitrary symmetric matrix.
pub fn cost_from_gramian(w: &DMatrix<f64>) -> f64 {
    -lambda_min(w)
}

// ---------------------------------------------------------------------------
// Quadrotor model

/// Which sensor channels make up `h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementModel {
    pub position: bool,
    pub orientation: bool,
    pub gyro: bool,
    /// Specific force in the body frame.
    pub accelerometer: bool,
}

impl Default for MeasurementModel {
    fn default() -> Self {
        Self {
            position: true,
            orientation: true,
            gyro: true,
            accelerometer: false,
        }
    }
}

impl MeasurementModel {
    pub fn n_out(&self) -> usize {
        3 * self.position as usize
            + 4 * self.orientation as usize
            + 3 * self.gyro as usize
            + 3 * self.accelerometer as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_out() == 0 {
            return Err(Error::domain("measurement model has no channels"));
        }
        Ok(())
    }

    /// Column names matching [`QuadrotorOutput`] order.
    pub fn channel_names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.position {
            v.extend(["px", "py", "pz"]);
        }
        if self.orientation {
            v.extend(["qw", "qx", "qy", "qz"]);
        }
        if self.gyro {
            v.extend(["gx", "gy", "gz"]);
        }
        if self.accelerometer {
            v.extend(["ax", "ay", "az"]);
        }
        v
    }
}

/// Inputs for the augmented dynamics, held constant over a segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrozenInput {
    /// Rotor speeds `u* = √u` when `rotor_speeds` is set, squared speeds otherwise.
    pub value: [f64; 4],
    pub rotor_speeds: bool,
}

impl FrozenInput {
    pub fn from_squared(u: &[f64; 4], rotor_speeds: bool) -> Self {
        let value = if rotor_speeds { u.map(|v| v.max(0.0).sqrt()) } else { *u };
        Self { value, rotor_speeds }
    }

    fn squared<T: Scalar>(&self) -> [T; 4] {
        self.value
            .map(|v| if self.rotor_speeds { T::cst(v * v) } else { T::cst(v) })
    }
}

/// `ż = [f(x, u, k_f, k_m); 0; 0]`.
pub struct QuadrotorField<'a> {
    pub constants: &'a PhysicalConstants,
    pub input: FrozenInput,
}

impl VectorField<AUG_DIM> for QuadrotorField<'_> {
    fn eval<T: Scalar>(&self, z: &[T; AUG_DIM]) -> [T; AUG_DIM] {
        let u = self.input.squared::<T>();
        let (f, tau) = allocation_generic(&u, z[13], z[14], self.constants.arm_length);
        let xd = rigid_body_rhs(&z[..STATE_DIM], f, &tau, self.constants);
        std::array::from_fn(|i| if i < STATE_DIM { xd[i] } else { T::cst(0.0) })
    }
}

pub struct QuadrotorOutput<'a> {
    pub model: MeasurementModel,
    pub constants: &'a PhysicalConstants,
    pub input: FrozenInput,
}

impl OutputMap<AUG_DIM> for QuadrotorOutput<'_> {
    fn n_out(&self) -> usize {
        self.model.n_out()
    }

    fn eval<T: Scalar>(&self, z: &[T; AUG_DIM], out: &mut Vec<T>) {
        out.clear();
        if self.model.position {
            out.extend_from_slice(&z[0..3]);
        }
        if self.model.orientation {
            out.extend_from_slice(&z[6..10]);
        }
        if self.model.gyro {
            out.extend_from_slice(&z[10..13]);
        }
        if self.model.accelerometer {
            let u = self.input.squared::<T>();
            let (f, _) = allocation_generic(&u, z[13], z[14], self.constants.arm_length);
            let zero = T::cst(0.0);
            out.extend([zero, zero, f.scale(1.0 / self.constants.mass)]);
        }
    }
}

/// Measurement vector at an augmented state (plain evaluation).
pub fn measure(model: &MeasurementModel, constants: &PhysicalConstants, z: &[f64; AUG_DIM], u: &[f64; 4]) -> Vec<f64> {
    let out = QuadrotorOutput {
        model: *model,
        constants,
        input: FrozenInput::from_squared(u, false),
    };
    let mut y = Vec::new();
    out.eval(z, &mut y);
    y
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchoring {
    /// States and inputs from the nominal closed-loop simulation.
    #[default]
    ClosedLoop,
    /// States and inputs reconstructed from the reference by differential flatness.
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservabilityConfig {
    pub order: usize,
    pub segments: usize,
    pub nodes: usize,
    pub model: MeasurementModel,
    /// Include `k_f, k_m` in the state whose observability is scored.
    pub augment_parameters: bool,
    /// Use rotor speeds rather than their squares as inputs.
    pub rotor_speed_inputs: bool,
    /// Column scaling `s`; all ones when absent.
    pub scale: Option<Vec<f64>>,
    pub anchoring: Anchoring,
    /// Add the extra segment anchored at `t = T` (the sum then runs over N+1 terms).
    pub terminal_segment: bool,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        Self {
            order: 2,
            segments: 40,
            nodes: 5,
            model: MeasurementModel::default(),
            augment_parameters: true,
            rotor_speed_inputs: true,
            scale: None,
            anchoring: Anchoring::ClosedLoop,
            terminal_segment: false,
        }
    }
}

impl ObservabilityConfig {
    pub fn n_states(&self) -> usize {
        if self.augment_parameters {
            AUG_DIM
        } else {
            STATE_DIM
        }
    }

    pub fn scale_vector(&self) -> Result<Vec<f64>> {
        match &self.scale {
            Some(s) if s.len() != self.n_states() => Err(Error::Dimension {
                expected: self.n_states(),
                got: s.len(),
            }),
            Some(s) => Ok(s.clone()),
            None => Ok(vec![1.0; self.n_states()]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.segments == 0 {
            return Err(Error::domain("at least one observability segment is required"));
        }
        if self.order > MAX_ORDER {
            return Err(Error::domain(format!("Taylor order above {MAX_ORDER}")));
        }
        if self.nodes < 3 || self.nodes.is_multiple_of(2) {
            return Err(Error::domain("quadrature nodes must be odd and >= 3"));
        }
        self.scale_vector().map(|_| ())
    }
}

/// Anchor of one segment: augmented state and applied squared rotor speeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub t: f64,
    pub z: [f64; AUG_DIM],
    pub u: [f64; 4],
}

/// Segment Gramian of the quadrotor model for one anchor.
pub fn quadrotor_segment(
    cfg: &ObservabilityConfig,
    constants: &PhysicalConstants,
    anchor: &Anchor,
    horizon: f64,
    scale: &[f64],
) -> Result<DMatrix<f64>> {
    let input = FrozenInput::from_squared(&anchor.u, cfg.rotor_speed_inputs);
    let field = QuadrotorField { constants, input };
    let output = QuadrotorOutput {
        model: cfg.model,
        constants,
        input,
    };
    let stack = lie_stack(&field, &output, &anchor.z, cfg.order)?;
    let grads: Vec<DMatrix<f64>> = if cfg.augment_parameters {
        stack.grads
    } else {
        stack
            .grads
            .iter()
            .map(|g| g.columns(0, STATE_DIM).into_owned())
            .collect()
    };
    segment_gramian(&grads, horizon, cfg.nodes, scale)
}

/// Anchors at `t_k = t0 + kΔt` taken from a simulated trace (nearest sample).
pub fn closed_loop_anchors(trace: &SimTrace, p: &ParamVector, cfg: &ObservabilityConfig) -> Result<Vec<Anchor>> {
    if trace.len() < 2 {
        return Err(Error::Missing("observability needs a simulated trace".into()));
    }
    let t0 = trace.times[0];
    let dt = trace.duration() / cfg.segments as f64;
    let count = cfg.segments + cfg.terminal_segment as usize;
    (0..count)
        .map(|k| {
            let t = t0 + k as f64 * dt;
            let idx = nearest(&trace.times, t);
            let x = trace.states[idx].to_array();
            Ok(Anchor {
                t,
                z: augment(&x, p),
                u: trace.inputs[idx].0,
            })
        })
        .collect()
}

fn nearest(times: &[f64], t: f64) -> usize {
    let i = times.partition_point(|&s| s < t);
    if i == 0 {
        0
    } else if i >= times.len() {
        times.len() - 1
    } else if (times[i] - t).abs() < (t - times[i - 1]).abs() {
        i
    } else {
        i - 1
    }
}

fn augment(x: &[f64; STATE_DIM], p: &ParamVector) -> [f64; AUG_DIM] {
    std::array::from_fn(|i| match i {
        i if i < STATE_DIM => x[i],
        13 => p.kf,
        _ => p.km,
    })
}

/// Flat-output map: state and squared rotor speeds that realize the reference
/// exactly (no tracking error), at parameters `p`.
pub fn flat_state(
    traj: &PiecewiseBezier,
    t: f64,
    p: &ParamVector,
    c: &PhysicalConstants,
) -> Result<([f64; STATE_DIM], [f64; 4])> {
    type Attitude = (nalgebra::Matrix3<f64>, nalgebra::Vector3<f64>, Vec<Vec<f64>>);
    let attitude = |t: f64| -> Result<Attitude> {
        let d = traj.evaluate_upto(t, 3)?;
        let acc = nalgebra::Vector3::new(d[2][0], d[2][1], d[2][2] + c.gravity);
        let r = desired_attitude(&(c.mass * acc), d[0][3], 1e-9)?;
        Ok((r, acc, d))
    };
    let (r, acc, d) = attitude(t)?;
    let omega = |t: f64| -> Result<nalgebra::Vector3<f64>> {
        let (r, acc, d) = attitude(t)?;
        let jerk = nalgebra::Vector3::new(d[3][0], d[3][1], d[3][2]);
        let zb = r.column(2).into_owned();
        let a = acc.norm();
        let h = (jerk - zb * zb.dot(&jerk)) / a;
        let yaw_rate = d[1][3];
        Ok(nalgebra::Vector3::new(
            -h.dot(&r.column(1)),
            h.dot(&r.column(0)),
            yaw_rate * zb[2],
        ))
    };
    let w = omega(t)?;
    let (lo, hi) = (traj.start_time(), traj.end_time());
    let eps = 1e-4;
    let (ta, tb) = ((t - eps).max(lo), (t + eps).min(hi));
    let w_dot = (omega(tb)? - omega(ta)?) / (tb - ta);
    let jw = c.inertia * w;
    let tau = c.inertia * w_dot + w.cross(&jw);
    let thrust = c.mass * acc.norm();
    let u = allocation_inverse_raw(thrust, &tau, p, c.arm_length);
    let q = quaternion_from_matrix(&r);
    let x = [
        d[0][0], d[0][1], d[0][2], d[1][0], d[1][1], d[1][2], q[0], q[1], q[2], q[3], w[0], w[1], w[2],
    ];
    Ok((x, u))
}

/// Anchors reconstructed from the reference trajectory.
pub fn reference_anchors(
    traj: &PiecewiseBezier,
    horizon: f64,
    p: &ParamVector,
    c: &PhysicalConstants,
    cfg: &ObservabilityConfig,
) -> Result<Vec<Anchor>> {
    let dt = horizon / cfg.segments as f64;
    let count = cfg.segments + cfg.terminal_segment as usize;
    (0..count)
        .map(|k| {
            let t = traj.start_time() + k as f64 * dt;
            let (x, u) = flat_state(traj, t, p, c)?;
            Ok(Anchor {
                t,
                z: augment(&x, p),
                u,
            })
        })
        .collect()
}

/// Builds `W̃_O` from anchors; segments are computed in parallel and summed in
/// anchor order so the result does not depend on scheduling.
pub fn e2log_from_anchors(
    anchors: &[Anchor],
    segment: f64,
    cfg: &ObservabilityConfig,
    constants: &PhysicalConstants,
) -> Result<GramianAccumulator> {
    cfg.validate()?;
    let scale = cfg.scale_vector()?;
    let parts: Vec<DMatrix<f64>> = anchors
        .par_iter()
        .map(|a| quadrotor_segment(cfg, constants, a, segment, &scale))
        .collect::<Result<_>>()?;
    let mut acc = GramianAccumulator::new(scale);
    for w in &parts {
        acc.add(w);
    }
    Ok(acc)
}

/// E²LOG of a trajectory given its nominal closed-loop trace.
pub fn e2log(
    trace: &SimTrace,
    traj: &PiecewiseBezier,
    p_c: &ParamVector,
    constants: &PhysicalConstants,
    cfg: &ObservabilityConfig,
) -> Result<GramianAccumulator> {
    let anchors = match cfg.anchoring {
        Anchoring::ClosedLoop => closed_loop_anchors(trace, p_c, cfg)?,
        Anchoring::Reference => reference_anchors(traj, trace.duration(), p_c, constants, cfg)?,
    };
    let segment = trace.duration() / cfg.segments as f64;
    e2log_from_anchors(&anchors, segment, cfg, constants)
}
