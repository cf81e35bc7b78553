//! Explicit ODE integrators: fixed-step classical RK4 and adaptive
//! Dormand–Prince 5(4). Both hit every requested output time exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    Dopri5,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub method: Method,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Step size of the fixed-step method, s.
    pub step: f64,
    /// Output sample interval, s.
    pub sample_interval: f64,
    /// Upper bound on accepted + rejected steps of the adaptive method.
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            step: 1e-3,
            sample_interval: 1e-2,
            max_steps: 5_000_000,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.step > 0.0 && self.sample_interval > 0.0) {
            return Err(Error::domain("integrator tolerances and steps must be positive"));
        }
        Ok(())
    }
}

/// A first-order system `ẏ = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
    /// Projection applied after every accepted step (e.g. renormalization).
    fn post_step(&mut self, _y: &mut [f64]) {}
    /// Rejects states that are finite but physically meaningless.
    fn check(&self, y: &[f64]) -> std::result::Result<(), String> {
        if y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err("non-finite state".into())
        }
    }
}

/// Integrates from `y0` at `times[0]` and calls `observe` at every entry of
/// `times` (including the first).
pub fn integrate<S: OdeSystem>(
    sys: &mut S,
    y0: &[f64],
    times: &[f64],
    opts: &IntegratorOptions,
    mut observe: impl FnMut(f64, &[f64]) -> Result<()>,
) -> Result<()> {
    opts.validate()?;
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y0.len(),
        });
    }
    let Some(&t_first) = times.first() else {
        return Ok(());
    };
    let mut y = y0.to_vec();
    sys.check(&y)
        .map_err(|reason| Error::SimulationDiverged { t: t_first, reason })?;
    observe(t_first, &y)?;
    let mut t = t_first;
    match opts.method {
        Method::Rk4 => {
            let mut ws = Rk4Work::new(n);
            for &t_next in &times[1..] {
                let span = t_next - t;
                let n_sub = ((span / opts.step) - 1e-9).ceil().max(1.0) as usize;
                let h = span / n_sub as f64;
                for k in 0..n_sub {
                    let ts = t + k as f64 * h;
                    rk4_step(sys, ts, h, &mut y, &mut ws).map_err(|e| diverged_at(e, ts))?;
                    sys.post_step(&mut y);
                    sys.check(&y)
                        .map_err(|reason| Error::SimulationDiverged { t: ts, reason })?;
                }
                t = t_next;
                observe(t, &y)?;
            }
        }
        Method::Dopri5 => {
            let mut dp = Dopri::new(n, opts);
            let mut steps = 0usize;
            for &t_next in &times[1..] {
                while t < t_next {
                    steps += 1;
                    if steps > opts.max_steps {
                        return Err(Error::SimulationDiverged {
                            t,
                            reason: "adaptive step budget exhausted".into(),
                        });
                    }
                    let remaining = t_next - t;
                    let last = dp.h >= remaining * (1.0 - 1e-12);
                    let h = if last { remaining } else { dp.h };
                    let accepted = dp.step(sys, t, h, &mut y).map_err(|e| diverged_at(e, t))?;
                    if accepted {
                        t = if last { t_next } else { t + h };
                        sys.post_step(&mut y);
                        sys.check(&y)
                            .map_err(|reason| Error::SimulationDiverged { t, reason })?;
                    }
                    if dp.h < 1e-12 * t_next.abs().max(1.0) {
                        return Err(Error::SimulationDiverged {
                            t,
                            reason: "step size underflow".into(),
                        });
                    }
                }
                observe(t, &y)?;
            }
        }
    }
    Ok(())
}

fn diverged_at(e: Error, t: f64) -> Error {
    match e {
        Error::SimulationDiverged { .. } => e,
        other => Error::SimulationDiverged {
            t,
            reason: other.to_string(),
        },
    }
}

struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn rk4_step<S: OdeSystem>(sys: &mut S, t: f64, h: f64, y: &mut [f64], w: &mut Rk4Work) -> Result<()> {
    let n = y.len();
    sys.rhs(t, y, &mut w.k1)?;
    for i in 0..n {
        w.tmp[i] = y[i] + 0.5 * h * w.k1[i];
    }
    sys.rhs(t + 0.5 * h, &w.tmp, &mut w.k2)?;
    for i in 0..n {
        w.tmp[i] = y[i] + 0.5 * h * w.k2[i];
    }
    sys.rhs(t + 0.5 * h, &w.tmp, &mut w.k3)?;
    for i in 0..n {
        w.tmp[i] = y[i] + h * w.k3[i];
    }
    sys.rhs(t + h, &w.tmp, &mut w.k4)?;
    for i in 0..n {
        y[i] += h / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Dopri {
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    y5: Vec<f64>,
    h: f64,
    abs_tol: f64,
    rel_tol: f64,
}

impl Dopri {
    fn new(n: usize, opts: &IntegratorOptions) -> Self {
        Self {
            k: vec![vec![0.0; n]; 7],
            tmp: vec![0.0; n],
            y5: vec![0.0; n],
            h: opts.step.min(opts.sample_interval),
            abs_tol: opts.abs_tol,
            rel_tol: opts.rel_tol,
        }
    }

    /// Attempts one step of size `h`; updates `self.h` for the next try.
    fn step<S: OdeSystem>(&mut self, sys: &mut S, t: f64, h: f64, y: &mut [f64]) -> Result<bool> {
        let n = y.len();
        sys.rhs(t, y, &mut self.k[0])?;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for j in 0..s {
                    acc += h * A[s][j] * self.k[j][i];
                }
                self.tmp[i] = acc;
            }
            sys.rhs(t + C[s] * h, &self.tmp, &mut self.k[s])?;
        }
        let mut err = 0.0;
        for i in 0..n {
            let mut y5 = y[i];
            let mut e = 0.0;
            for s in 0..7 {
                y5 += h * B5[s] * self.k[s][i];
                e += h * (B5[s] - B4[s]) * self.k[s][i];
            }
            self.y5[i] = y5;
            let sc = self.abs_tol + self.rel_tol * y[i].abs().max(y5.abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        let ok = err <= 1.0 && err.is_finite();
        let factor = if err == 0.0 {
            5.0
        } else if err.is_finite() {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            0.2
        };
        if ok {
            y.copy_from_slice(&self.y5);
            // A step clipped to an output time should not shrink future steps.
            self.h = self.h.max(h * factor);
        } else {
            self.h = h * factor;
        }
        Ok(ok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay {
        a: f64,
    }

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = self.a * y[0];
            dy[1] = y[0];
            Ok(())
        }
    }

    struct Blowup;

    impl OdeSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[0] * y[0];
            Ok(())
        }
    }

    fn run(method: Method, tol: f64) -> Vec<(f64, Vec<f64>)> {
        let opts = IntegratorOptions {
            method,
            abs_tol: tol,
            rel_tol: tol,
            step: 1e-3,
            sample_interval: 0.1,
            ..Default::default()
        };
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let mut out = Vec::new();
        integrate(&mut Decay { a: -1.3 }, &[1.0, 0.0], &times, &opts, |t, y| {
            out.push((t, y.to_vec()));
            Ok(())
        })
        .unwrap();
        out
    }

    #[test]
    fn both_methods_match_closed_form() {
        for (method, tol) in [(Method::Rk4, 1e-12), (Method::Dopri5, 1e-11)] {
            let out = run(method, 1e-12);
            assert_eq!(out.len(), 21);
            for (t, y) in out {
                let exact = (-1.3 * t).exp();
                assert!((y[0] - exact).abs() < tol, "{method:?} t={t} {} {}", y[0], exact);
                assert!((y[1] - (1.0 - exact) / 1.3).abs() < tol);
            }
        }
    }

    #[test]
    fn output_times_are_exact() {
        let out = run(Method::Dopri5, 1e-8);
        for (i, (t, _)) in out.iter().enumerate() {
            assert_eq!(*t, i as f64 * 0.1);
        }
    }

    #[test]
    fn tolerance_refinement_converges() {
        let end = |tol: f64| run(Method::Dopri5, tol).last().unwrap().1[0];
        let exact = (-1.3f64 * 2.0).exp();
        let e1 = (end(1e-6) - exact).abs();
        let e2 = (end(1e-9) - exact).abs();
        assert!(e2 < e1 || e2 < 1e-13);
        assert!(e1 < 1e-5);
    }

    #[test]
    fn blowup_is_reported_with_time() {
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        for method in [Method::Rk4, Method::Dopri5] {
            let opts = IntegratorOptions {
                method,
                ..Default::default()
            };
            let err = integrate(&mut Blowup, &[1.0], &times, &opts, |_, _| Ok(())).unwrap_err();
            match err {
                Error::SimulationDiverged { t, .. } => assert!(t > 0.5 && t < 1.01, "{method:?} {t}"),
                other => panic!("unexpected {other}"),
            }
        }
    }
}
