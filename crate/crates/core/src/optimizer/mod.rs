//! Derivative-free constrained minimization over a box.
//!
//! The primary solver builds linear models of the objective and constraints
//! on a simplex and takes trust-region steps from a small linear program. A
//! Nelder–Mead search that ranks infeasible points behind feasible ones is
//! kept as a fallback.

mod lp;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Cobyla,
    NelderMead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub solver: Solver,
    /// Total objective evaluations, including the start point (at least one).
    pub max_evals: usize,
    pub rho_begin: f64,
    pub rho_end: f64,
    /// Largest constraint value still counted as feasible.
    pub ctol: f64,
    /// Evaluations without progress before stopping.
    pub stall_evals: usize,
    /// Relative decrease that counts as progress.
    pub ftol: f64,
    /// Stop once a feasible point reaches this objective value.
    pub f_target: Option<f64>,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            solver: Solver::Cobyla,
            max_evals: 200,
            rho_begin: 0.5,
            rho_end: 1e-4,
            ctol: 1e-6,
            stall_evals: 60,
            ftol: 1e-9,
            f_target: None,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_begin > 0.0 && self.rho_end > 0.0 && self.rho_end <= self.rho_begin) {
            return Err(Error::domain("need 0 < rho_end <= rho_begin"));
        }
        if !(self.ctol >= 0.0 && self.ftol >= 0.0) {
            return Err(Error::domain("tolerances must be non-negative"));
        }
        if self.stall_evals == 0 {
            return Err(Error::domain("stall_evals must be positive"));
        }
        Ok(())
    }
}

/// Objective value and constraint values; the point is feasible when every
/// constraint is `≤ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    pub constraints: Vec<f64>,
}

impl Evaluation {
    pub fn unconstrained(f: f64) -> Self {
        Self {
            f,
            constraints: Vec::new(),
        }
    }

    pub fn violation(&self) -> f64 {
        violation(&self.constraints)
    }
}

fn violation(c: &[f64]) -> f64 {
    c.iter()
        .fold(0.0f64, |acc, &v| if v.is_nan() { f64::INFINITY } else { acc.max(v) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::domain("lower bound exceeds upper bound"));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| v.clamp(l, u))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| v >= l && v <= u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Budget,
    Target,
    TrustRegion,
    Stagnation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// `None` for failed evaluations.
    pub f: Option<f64>,
    pub violation: Option<f64>,
    /// Best feasible objective so far.
    pub best: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptRun {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub violation_best: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub history: Vec<HistoryEntry>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
struct Vertex {
    x: Vec<f64>,
    f: f64,
    c: Vec<f64>,
    viol: f64,
}

struct Recorder<'a> {
    func: &'a mut dyn FnMut(&[f64]) -> Evaluation,
    opts: &'a OptimizerOptions,
    history: Vec<HistoryEntry>,
    best: Option<(Vec<f64>, f64, f64)>,
    least_violation: f64,
    last_progress: usize,
    worst_finite: Option<f64>,
    n_constraints: Option<usize>,
}

impl<'a> Recorder<'a> {
    fn evals(&self) -> usize {
        self.history.len()
    }

    fn exhausted(&self) -> bool {
        self.evals() >= self.opts.max_evals.max(1)
    }

    fn reached_target(&self) -> bool {
        match (self.opts.f_target, &self.best) {
            (Some(target), Some((_, f, _))) => *f <= target,
            _ => false,
        }
    }

    fn stalled(&self) -> bool {
        self.evals() - self.last_progress >= self.opts.stall_evals
    }

    fn eval(&mut self, x: &[f64]) -> Vertex {
        let e = (self.func)(x);
        let m = *self.n_constraints.get_or_insert(e.constraints.len());
        let ok = e.f.is_finite() && e.constraints.len() == m && e.constraints.iter().all(|c| c.is_finite());
        let (f, c) = if ok {
            self.worst_finite = Some(self.worst_finite.map_or(e.f, |w| w.max(e.f)));
            (e.f, e.constraints)
        } else {
            // Failed evaluations become finite constraint violations.
            let mut c: Vec<f64> = vec![1.0; m.max(1)];
            for (ci, ei) in c.iter_mut().zip(&e.constraints) {
                if ei.is_finite() {
                    *ci = ei.max(1.0);
                }
            }
            (self.worst_finite.unwrap_or(0.0), c)
        };
        let viol = violation(&c);
        let raw_viol = if ok { viol } else { f64::INFINITY };
        let tol = self.opts.ftol;
        let progress = if raw_viol <= self.opts.ctol {
            match &self.best {
                None => true,
                Some((_, fb, _)) => f < *fb - tol * (1.0 + fb.abs()),
            }
        } else {
            self.best.is_none() && raw_viol < self.least_violation * (1.0 - tol)
        };
        if raw_viol <= self.opts.ctol && self.best.as_ref().is_none_or(|(_, fb, _)| f < *fb) {
            self.best = Some((x.to_vec(), f, raw_viol));
        }
        self.least_violation = self.least_violation.min(raw_viol);
        self.history.push(HistoryEntry {
            f: ok.then_some(f),
            violation: ok.then_some(raw_viol),
            best: self.best.as_ref().map(|b| b.1),
        });
        if progress {
            self.last_progress = self.evals();
        }
        Vertex {
            x: x.to_vec(),
            f,
            c,
            viol,
        }
    }
}

/// Minimizes `func` over `bounds` from `x0` (projected into the box first).
///
/// Returns the best feasible evaluated point. Variables with equal bounds
/// are held fixed. Fails with [`Error::Infeasible`] if no evaluated point
/// satisfies the constraints.
pub fn minimize<F>(mut func: F, x0: &[f64], bounds: &Bounds, opts: &OptimizerOptions) -> Result<OptRun>
where
    F: FnMut(&[f64]) -> Evaluation,
{
    opts.validate()?;
    if bounds.len() != x0.len() {
        return Err(Error::Dimension {
            expected: x0.len(),
            got: bounds.len(),
        });
    }
    let start = Instant::now();
    let full0 = bounds.project(x0);
    let free: Vec<usize> = (0..x0.len()).filter(|&i| bounds.upper[i] > bounds.lower[i]).collect();
    let expand = |z: &[f64]| {
        let mut x = full0.clone();
        for (k, &i) in free.iter().enumerate() {
            x[i] = z[k];
        }
        x
    };
    let sub = Bounds {
        lower: free.iter().map(|&i| bounds.lower[i]).collect(),
        upper: free.iter().map(|&i| bounds.upper[i]).collect(),
    };
    let z0: Vec<f64> = free.iter().map(|&i| full0[i]).collect();
    let mut wrapped = |z: &[f64]| func(&expand(z));
    let mut rec = Recorder {
        func: &mut wrapped,
        opts,
        history: Vec::new(),
        best: None,
        least_violation: f64::INFINITY,
        last_progress: 0,
        worst_finite: None,
        n_constraints: None,
    };
    let (termination, iterations) = match opts.solver {
        Solver::Cobyla => cobyla(&mut rec, &z0, &sub),
        Solver::NelderMead => nelder_mead(&mut rec, &z0, &sub),
    };
    let evaluations = rec.evals();
    let history = std::mem::take(&mut rec.history);
    let least = rec.least_violation;
    let Some((z_best, f_best, violation_best)) = rec.best.take() else {
        return Err(Error::Infeasible { violation: least });
    };
    Ok(OptRun {
        x_best: expand(&z_best),
        f_best,
        violation_best,
        evaluations,
        iterations,
        termination,
        history,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn coordinate_step(x: &[f64], i: usize, rho: f64, b: &Bounds) -> Vec<f64> {
    let mut y = x.to_vec();
    let up = b.upper[i] - x[i];
    let down = x[i] - b.lower[i];
    y[i] = if up >= rho {
        x[i] + rho
    } else if down >= rho {
        x[i] - rho
    } else if up >= down {
        b.upper[i]
    } else {
        b.lower[i]
    };
    y
}

fn initial_simplex(rec: &mut Recorder, x0: &[f64], b: &Bounds, rho: f64) -> Option<Vec<Vertex>> {
    let mut pts = vec![rec.eval(x0)];
    for i in 0..x0.len() {
        if rec.exhausted() || rec.reached_target() {
            return None;
        }
        pts.push(rec.eval(&coordinate_step(x0, i, rho, b)));
    }
    Some(pts)
}

fn stop_reason(rec: &Recorder) -> Termination {
    if rec.reached_target() {
        Termination::Target
    } else {
        Termination::Budget
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Trust-region step for the linear models: first the least achievable
/// linearized violation, then the best linear objective that keeps it.
fn trust_region_step(x: &[f64], gf: &[f64], gc: &[Vec<f64>], c0: &[f64], rho: f64, b: &Bounds) -> Vec<f64> {
    let n = x.len();
    let lo: Vec<f64> = (0..n).map(|j| (-rho).max(b.lower[j] - x[j])).collect();
    let hi: Vec<f64> = (0..n).map(|j| rho.min(b.upper[j] - x[j])).collect();
    let width: Vec<f64> = (0..n).map(|j| (hi[j] - lo[j]).max(0.0)).collect();
    let shifted = |i: usize| c0[i] + dot(&gc[i], &lo);

    let mut allowed = 0.0f64;
    if !gc.is_empty() {
        // Variables (y, t): min t, g_i·y − t ≤ −c_i(lo), y ≤ width.
        let mut a = Vec::new();
        let mut rhs = Vec::new();
        for (i, g) in gc.iter().enumerate() {
            let mut row = g.clone();
            row.push(-1.0);
            a.push(row);
            rhs.push(-shifted(i));
        }
        for j in 0..n {
            let mut row = vec![0.0; n + 1];
            row[j] = 1.0;
            a.push(row);
            rhs.push(width[j]);
        }
        let mut cost = vec![0.0; n + 1];
        cost[n] = 1.0;
        if let lp::LpOutcome::Optimal(y) = lp::solve(&cost, &a, &rhs) {
            allowed = y[n].max(0.0);
        }
    }
    let slack = 1e-12 * (1.0 + allowed);
    let mut a = Vec::new();
    let mut rhs = Vec::new();
    for (i, g) in gc.iter().enumerate() {
        a.push(g.clone());
        rhs.push(allowed + slack - shifted(i));
    }
    for j in 0..n {
        let mut row = vec![0.0; n];
        row[j] = 1.0;
        a.push(row);
        rhs.push(width[j]);
    }
    match lp::solve(gf, &a, &rhs) {
        lp::LpOutcome::Optimal(y) => (0..n).map(|j| lo[j] + y[j].min(width[j])).collect(),
        _ => vec![0.0; n],
    }
}

fn cobyla(rec: &mut Recorder, x0: &[f64], b: &Bounds) -> (Termination, usize) {
    let n = x0.len();
    let opts = rec.opts.clone();
    let mut rho = opts.rho_begin;
    let mut iterations = 0;
    if n == 0 {
        rec.eval(x0);
        return (Termination::TrustRegion, 0);
    }
    let Some(mut pts) = initial_simplex(rec, x0, b, rho) else {
        return (stop_reason(rec), 0);
    };
    let m = pts[0].c.len();
    let mut mu = 0.0f64;
    let mut failures_at_floor = 0;
    loop {
        if rec.reached_target() {
            return (Termination::Target, iterations);
        }
        if rec.exhausted() {
            return (Termination::Budget, iterations);
        }
        if rec.stalled() {
            return (Termination::Stagnation, iterations);
        }
        iterations += 1;
        let merit = |v: &Vertex, mu: f64| v.f + mu * v.viol;
        let pivot = (0..=n)
            .min_by(|&i, &j| {
                let (a, c) = (&pts[i], &pts[j]);
                merit(a, mu).total_cmp(&merit(c, mu)).then(a.viol.total_cmp(&c.viol))
            })
            .unwrap_or(0);
        pts.swap(0, pivot);

        let d = DMatrix::from_fn(n, n, |r, col| pts[r + 1].x[col] - pts[0].x[col]);
        let inv = d.clone().try_inverse().filter(|m| m.iter().all(|v| v.is_finite()));
        let Some(inv) = inv else {
            let Some(fresh) = initial_simplex(rec, &pts[0].x.clone(), b, rho) else {
                return (Termination::Budget, iterations);
            };
            pts = fresh;
            continue;
        };

        // Replace a vertex that has drifted far from the pivot.
        let (far, far_dist) = (1..=n)
            .map(|j| (j, dist_inf(&pts[j].x, &pts[0].x)))
            .fold((0, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if far_dist > 3.0 * rho {
            let col = inv.column(far - 1);
            let norm = col.amax();
            let dir: Vec<f64> = col.iter().map(|v| v / norm).collect();
            let plus: Vec<f64> = (0..n).map(|k| pts[0].x[k] + rho * dir[k]).collect();
            let cand = if b.contains(&plus) {
                plus
            } else {
                b.project(&(0..n).map(|k| pts[0].x[k] - rho * dir[k]).collect::<Vec<_>>())
            };
            if dist_inf(&cand, &pts[0].x) > 0.1 * rho {
                pts[far] = rec.eval(&cand);
                continue;
            }
        }

        let solve = |vals: DVector<f64>| -> Vec<f64> { (&inv * vals).iter().copied().collect() };
        let gf = solve(DVector::from_fn(n, |r, _| pts[r + 1].f - pts[0].f));
        let gc: Vec<Vec<f64>> = (0..m)
            .map(|i| solve(DVector::from_fn(n, |r, _| pts[r + 1].c[i] - pts[0].c[i])))
            .collect();
        let s = trust_region_step(&pts[0].x, &gf, &gc, &pts[0].c, rho, b);
        let v0 = pts[0].viol;
        let vs = violation(
            &gc.iter()
                .enumerate()
                .map(|(i, g)| pts[0].c[i] + dot(g, &s))
                .collect::<Vec<_>>(),
        );
        let df = dot(&gf, &s);
        if v0 - vs > 0.0 && df > 0.0 {
            mu = mu.max(2.0 * df / (v0 - vs));
        }
        let pred = -df + mu * (v0 - vs);
        let m0 = merit(&pts[0], mu);
        let snorm = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if snorm < 0.5 * rho || pred <= 1e-14 * (1.0 + m0.abs()) {
            if gf.iter().all(|&g| g == 0.0) && v0 <= opts.ctol {
                return (Termination::Stagnation, iterations);
            }
            if rho <= opts.rho_end {
                return (Termination::TrustRegion, iterations);
            }
            rho = (0.5 * rho).max(opts.rho_end);
            continue;
        }
        let x_new = b.project(&(0..n).map(|k| pts[0].x[k] + s[k]).collect::<Vec<_>>());
        let new = rec.eval(&x_new);
        let ratio = (m0 - merit(&new, mu)) / pred;

        // Drop the vertex whose replacement keeps the simplex best conditioned.
        let sv = DVector::from_fn(n, |k, _| x_new[k] - pts[0].x[k]);
        let v = inv.transpose() * sv;
        let drop = (1..=n)
            .max_by(|&i, &j| {
                let score = |k: usize| v[k - 1].abs() * (dist_inf(&pts[k].x, &pts[0].x) / rho).max(1.0);
                score(i).total_cmp(&score(j))
            })
            .unwrap_or(1);
        if merit(&new, mu) < m0 {
            // The old pivot stays in the simplex in place of the dropped vertex.
            pts[drop] = new;
        } else if v[drop - 1].abs() > 1e-3 {
            pts[drop] = new;
        }

        if ratio < 0.1 {
            if rho > opts.rho_end {
                rho = (0.5 * rho).max(opts.rho_end);
            } else {
                failures_at_floor += 1;
                if failures_at_floor >= 3 {
                    return (Termination::TrustRegion, iterations);
                }
            }
        } else {
            failures_at_floor = 0;
        }
    }
}

/// Orders vertices with every feasible point ahead of every infeasible one.
fn nm_better(a: &Vertex, b: &Vertex, ctol: f64) -> bool {
    let fa = a.viol <= ctol;
    let fb = b.viol <= ctol;
    match (fa, fb) {
        (true, true) => a.f < b.f,
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.viol < b.viol,
    }
}

fn nelder_mead(rec: &mut Recorder, x0: &[f64], b: &Bounds) -> (Termination, usize) {
    let n = x0.len();
    let opts = rec.opts.clone();
    let ctol = opts.ctol;
    if n == 0 {
        rec.eval(x0);
        return (Termination::TrustRegion, 0);
    }
    let Some(mut pts) = initial_simplex(rec, x0, b, opts.rho_begin) else {
        return (stop_reason(rec), 0);
    };
    let mut iterations = 0;
    let point = |c: &[f64], toward: &[f64], t: f64| -> Vec<f64> {
        b.project(&(0..n).map(|k| c[k] + t * (toward[k] - c[k])).collect::<Vec<_>>())
    };
    loop {
        pts.sort_by(|a, c| {
            if nm_better(a, c, ctol) {
                std::cmp::Ordering::Less
            } else if nm_better(c, a, ctol) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
        let size = (1..=n).fold(0.0f64, |acc, j| acc.max(dist_inf(&pts[j].x, &pts[0].x)));
        if size < opts.rho_end {
            return (Termination::TrustRegion, iterations);
        }
        if rec.reached_target() {
            return (Termination::Target, iterations);
        }
        if rec.exhausted() {
            return (Termination::Budget, iterations);
        }
        if rec.stalled() {
            return (Termination::Stagnation, iterations);
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|k| pts[..n].iter().map(|p| p.x[k]).sum::<f64>() / n as f64)
            .collect();
        let worst = pts[n].x.clone();
        let xr = rec.eval(&point(&centroid, &worst, -1.0));
        if nm_better(&xr, &pts[0], ctol) {
            if rec.exhausted() {
                pts[n] = xr;
                continue;
            }
            let xe = rec.eval(&point(&centroid, &worst, -2.0));
            pts[n] = if nm_better(&xe, &xr, ctol) { xe } else { xr };
            continue;
        }
        if nm_better(&xr, &pts[n - 1], ctol) {
            pts[n] = xr;
            continue;
        }
        if rec.exhausted() {
            continue;
        }
        let outside = nm_better(&xr, &pts[n], ctol);
        let xc = if outside {
            rec.eval(&point(&centroid, &xr.x, 0.5))
        } else {
            rec.eval(&point(&centroid, &worst, 0.5))
        };
        let reference = if outside { &xr } else { &pts[n] };
        if nm_better(&xc, reference, ctol) {
            pts[n] = xc;
            continue;
        }
        let best = pts[0].x.clone();
        for j in 1..=n {
            if rec.exhausted() {
                break;
            }
            pts[j] = rec.eval(&point(&best, &pts[j].x.clone(), 0.5));
        }
    }
}
