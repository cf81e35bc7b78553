//! Piecewise Bézier reference trajectories defined by timed way-points.
//!
//! Every way-point fixes `n_jc` joining conditions per dimension (value,
//! first derivative, ...). Each piece then has degree `d = 2·n_jc − 1` so its
//! `d + 1` control points are pinned by the conditions at both ends, which
//! gives `C^(n_jc−1)` continuity at the joints by construction.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of joining conditions accepted (degree 15).
pub const MAX_JOINING_CONDITIONS: usize = 8;

/// A timed way-point: `values[dim][order]` is the `order`-th time derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub values: Vec<Vec<f64>>,
}

impl Waypoint {
    /// Way-point with the given positions and all higher derivatives zero.
    pub fn at_rest(t: f64, position: &[f64], n_jc: usize) -> Self {
        let values = position
            .iter()
            .map(|&p| {
                let mut col = vec![0.0; n_jc];
                col[0] = p;
                col
            })
            .collect();
        Self { t, values }
    }

    pub fn n_dim(&self) -> usize {
        self.values.len()
    }

    pub fn n_jc(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn position(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[0]).collect()
    }
}

#[derive(Clone, Debug)]
struct Piece {
    t0: f64,
    duration: f64,
    /// `hodographs[order][dim]` holds the control points of the `order`-th
    /// time derivative, already divided by `duration^order`.
    hodographs: Vec<Vec<Vec<f64>>>,
}

impl Piece {
    fn control_points(&self) -> &Vec<Vec<f64>> {
        &self.hodographs[0]
    }
}

#[derive(Clone, Debug)]
pub struct PiecewiseBezier {
    pieces: Vec<Piece>,
    times: Vec<f64>,
    n_dim: usize,
    n_jc: usize,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn falling(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64)
}

/// Rows `0..n_jc` map control points to derivatives at s = 0, rows
/// `n_jc..2·n_jc` to derivatives at s = 1 (unit parameter interval).
fn boundary_matrix(n_jc: usize) -> DMatrix<f64> {
    let d = 2 * n_jc - 1;
    let nc = d + 1;
    let mut m = DMatrix::zeros(nc, nc);
    for k in 0..n_jc {
        let lead = falling(d, k);
        for j in 0..=k {
            let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
            m[(k, j)] = lead * sign * binomial(k, j);
            m[(n_jc + k, d - k + j)] = lead * sign * binomial(k, j);
        }
    }
    m
}

fn de_casteljau(points: &[f64], s: f64) -> f64 {
    let mut buf: Vec<f64> = points.to_vec();
    let n = buf.len();
    for level in 1..n {
        for i in 0..n - level {
            buf[i] = (1.0 - s) * buf[i] + s * buf[i + 1];
        }
    }
    buf[0]
}

impl PiecewiseBezier {
    /// Solves for the control points of every piece from the way-points.
    pub fn from_waypoints(waypoints: &[Waypoint]) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::domain("at least two way-points are required"));
        }
        let n_dim = waypoints[0].n_dim();
        let n_jc = waypoints[0].n_jc();
        if n_dim == 0 || n_jc == 0 || n_jc > MAX_JOINING_CONDITIONS {
            return Err(Error::domain(format!("unsupported way-point shape {n_dim}x{n_jc}")));
        }
        for w in waypoints {
            if w.n_dim() != n_dim || w.values.iter().any(|c| c.len() != n_jc) {
                return Err(Error::domain("inconsistent way-point shapes"));
            }
            if w.values.iter().flatten().any(|v| !v.is_finite()) || !w.t.is_finite() {
                return Err(Error::domain("non-finite way-point entry"));
            }
        }
        let d = 2 * n_jc - 1;
        let lu = boundary_matrix(n_jc).lu();
        let mut pieces = Vec::with_capacity(waypoints.len() - 1);
        for pair in waypoints.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let duration = b.t - a.t;
            if !(duration > 0.0) {
                return Err(Error::domain(format!(
                    "way-point times must be strictly increasing ({} -> {})",
                    a.t, b.t
                )));
            }
            let mut ctrl = Vec::with_capacity(n_dim);
            for dim in 0..n_dim {
                let mut rhs = DVector::zeros(d + 1);
                for k in 0..n_jc {
                    let scale = duration.powi(k as i32);
                    rhs[k] = a.values[dim][k] * scale;
                    rhs[n_jc + k] = b.values[dim][k] * scale;
                }
                let sol = lu
                    .solve(&rhs)
                    .ok_or_else(|| Error::domain("singular joining-condition system"))?;
                ctrl.push(sol.iter().copied().collect::<Vec<f64>>());
            }
            pieces.push(Piece::new(a.t, duration, ctrl));
        }
        let times = waypoints.iter().map(|w| w.t).collect();
        Ok(Self {
            pieces,
            times,
            n_dim,
            n_jc,
        })
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    pub fn n_jc(&self) -> usize {
        self.n_jc
    }

    pub fn degree(&self) -> usize {
        2 * self.n_jc - 1
    }

    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Control points `[dim][j]` of piece `i`.
    pub fn control_points(&self, i: usize) -> &Vec<Vec<f64>> {
        self.pieces[i].control_points()
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (t0, t1) = (self.start_time(), self.end_time());
        let slack = 1e-12 * (t1 - t0).abs().max(1.0);
        if !(t >= t0 - slack && t <= t1 + slack) {
            return Err(Error::domain(format!("t = {t} outside [{t0}, {t1}]")));
        }
        let t = t.clamp(t0, t1);
        let idx = match self.times[1..].iter().position(|&tb| t < tb) {
            Some(i) => i,
            None => self.pieces.len() - 1,
        };
        let p = &self.pieces[idx];
        Ok((idx, ((t - p.t0) / p.duration).clamp(0.0, 1.0)))
    }

    /// `order`-th time derivative at `t`, one entry per dimension.
    pub fn evaluate(&self, t: f64, order: usize) -> Result<Vec<f64>> {
        let (idx, s) = self.locate(t)?;
        let p = &self.pieces[idx];
        if order > self.degree() {
            return Ok(vec![0.0; self.n_dim]);
        }
        Ok(p.hodographs[order].iter().map(|pts| de_casteljau(pts, s)).collect())
    }

    /// Derivatives `0..=max_order` at `t`, indexed `[order][dim]`.
    pub fn evaluate_upto(&self, t: f64, max_order: usize) -> Result<Vec<Vec<f64>>> {
        let (idx, s) = self.locate(t)?;
        let p = &self.pieces[idx];
        Ok((0..=max_order)
            .map(|k| {
                if k > self.degree() {
                    vec![0.0; self.n_dim]
                } else {
                    p.hodographs[k].iter().map(|pts| de_casteljau(pts, s)).collect()
                }
            })
            .collect())
    }

    /// Writes `t, <dims>, <dims>_d1, ...` rows sampled every `dt`.
    pub fn to_csv(&self, dt: f64, max_order: usize) -> Result<String> {
        let names: Vec<String> = if self.n_dim == 4 {
            ["x", "y", "z", "yaw"].iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.n_dim).map(|i| format!("q{i}")).collect()
        };
        let mut out = String::from("t");
        for k in 0..=max_order {
            for n in &names {
                if k == 0 {
                    write!(out, ",{n}").unwrap();
                } else {
                    write!(out, ",{n}_d{k}").unwrap();
                }
            }
        }
        out.push('\n');
        for t in sample_times(self.start_time(), self.end_time(), dt) {
            write!(out, "{t}").unwrap();
            for row in self.evaluate_upto(t, max_order)? {
                for v in row {
                    write!(out, ",{v}").unwrap();
                }
            }
            out.push('\n');
        }
        Ok(out)
    }
}

impl Piece {
    fn new(t0: f64, duration: f64, ctrl: Vec<Vec<f64>>) -> Self {
        let d = ctrl[0].len() - 1;
        let mut hodographs = vec![ctrl];
        for k in 1..=d {
            let prev = &hodographs[k - 1];
            let deg = (d - k + 1) as f64;
            let next = prev
                .iter()
                .map(|pts| pts.windows(2).map(|w| deg * (w[1] - w[0]) / duration).collect())
                .collect();
            hodographs.push(next);
        }
        Self {
            t0,
            duration,
            hodographs,
        }
    }
}

/// Uniform grid `t0, t0 + dt, ...` that always ends exactly on `t1`.
pub fn sample_times(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let mut v: Vec<f64> = (0..n).map(|i| t0 + i as f64 * dt).collect();
    v.push(t1);
    v
}

/// Whether interior way-point derivatives are decision variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteriorMode {
    /// Interior positions are free; higher derivatives are pinned to zero.
    ZeroHigher,
    /// All joining conditions of interior way-points are free.
    Free,
}

/// Decision vector `a` plus the fixed parts of the way-point sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub free: Vec<f64>,
    pub head: Waypoint,
    pub tail: Waypoint,
    /// Times of the interior way-points.
    pub interior_times: Vec<f64>,
    pub mode: InteriorMode,
}

impl TrajectoryParams {
    pub fn n_dim(&self) -> usize {
        self.head.n_dim()
    }

    pub fn n_jc(&self) -> usize {
        self.head.n_jc()
    }

    /// Number of free values contributed by one interior way-point.
    pub fn per_waypoint(&self) -> usize {
        match self.mode {
            InteriorMode::ZeroHigher => self.n_dim(),
            InteriorMode::Free => self.n_dim() * self.n_jc(),
        }
    }

    pub fn expected_len(&self) -> usize {
        self.interior_times.len() * self.per_waypoint()
    }

    /// Uniform way-point times over `[t0, t0 + duration]` with `n_pieces` pieces
    /// and interior way-points initialised to the given positions.
    pub fn uniform(
        head: Waypoint,
        tail_position: &[f64],
        duration: f64,
        interior_positions: &[Vec<f64>],
        mode: InteriorMode,
    ) -> Result<Self> {
        let n_pieces = interior_positions.len() + 1;
        let n_jc = head.n_jc();
        let t0 = head.t;
        let dt = duration / n_pieces as f64;
        let interior_times: Vec<f64> = (1..n_pieces).map(|i| t0 + dt * i as f64).collect();
        let tail = Waypoint::at_rest(t0 + duration, tail_position, n_jc);
        let mut wps = vec![head.clone()];
        for (t, p) in interior_times.iter().zip(interior_positions) {
            wps.push(Waypoint::at_rest(*t, p, n_jc));
        }
        wps.push(tail.clone());
        let template = Self {
            free: Vec::new(),
            head,
            tail,
            interior_times,
            mode,
        };
        Self::pack(&wps, &template)
    }

    /// Rebuilds the full way-point sequence.
    pub fn unpack(&self) -> Result<Vec<Waypoint>> {
        if self.free.len() != self.expected_len() {
            return Err(Error::Dimension {
                expected: self.expected_len(),
                got: self.free.len(),
            });
        }
        let (n_dim, n_jc) = (self.n_dim(), self.n_jc());
        if self.tail.n_dim() != n_dim || self.tail.n_jc() != n_jc {
            return Err(Error::domain("head and tail way-points differ in shape"));
        }
        let mut out = Vec::with_capacity(self.interior_times.len() + 2);
        out.push(self.head.clone());
        let per = self.per_waypoint();
        for (i, &t) in self.interior_times.iter().enumerate() {
            let chunk = &self.free[i * per..(i + 1) * per];
            let values = (0..n_dim)
                .map(|d| match self.mode {
                    InteriorMode::ZeroHigher => {
                        let mut col = vec![0.0; n_jc];
                        col[0] = chunk[d];
                        col
                    }
                    InteriorMode::Free => chunk[d * n_jc..(d + 1) * n_jc].to_vec(),
                })
                .collect();
            out.push(Waypoint { t, values });
        }
        out.push(self.tail.clone());
        Ok(out)
    }

    /// Extracts the free variables of `waypoints` using `template` for the
    /// fixed parts (head, tail, times, mode).
    pub fn pack(waypoints: &[Waypoint], template: &TrajectoryParams) -> Result<Self> {
        let n_int = template.interior_times.len();
        if waypoints.len() != n_int + 2 {
            return Err(Error::Dimension {
                expected: n_int + 2,
                got: waypoints.len(),
            });
        }
        let (n_dim, n_jc) = (template.n_dim(), template.n_jc());
        let mut free = Vec::with_capacity(template.expected_len());
        for w in &waypoints[1..=n_int] {
            if w.n_dim() != n_dim || w.n_jc() != n_jc {
                return Err(Error::domain("way-point shape mismatch"));
            }
            match template.mode {
                InteriorMode::ZeroHigher => free.extend(w.values.iter().map(|c| c[0])),
                InteriorMode::Free => free.extend(w.values.iter().flatten().copied()),
            }
        }
        Ok(Self {
            free,
            head: waypoints[0].clone(),
            tail: waypoints[n_int + 1].clone(),
            interior_times: waypoints[1..=n_int].iter().map(|w| w.t).collect(),
            mode: template.mode,
        })
    }

    pub fn with_free(&self, free: &[f64]) -> Self {
        let mut next = self.clone();
        next.free = free.to_vec();
        next
    }

    pub fn to_bezier(&self) -> Result<PiecewiseBezier> {
        PiecewiseBezier::from_waypoints(&self.unpack()?)
    }

    pub fn duration(&self) -> f64 {
        self.tail.t - self.head.t
    }

    /// Box bounds for each free variable: positions use `lower/upper`
    /// (one per dimension); derivative orders `k ≥ 1` use `±higher[k-1]`.
    pub fn bounds(&self, lower: &[f64], upper: &[f64], higher: &[f64]) -> Result<Vec<(f64, f64)>> {
        let (n_dim, n_jc) = (self.n_dim(), self.n_jc());
        if lower.len() != n_dim || upper.len() != n_dim {
            return Err(Error::Dimension {
                expected: n_dim,
                got: lower.len().min(upper.len()),
            });
        }
        let mut out = Vec::with_capacity(self.expected_len());
        for _ in &self.interior_times {
            for d in 0..n_dim {
                out.push((lower[d], upper[d]));
                if self.mode == InteriorMode::Free {
                    for k in 1..n_jc {
                        let h = higher.get(k - 1).copied().unwrap_or(f64::INFINITY);
                        out.push((-h, h));
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wp(t: f64, values: Vec<Vec<f64>>) -> Waypoint {
        Waypoint { t, values }
    }

    #[test]
    fn single_condition_gives_line() {
        let traj = PiecewiseBezier::from_waypoints(&[
            wp(0.0, vec![vec![1.0], vec![-2.0]]),
            wp(2.0, vec![vec![3.0], vec![4.0]]),
        ])
        .unwrap();
        assert_eq!(traj.degree(), 1);
        assert_eq!(traj.evaluate(1.0, 0).unwrap(), vec![2.0, 1.0]);
        assert_eq!(traj.evaluate(0.5, 1).unwrap(), vec![1.0, 3.0]);
        assert_eq!(traj.evaluate(0.5, 2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn constant_curve_for_identical_rest_points() {
        let traj = PiecewiseBezier::from_waypoints(&[
            Waypoint::at_rest(0.0, &[1.5, -0.5], 2),
            Waypoint::at_rest(3.0, &[1.5, -0.5], 2),
        ])
        .unwrap();
        for dim in traj.control_points(0) {
            assert!(dim.iter().all(|&c| (c - dim[0]).abs() < 1e-15));
        }
    }

    #[test]
    fn beyond_degree_is_zero() {
        let traj =
            PiecewiseBezier::from_waypoints(&[wp(0.0, vec![vec![0.0, 1.0, 2.0]]), wp(1.0, vec![vec![5.0, -1.0, 0.5]])])
                .unwrap();
        assert_eq!(traj.degree(), 5);
        assert_eq!(traj.evaluate(0.3, 6).unwrap(), vec![0.0]);
        assert_eq!(traj.evaluate(0.3, 9).unwrap(), vec![0.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PiecewiseBezier::from_waypoints(&[Waypoint::at_rest(0.0, &[0.0], 1)]).is_err());
        let dup = [Waypoint::at_rest(1.0, &[0.0], 2), Waypoint::at_rest(1.0, &[1.0], 2)];
        assert!(matches!(PiecewiseBezier::from_waypoints(&dup), Err(Error::Domain(_))));
        let traj =
            PiecewiseBezier::from_waypoints(&[Waypoint::at_rest(0.0, &[0.0], 2), Waypoint::at_rest(1.0, &[1.0], 2)])
                .unwrap();
        assert!(traj.evaluate(1.5, 0).is_err());
        assert!(traj.evaluate(-0.1, 0).is_err());
    }

    #[test]
    fn params_round_trip_and_empty() {
        let head = Waypoint::at_rest(0.0, &[0.0, 0.0, 0.0, 0.0], 3);
        let p = TrajectoryParams::uniform(head.clone(), &[1.0, 2.0, 0.5, 0.0], 10.0, &[], InteriorMode::ZeroHigher)
            .unwrap();
        assert!(p.free.is_empty());
        assert_eq!(p.unpack().unwrap().len(), 2);

        let interior = vec![vec![0.3, 0.4, 0.1, 0.2], vec![0.6, 1.2, 0.3, -0.1]];
        let p = TrajectoryParams::uniform(head, &[1.0, 2.0, 0.5, 0.0], 9.0, &interior, InteriorMode::Free).unwrap();
        assert_eq!(p.free.len(), 2 * 4 * 3);
        assert_eq!(p.interior_times, vec![3.0, 6.0]);
        let back = TrajectoryParams::pack(&p.unpack().unwrap(), &p).unwrap();
        assert_eq!(back, p);
        assert!(p.with_free(&[0.0; 3]).unpack().is_err());
    }

    #[test]
    fn bounds_layout() {
        let head = Waypoint::at_rest(0.0, &[0.0, 0.0], 2);
        let p = TrajectoryParams::uniform(head, &[1.0, 1.0], 2.0, &[vec![0.5, 0.5]], InteriorMode::Free).unwrap();
        let b = p.bounds(&[-1.0, -2.0], &[1.0, 2.0], &[3.0]).unwrap();
        assert_eq!(b, vec![(-1.0, 1.0), (-3.0, 3.0), (-2.0, 2.0), (-3.0, 3.0)]);
    }

    fn random_waypoints(n_jc: usize, vals: &[f64], n_wp: usize, n_dim: usize) -> Vec<Waypoint> {
        let mut it = vals.iter().cycle();
        (0..n_wp)
            .map(|i| Waypoint {
                t: 0.7 * i as f64 + 0.1 * (i * i) as f64,
                values: (0..n_dim)
                    .map(|_| (0..n_jc).map(|_| *it.next().unwrap()).collect())
                    .collect(),
            })
            .collect()
    }

    proptest! {
        #[test]
        fn boundary_conditions_reproduced(n_jc in 1usize..=4,
                                          vals in prop::collection::vec(-3.0..3.0f64, 40)) {
            let wps = random_waypoints(n_jc, &vals, 4, 2);
            let traj = PiecewiseBezier::from_waypoints(&wps).unwrap();
            for w in &wps {
                for k in 0..n_jc {
                    let got = traj.evaluate(w.t, k).unwrap();
                    for d in 0..2 {
                        prop_assert!((got[d] - w.values[d][k]).abs() <= 1e-9 * (1.0 + w.values[d][k].abs()));
                    }
                }
            }
        }

        #[test]
        fn joints_are_continuous(n_jc in 1usize..=4,
                                 vals in prop::collection::vec(-3.0..3.0f64, 40)) {
            let wps = random_waypoints(n_jc, &vals, 4, 2);
            let traj = PiecewiseBezier::from_waypoints(&wps).unwrap();
            let d = traj.degree();
            for i in 1..wps.len() - 1 {
                for k in 0..d {
                    // Evaluate each side with its own piece at the joint.
                    let left = &traj.pieces[i - 1];
                    let right = &traj.pieces[i];
                    for dim in 0..2 {
                        let l = de_casteljau(&left.hodographs[k][dim], 1.0);
                        let r = de_casteljau(&right.hodographs[k][dim], 0.0);
                        // Only orders below n_jc are pinned by construction.
                        if k < n_jc {
                            prop_assert!((l - r).abs() <= 1e-9 * (1.0 + l.abs()));
                        }
                    }
                }
            }
        }

        #[test]
        fn derivative_matches_finite_difference(vals in prop::collection::vec(-3.0..3.0f64, 40),
                                                frac in 0.05..0.95f64, order in 1usize..=3) {
            let wps = random_waypoints(3, &vals, 3, 2);
            let traj = PiecewiseBezier::from_waypoints(&wps).unwrap();
            let t = traj.start_time() + frac * (traj.end_time() - traj.start_time());
            let h = 1e-5;
            let fp = traj.evaluate(t + h, order - 1).unwrap();
            let fm = traj.evaluate(t - h, order - 1).unwrap();
            let exact = traj.evaluate(t, order).unwrap();
            let scale = exact.iter().chain(fp.iter()).fold(1.0f64, |a, b| a.max(b.abs()));
            for dim in 0..2 {
                let fd = (fp[dim] - fm[dim]) / (2.0 * h);
                prop_assert!((fd - exact[dim]).abs() <= 1e-6 * scale);
            }
        }

        #[test]
        fn convex_hull(vals in prop::collection::vec(-3.0..3.0f64, 40), s in 0.0..1.0f64) {
            let wps = random_waypoints(3, &vals, 3, 2);
            let traj = PiecewiseBezier::from_waypoints(&wps).unwrap();
            for i in 0..traj.n_pieces() {
                let piece = &traj.pieces[i];
                let t = piece.t0 + s * piece.duration;
                let v = traj.evaluate(t.min(traj.end_time()), 0).unwrap();
                let (_, s_loc) = traj.locate(t.min(traj.end_time())).unwrap();
                let (idx, _) = traj.locate(t.min(traj.end_time())).unwrap();
                let ctrl = traj.control_points(idx);
                for dim in 0..2 {
                    let lo = ctrl[dim].iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = ctrl[dim].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(v[dim] >= lo - 1e-12 && v[dim] <= hi + 1e-12, "s = {}", s_loc);
                }
            }
        }

        #[test]
        fn pack_unpack_identity(vals in prop::collection::vec(-3.0..3.0f64, 24)) {
            let head = Waypoint::at_rest(0.0, &[0.0, 0.0, 0.0, 0.0], 3);
            let interior = vec![vals[0..4].to_vec(), vals[4..8].to_vec()];
            for mode in [InteriorMode::ZeroHigher, InteriorMode::Free] {
                let p = TrajectoryParams::uniform(head.clone(), &vals[8..12], 6.0, &interior, mode).unwrap();
                let p = p.with_free(&vals[..p.expected_len()]);
                let back = TrajectoryParams::pack(&p.unpack().unwrap(), &p).unwrap();
                prop_assert_eq!(&back, &p);
                // Unpacked positions stay inside the box the free vector satisfied.
                let bounds = p.bounds(&[-3.0; 4], &[3.0; 4], &[3.0, 3.0]).unwrap();
                prop_assert!(p.free.iter().zip(&bounds).all(|(v, (lo, hi))| v >= lo && v <= hi));
                for w in &p.unpack().unwrap()[1..3] {
                    prop_assert!(w.values.iter().all(|c| c[0] >= -3.0 && c[0] <= 3.0));
                }
            }
        }
    }
}
