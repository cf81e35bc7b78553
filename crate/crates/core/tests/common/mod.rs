#![allow(dead_code, clippy::needless_range_loop)]

use coplan::config::Config;
use coplan::pipeline::Context;
use coplan::quadrotor::ParamVector;
use coplan::trajectory::{InteriorMode, TrajectoryParams, Waypoint};

/// Small, fast configuration for simulation-backed tests.
pub fn quick_config(duration: f64) -> Config {
    let mut cfg = Config::desk();
    cfg.mission.duration = duration;
    cfg
}

pub fn context(cfg: &Config) -> Context {
    Context::from_config(cfg).unwrap()
}

/// Straight line from `a` to `b` with evenly spaced interior way-points.
pub fn line(a: [f64; 4], b: [f64; 4], duration: f64, pieces: usize) -> TrajectoryParams {
    let head = Waypoint::at_rest(0.0, &a, 3);
    let interior: Vec<Vec<f64>> = (1..pieces)
        .map(|i| {
            let s = i as f64 / pieces as f64;
            (0..4).map(|d| a[d] + s * (b[d] - a[d])).collect()
        })
        .collect();
    TrajectoryParams::uniform(head, &b, duration, &interior, InteriorMode::ZeroHigher).unwrap()
}

/// Central finite differences of the closed loop with respect to the plant
/// parameters `(k_f, k_m)`: final state `x(T)` and the time integral of the
/// unclamped rotor commands. Returns one column per parameter.
pub fn fd_closed_loop(ctx: &Context, params: &TrajectoryParams, rel: f64) -> ([[f64; 13]; 2], [[f64; 4]; 2]) {
    let fly = |p: ParamVector| {
        let (_, trace) = ctx.fly(params, p).unwrap();
        let x = trace.final_state().unwrap().to_array();
        let mut u = [0.0; 4];
        for i in 1..trace.len() {
            let dt = trace.times[i] - trace.times[i - 1];
            for c in 0..4 {
                u[c] += 0.5 * dt * (trace.raw_inputs[i][c] + trace.raw_inputs[i - 1][c]);
            }
        }
        (x, u)
    };
    let mut dx = [[0.0; 13]; 2];
    let mut du = [[0.0; 4]; 2];
    for j in 0..2 {
        let (mut plus, mut minus) = (ctx.p_c, ctx.p_c);
        let h = if j == 0 { rel * ctx.p_c.kf } else { rel * ctx.p_c.km };
        if j == 0 {
            plus.kf += h;
            minus.kf -= h;
        } else {
            plus.km += h;
            minus.km -= h;
        }
        let ((xp, up), (xm, um)) = (fly(plus), fly(minus));
        for r in 0..13 {
            dx[j][r] = (xp[r] - xm[r]) / (2.0 * h);
        }
        for r in 0..4 {
            du[j][r] = (up[r] - um[r]) / (2.0 * h);
        }
    }
    (dx, du)
}

/// `‖a − b‖ / ‖b‖`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}
