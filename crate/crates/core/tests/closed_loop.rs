mod common;

use coplan::integrate::Method;
use coplan::quadrotor::State13;
use coplan::sim::{tracking_error_norm, SimTrace};
use nalgebra::Vector3;

use common::{context, line, quick_config};

#[test]
fn rk4_and_dopri5_agree_over_ten_seconds() {
    let mut cfg = quick_config(10.0);
    cfg.integrator.step = 1e-3;
    let params = line([0.0, 0.0, 0.0, 0.0], [3.0, 2.0, 0.5, 0.3], 10.0, 3);
    let rk4 = context(&cfg).fly(&params, context(&cfg).p_c).unwrap().1;
    cfg.integrator.method = Method::Dopri5;
    cfg.integrator.abs_tol = 1e-9;
    cfg.integrator.rel_tol = 1e-9;
    let ctx = context(&cfg);
    let dp = ctx.fly(&params, ctx.p_c).unwrap().1;
    assert_eq!(rk4.times, dp.times);
    let worst = rk4
        .states
        .iter()
        .zip(&dp.states)
        .map(|(a, b)| (a.r - b.r).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "max position gap {worst:.3e} m");
}

#[test]
fn tracking_error_of_a_synthetic_trace_matches_closed_form() {
    let t_end = 4.0;
    let params = line([0.0, 0.0, 1.0, 0.0], [2.0, -1.0, 1.5, 0.0], t_end, 2);
    let traj = params.to_bezier().unwrap();
    let (amp, omega) = (0.3, 1.7);
    let n = 4001;
    let mut trace = SimTrace::default();
    for i in 0..n {
        let t = t_end * i as f64 / (n - 1) as f64;
        let rd = traj.evaluate(t, 0).unwrap();
        let e = amp * (omega * t).sin().powi(2);
        trace.times.push(t);
        trace
            .states
            .push(State13::hover(Vector3::new(rd[0], rd[1] + e, rd[2]), 0.0));
    }
    let got = tracking_error_norm(&trace, &traj).unwrap();
    let exact = amp * (0.5 - (2.0 * omega * t_end).sin() / (4.0 * omega * t_end));
    assert!(((got - exact) / exact).abs() < 1e-4, "{got} vs {exact}");
}

#[test]
fn hover_is_less_observable_than_an_excited_trajectory() {
    let cfg = quick_config(10.0);
    let ctx = context(&cfg);
    let p = [1.0, 1.0, 1.0, 0.0];
    let hover = ctx.evaluate(&line(p, p, 10.0, 3)).unwrap();
    let mut excited = line(p, [3.0, 2.5, 1.5, 0.0], 10.0, 3);
    excited.free = vec![2.5, -0.5, 2.0, 1.0, 0.5, 2.5, 0.5, -1.0];
    let excited = ctx.evaluate(&excited).unwrap();
    assert_eq!(excited.saturated_samples, 0);
    assert!(
        hover.lambda_min < excited.lambda_min,
        "{} vs {}",
        hover.lambda_min,
        excited.lambda_min
    );
}
