mod common;

use coplan::config::Perturbation;
use coplan::evaluation::{export_measurements, monte_carlo_tracking, Summary};
use coplan::observability::MeasurementModel;

use common::{context, line, quick_config};

#[test]
fn zero_amplitude_reproduces_the_nominal_flight() {
    let cfg = quick_config(3.0);
    let ctx = context(&cfg);
    let params = line([0.0, 0.0, 0.0, 0.0], [1.0, 0.5, 0.2, 0.0], 3.0, 3);
    let s = monte_carlo_tracking(&ctx, &params, 0.0, 4, Perturbation::Uniform, 1, 0).unwrap();
    let e = s.errors();
    assert_eq!(e.len(), 4);
    assert!(e.iter().all(|v| *v == e[0]));
    assert_eq!(s.diverged(), 0);
}

#[test]
fn larger_perturbations_track_worse() {
    let cfg = quick_config(4.0);
    let ctx = context(&cfg);
    let params = line([0.0, 0.0, 0.0, 0.0], [2.0, 1.0, 0.5, 0.0], 4.0, 3);
    let median = |amp| {
        let s = monte_carlo_tracking(&ctx, &params, amp, 20, Perturbation::Uniform, 5, 0).unwrap();
        Summary::from_samples(&s.errors()).unwrap().median
    };
    assert!(median(0.05) >= median(0.01));
}

#[test]
fn noiseless_export_is_exact_and_hover_is_constant() {
    let cfg = quick_config(2.0);
    let ctx = context(&cfg);
    let p = [0.5, -0.5, 1.0, 0.0];
    let params = line(p, p, 2.0, 2);
    let model = MeasurementModel::default();
    let m = export_measurements(&ctx, &params, &model, 50.0, &[], 3).unwrap();
    assert_eq!(m.truth, m.measured);
    assert_eq!(m.times.len(), 101);
    assert!((m.times[1] - m.times[0] - 0.02).abs() < 1e-12);
    for y in &m.truth {
        for d in 0..3 {
            assert!((y[d] - p[d]).abs() < 1e-9, "{y:?}");
        }
    }
    let csv = m.to_csv();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,w1,w2,w3,w4,px,py,pz"));
    assert_eq!(csv.lines().count(), 102);
}

#[test]
fn exported_noise_has_the_requested_spread() {
    let cfg = quick_config(20.0);
    let ctx = context(&cfg);
    let p = [0.0, 0.0, 1.0, 0.0];
    let params = line(p, p, 20.0, 2);
    let model = MeasurementModel::default();
    let sigma: Vec<f64> = (0..model.n_out()).map(|k| 0.01 * (k + 1) as f64).collect();
    let m = export_measurements(&ctx, &params, &model, 500.0, &sigma, 9).unwrap();
    assert!(m.times.len() >= 10_000);
    for (k, s) in sigma.iter().enumerate() {
        let r: Vec<f64> = m.measured.iter().zip(&m.truth).map(|(a, b)| a[k] - b[k]).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64;
        assert!((var.sqrt() / s - 1.0).abs() < 0.1, "channel {k}: {} vs {s}", var.sqrt());
    }
    let again = export_measurements(&ctx, &params, &model, 500.0, &sigma, 9).unwrap();
    assert_eq!(m.measured, again.measured);
    assert!(export_measurements(&ctx, &params, &model, 500.0, &sigma[1..], 9).is_err());
}
