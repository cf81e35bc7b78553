//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails. Pass a substring (e.g. `ac7`)
//! to run a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use coplan::ad::Scalar;
use coplan::config::Config;
use coplan::evaluation::{evaluate_trajectories, sample_targets, target_config, trajectory_set, AmplitudeReport};
use coplan::observability::{
    closed_loop_anchors, e2log, lambda_max, lambda_min, lie_stack, quadrotor_segment, taylor_jacobian,
    GramianAccumulator, OutputMap, VectorField,
};
use coplan::pipeline::{
    filter_costs, posterior_filter, precondition, run_pipeline, scalarize, write_run_dir, Context, PipelineOutput,
    StageId,
};
use coplan::scalarization::{tchebycheff, ObjectiveVector, ParetoAnchors};
use coplan::sensitivity::{propagate, theta_integral, SensitivityOptions};
use coplan::sim::ClosedLoop;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fd_closed_loop, line, rel_err};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn majority(hits: usize, n: usize) -> bool {
    2 * hits > n
}

// ---------------------------------------------------------------------------

fn ac1_sensitivity_oracle() -> Outcome {
    let mut cfg = Config::desk();
    cfg.mission.duration = 5.0;
    cfg.mission.target = [2.5, 2.0, 0.5, 0.0];
    let ctx = Context::from_config(&cfg).unwrap();
    let pre = precondition(&cfg, &ctx).map_err(|e| e.to_string())?;
    let params = &pre.params;
    let traj = params.to_bezier().unwrap();
    let cl = ClosedLoop {
        traj: &traj,
        constants: &ctx.constants,
        controller: &ctx.controller,
        p_c: ctx.p_c,
        p_real: ctx.p_c,
    };
    let trace = propagate(
        &cl,
        &Context::start_state(params),
        [0.0; 3],
        params.duration(),
        &ctx.integrator,
        &SensitivityOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(trace.saturated_samples == 0, || {
        format!("{} saturated samples", trace.saturated_samples)
    })?;
    let pi = trace.sensitivity.as_ref().unwrap().last().unwrap().pi;
    let theta = theta_integral(&trace).unwrap();
    let (dx, du) = fd_closed_loop(&ctx, params, 1e-6);
    let mut worst: f64 = 0.0;
    for j in 0..2 {
        let col_pi: Vec<f64> = (0..13).map(|r| pi[(r, j)]).collect();
        let col_th: Vec<f64> = (0..4).map(|r| theta[(r, j)]).collect();
        let (e_pi, e_th) = (rel_err(&col_pi, &dx[j]), rel_err(&col_th, &du[j]));
        ensure(e_pi < 1e-3, || format!("Pi column {j}: relative error {e_pi:.3e}"))?;
        ensure(e_th < 1e-3, || {
            format!("Theta integral column {j}: relative error {e_th:.3e}")
        })?;
        worst = worst.max(e_pi).max(e_th);
    }
    Ok(format!("worst relative error {worst:.2e}"))
}

fn ac2_gramian_structure() -> Outcome {
    let mut cfg = Config::desk();
    cfg.mission.duration = 4.0;
    let ctx = Context::from_config(&cfg).unwrap();
    let obs = &ctx.observability;
    let scale = obs.scale_vector().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut done, mut skipped, mut worst_asym, mut worst_neg): (usize, usize, f64, f64) =
        (0, 0, 0.0, f64::NEG_INFINITY);
    while done < 100 {
        let start = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..1.0),
            0.0,
        ];
        let end: [f64; 4] = std::array::from_fn(|d| {
            if d < 3 {
                start[d] + rng.random_range(-1.5..1.5)
            } else {
                rng.random_range(-0.5..0.5)
            }
        });
        let mut params = line(start, end, 4.0, 3);
        for v in params.free.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let (traj, trace) = match ctx.fly(&params, ctx.p_c) {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                ensure(skipped < 100, || {
                    "too many random trajectories failed to simulate".into()
                })?;
                continue;
            }
        };
        let w = e2log(&trace, &traj, &ctx.p_c, &ctx.constants, obs)
            .map_err(|e| e.to_string())?
            .w;
        let lmax = lambda_max(&w);
        let asym = (&w - w.transpose()).norm() / w.norm();
        let neg = -lambda_min(&w) / lmax;
        ensure(asym <= 1e-12, || format!("trajectory {done}: asymmetry {asym:.2e}"))?;
        ensure(neg <= 1e-9, || {
            format!("trajectory {done}: lambda_min = {:.3e} lambda_max", -neg)
        })?;
        worst_asym = worst_asym.max(asym);
        worst_neg = worst_neg.max(neg);

        let anchors = closed_loop_anchors(&trace, &ctx.p_c, obs).unwrap();
        let seg = trace.duration() / obs.segments as f64;
        let mut acc = GramianAccumulator::new(scale.clone());
        let mut prev = 0.0;
        for a in &anchors {
            acc.add(&quadrotor_segment(obs, &ctx.constants, a, seg, &scale).unwrap());
            let now = acc.lambda_min();
            ensure(now >= prev - 1e-12 * lambda_max(&acc.w), || {
                format!("trajectory {done}: lambda_min decreased from {prev:.6e} to {now:.6e}")
            })?;
            prev = now;
        }
        ensure(acc.w == w, || format!("trajectory {done}: incremental sum differs"))?;
        done += 1;
    }
    Ok(format!(
        "100 trajectories ({skipped} redrawn), max asymmetry {worst_asym:.1e}, smallest lambda_min/lambda_max {:.2e}",
        -worst_neg
    ))
}

struct Scalar1 {
    a: f64,
}
impl VectorField<1> for Scalar1 {
    fn eval<T: Scalar>(&self, z: &[T; 1]) -> [T; 1] {
        [z[0].scale(self.a)]
    }
}
struct StateOut;
impl OutputMap<1> for StateOut {
    fn n_out(&self) -> usize {
        1
    }
    fn eval<T: Scalar>(&self, z: &[T; 1], out: &mut Vec<T>) {
        out.clear();
        out.push(z[0]);
    }
}

fn ac3_lie_taylor_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &a in &[-2.0, -0.7, -0.1, 0.0, 0.3, 1.0, 1.9] {
        for &dt in &[-0.4, -0.05, 0.0, 0.01, 0.1, 0.25, 0.5] {
            for n in 0..=4 {
                let s = lie_stack(&Scalar1 { a }, &StateOut, &[0.6], n).map_err(|e| e.to_string())?;
                let k = taylor_jacobian(&s.grads, dt)[(0, 0)];
                let mut series = 0.0;
                let mut term = 1.0;
                for i in 0..=n {
                    if i > 0 {
                        term *= dt * a / i as f64;
                    }
                    series += term;
                }
                let ulps = (k - series).abs() / (f64::EPSILON * series.abs().max(1.0));
                ensure(ulps <= 4.0, || format!("a={a} dt={dt} n={n}: K={k} series={series}"))?;
                let x = (a * dt).abs();
                let fact: f64 = (1..=n + 1).map(|i| i as f64).product();
                let bound = x.powi(n as i32 + 1) / fact * x.exp();
                let trunc = (k - (a * dt).exp()).abs();
                ensure(trunc <= bound + 1e-15, || {
                    format!("a={a} dt={dt} n={n}: truncation {trunc:.3e} > {bound:.3e}")
                })?;
                worst = worst.max(ulps);
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} cases, worst deviation {worst:.1} ulp"))
}

fn ac4_tchebycheff_identities() -> Outcome {
    let anchors = ParetoAnchors {
        utopia: vec![0.0, 0.0],
        nadir: vec![2.0, 4.0],
    };
    let u0 = tchebycheff(&[0.0, 0.0], &anchors, &[0.5, 0.5], 1e-4).map_err(|e| e.to_string())?;
    ensure(u0 == 0.0, || format!("U(F_O) = {u0}"))?;
    let u = tchebycheff(&[1.0, 2.0], &anchors, &[0.5, 0.5], 1e-4).unwrap();
    ensure((u - 0.2503).abs() <= 1e-12, || format!("worked example U = {u}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..10_000 {
        let utopia: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let nadir: Vec<f64> = utopia.iter().map(|u| u + rng.random_range(0.1..5.0)).collect();
        let a = ParetoAnchors { utopia, nadir };
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
        let w: Vec<f64> = raw.iter().map(|v| v / raw.iter().sum::<f64>()).collect();
        let rho = rng.random_range(1e-4..1e-2);
        let f: Vec<f64> = (0..3).map(|d| a.utopia[d] + rng.random_range(0.0..6.0)).collect();
        let mut g = f.clone();
        let k = rng.random_range(0..3);
        g[k] += rng.random_range(1e-3..2.0);
        for (d, v) in g.iter_mut().enumerate() {
            if d != k && rng.random_bool(0.5) {
                *v += rng.random_range(0.0..1.0);
            }
        }
        let (uf, ug) = (
            tchebycheff(&f, &a, &w, rho).unwrap(),
            tchebycheff(&g, &a, &w, rho).unwrap(),
        );
        ensure(uf < ug, || format!("triple {i}: U(F) = {uf} not below U(F') = {ug}"))?;
    }
    Ok(format!("U(F_O) = 0, worked example U = {u:.4}, 10000 monotone triples"))
}

fn ac5_preconditioning() -> Outcome {
    let mut cfg = Config::desk();
    cfg.seed = 5;
    cfg.campaign.targets = 10;
    let targets = sample_targets(&cfg);
    let mut worst: f64 = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let tcfg = target_config(&cfg, i as u32, *t);
        let ctx = Context::from_config(&tcfg).unwrap();
        let pre = precondition(&tcfg, &ctx).map_err(|e| format!("target {i} {t:?}: {e}"))?;
        let (_, trace) = ctx.fly(&pre.params, ctx.p_c).map_err(|e| e.to_string())?;
        let r = trace.final_state().unwrap().r;
        let err = ((r[0] - t[0]).powi(2) + (r[1] - t[1]).powi(2) + (r[2] - t[2]).powi(2)).sqrt();
        ensure(err < 1e-2, || format!("target {i} {t:?}: terminal error {err:.3e} m"))?;
        ensure(trace.saturated_samples == 0 && trace.max_rotor_margin <= 0.0, || {
            format!(
                "target {i}: {} saturated samples, margin {:.3e}",
                trace.saturated_samples, trace.max_rotor_margin
            )
        })?;
        worst = worst.max(err);
    }
    Ok(format!(
        "10 targets, worst terminal error {worst:.2e} m, no rotor-bound violations"
    ))
}

// ---------------------------------------------------------------------------
// Desk-scale pipeline runs shared by the ordering criteria

struct DeskRun {
    cfg: Config,
    out: PipelineOutput,
    tracking: Vec<AmplitudeReport>,
}

fn desk_runs() -> &'static [DeskRun] {
    static RUNS: OnceLock<Vec<DeskRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = Config::desk();
        sample_targets(&cfg)
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let tcfg = target_config(&cfg, i as u32, t);
                let out = run_pipeline(&tcfg, StageId::Cop).expect("desk pipeline");
                let tracking = evaluate_trajectories(&cfg, i as u32, &trajectory_set(&out)).expect("desk campaign");
                DeskRun {
                    cfg: tcfg,
                    out,
                    tracking,
                }
            })
            .collect()
    })
}

fn ac6_conflict() -> Outcome {
    let runs = desk_runs();
    let mut hits = 0;
    let mut lines = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let (Some(anchors), Some(sis), Some(e2)) = (
            r.out.anchors.as_ref(),
            r.out.stage(StageId::Sis),
            r.out.stage(StageId::E2log),
        ) else {
            lines.push(format!("target {i}: stages missing"));
            continue;
        };
        let s = &r.cfg.scalarization;
        let util = |f: &ObjectiveVector| scalarize(f, &anchors.anchors, &s.sis_weights, s.rho, s.augmentation).unwrap();
        let (u_sis, u_e2) = (util(&sis.record.objectives), util(&e2.record.objectives));
        let (o_sis, o_e2) = (sis.record.objectives.e2log, e2.record.objectives.e2log);
        let holds = u_e2 > u_sis && o_sis > o_e2;
        hits += holds as usize;
        lines.push(format!(
            "target {i}: SIS utility {u_sis:.3e} (SIS) vs {u_e2:.3e} (E2LOG); F_E2LOG {o_sis:.3e} (SIS) vs {o_e2:.3e} (E2LOG)"
        ));
    }
    let msg = format!("conflict in {hits} of {}: {}", runs.len(), lines.join("; "));
    ensure(runs.len() >= 3 && majority(hits, runs.len()), || msg.clone())?;
    Ok(msg)
}

fn ac7_tracking_ordering() -> Outcome {
    let runs = desk_runs();
    let mut counts = [0usize; 2];
    let mut medians = Vec::new();
    for r in runs {
        let a = r
            .tracking
            .iter()
            .find(|a| a.amplitude == 0.01)
            .ok_or("no 1% campaign")?;
        for (k, v) in a.stats.verdicts.iter().enumerate() {
            counts[k] += v.holds as usize;
        }
        medians.push(
            a.stats
                .kinds
                .iter()
                .map(|k| format!("{} {:.4e}", k.kind.name(), k.tracking.map_or(f64::NAN, |t| t.median)))
                .collect::<Vec<_>>()
                .join(", "),
        );
    }
    let msg = format!(
        "SIS <= COP in {} of {}, COP <= E2LOG in {} of {} (medians: {})",
        counts[0],
        runs.len(),
        counts[1],
        runs.len(),
        medians.join(" | ")
    );
    ensure(counts.iter().all(|&c| c >= 2), || msg.clone())?;
    Ok(msg)
}

fn ac8_observability_ordering() -> Outcome {
    let runs = desk_runs();
    let mut hits = 0;
    let mut lines = Vec::new();
    for r in runs {
        let lm = |s: Option<StageId>| r.out.record(s).lambda_min;
        let (e2, cop, init) = (lm(Some(StageId::E2log)), lm(Some(StageId::Cop)), lm(None));
        hits += (e2 >= cop && cop >= init) as usize;
        lines.push(format!("{e2:.3e} >= {cop:.3e} >= {init:.3e}"));
    }
    let msg = format!("E2LOG >= COP >= INIT in {hits} of {}: {}", runs.len(), lines.join("; "));
    ensure(majority(hits, runs.len()), || msg.clone())?;
    Ok(msg)
}

fn ac9_posterior_filter() -> Outcome {
    let quadrants = [
        ((0.5, -2.0), true),
        ((1.5, -2.0), false),
        ((0.5, -0.5), false),
        ((1.5, -0.5), false),
        ((1.0, -1.0), false),
    ];
    for ((sis, e2), expected) in quadrants {
        ensure(filter_costs(sis, e2, 1.0, -1.0) == expected, || {
            format!("fixture ({sis}, {e2}) misclassified")
        })?;
    }
    let anchors = ParetoAnchors {
        utopia: vec![0.0, 0.0, -2.0],
        nadir: vec![1.0, 1.0, 0.0],
    };
    let scal = Config::default().scalarization;
    let init = ObjectiveVector::from_array([0.5, 0.5, -1.0]);
    let v = posterior_filter(&ObjectiveVector::from_array([0.2, 0.2, -1.5]), &init, &anchors, &scal).unwrap();
    ensure(v.accepted, || "dominating COP output rejected".into())?;
    let v = posterior_filter(&ObjectiveVector::from_array([0.2, 0.2, -0.5]), &init, &anchors, &scal).unwrap();
    ensure(!v.accepted, || "COP output with worse E2LOG accepted".into())?;

    let (mut marked, mut accepted) = (0, 0);
    for (i, r) in desk_runs().iter().enumerate() {
        let Some(v) = &r.out.verdict else { continue };
        let expected = filter_costs(v.sis_cop, v.e2log_cop, v.sis_init, v.e2log_init);
        let f_cop = r.out.record(Some(StageId::Cop)).objectives.e2log;
        ensure(v.accepted == expected && v.e2log_cop == f_cop, || {
            format!("target {i}: verdict inconsistent")
        })?;
        marked += 1;
        accepted += v.accepted as usize;
    }
    Ok(format!(
        "4 quadrants and boundary confirmed; {marked} desk verdicts consistent ({accepted} accepted)"
    ))
}

fn ac10_determinism() -> Outcome {
    let mut cfg = Config::desk();
    cfg.seed = 10;
    cfg.optimizer.max_evals = 25;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run_pipeline(&cfg, StageId::Cop).map_err(|e| e.to_string())?;
    write_run_dir(&a, &cfg, &out).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let out = pool
        .install(|| run_pipeline(&cfg, StageId::Cop))
        .map_err(|e| e.to_string())?;
    write_run_dir(&b, &cfg, &out).map_err(|e| e.to_string())?;
    let list = |d: &std::path::Path| {
        let mut v: Vec<String> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n != "timing.json")
            .collect();
        v.sort();
        v
    };
    let names = list(&a);
    ensure(names == list(&b), || "run directories list different files".into())?;
    ensure(names.iter().any(|n| n.starts_with("traj_")), || {
        "no trajectory CSVs written".into()
    })?;
    for n in &names {
        let (x, y) = (std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap());
        ensure(x == y, || format!("{n} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical", names.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC1", "sensitivity finite-difference oracle", ac1_sensitivity_oracle),
        ("AC2", "Gramian structure", ac2_gramian_structure),
        ("AC3", "Lie/Taylor scalar oracle", ac3_lie_taylor_oracle),
        ("AC4", "Tchebycheff identities", ac4_tchebycheff_identities),
        ("AC5", "preconditioning contract", ac5_preconditioning),
        ("AC6", "conflicting objectives", ac6_conflict),
        ("AC7", "tracking-error ordering", ac7_tracking_ordering),
        ("AC8", "observability ordering", ac8_observability_ordering),
        ("AC9", "posterior filter", ac9_posterior_filter),
        ("AC10", "determinism", ac10_determinism),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (id, name, _) in &criteria {
            println!("{}_{}: test", id.to_lowercase(), name.replace([' ', '/', '-'], "_"));
        }
        return;
    }
    let filters: Vec<String> = args
        .iter()
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_lowercase())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in criteria {
        let key = id.to_lowercase();
        if !filters.is_empty() && !filters.iter().any(|f| key == *f || name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id:<5} PASS  {name} ({secs:.1} s): {detail}"),
            Err(reason) => {
                failed += 1;
                println!("{id:<5} FAIL  {name} ({secs:.1} s): {reason}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
