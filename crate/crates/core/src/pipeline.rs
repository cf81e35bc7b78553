//! Multi-step planning pipeline: preconditioning, the three individual
//! objectives, their anchors, the SIS and COP scalarized runs, and the
//! posterior filter. Also the run-directory artifacts.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Augmentation, Config, ScalarizationConfig, SensitivityConfig};
use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::integrate::IntegratorOptions;
use crate::observability::{e2log, ObservabilityConfig};
use crate::optimizer::{minimize, Bounds, Evaluation, OptRun, OptimizerOptions, Termination};
use crate::quadrotor::{ParamVector, PhysicalConstants, State13};
use crate::scalarization::{anchors_unchecked, tchebycheff, ObjectiveVector, ParetoAnchors};
use crate::seeding::{stream, Domain};
use crate::sensitivity::{cost_pi, cost_theta, propagate, SensitivityOptions};
use crate::sim::{simulate, ClosedLoop, SimTrace};
use crate::trajectory::{PiecewiseBezier, TrajectoryParams, Waypoint};

/// Everything needed to turn a trajectory into costs.
#[derive(Clone, Debug)]
pub struct Context {
    pub constants: PhysicalConstants,
    pub p_c: ParamVector,
    pub controller: Controller,
    pub integrator: IntegratorOptions,
    pub sensitivity: SensitivityConfig,
    pub observability: ObservabilityConfig,
    /// Mission target used for the terminal error.
    pub target: [f64; 3],
}

/// Costs and diagnostics of one trajectory under the nominal parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub objectives: ObjectiveVector,
    pub lambda_min: f64,
    pub rotor_margin: f64,
    pub saturated_samples: usize,
    pub terminal_error: f64,
}

impl Context {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            constants: cfg.model.constants()?,
            p_c: cfg.model.params()?,
            controller: cfg.controller,
            integrator: cfg.integrator,
            sensitivity: cfg.sensitivity.clone(),
            observability: cfg.observability.clone(),
            target: [cfg.mission.target[0], cfg.mission.target[1], cfg.mission.target[2]],
        })
    }

    /// Hover at the first way-point.
    pub fn start_state(params: &TrajectoryParams) -> State13 {
        let p = params.head.position();
        let yaw = p.get(3).copied().unwrap_or(0.0);
        State13::hover(Vector3::new(p[0], p[1], p[2]), yaw)
    }

    fn closed_loop<'a>(&'a self, traj: &'a PiecewiseBezier, p_real: ParamVector) -> ClosedLoop<'a> {
        ClosedLoop {
            traj,
            constants: &self.constants,
            controller: &self.controller,
            p_c: self.p_c,
            p_real,
        }
    }

    /// Closed-loop flight over the whole trajectory with plant parameters `p_real`.
    pub fn fly(&self, params: &TrajectoryParams, p_real: ParamVector) -> Result<(PiecewiseBezier, SimTrace)> {
        let traj = params.to_bezier()?;
        let trace = simulate(
            &self.closed_loop(&traj, p_real),
            &Self::start_state(params),
            [0.0; 3],
            params.duration(),
            &self.integrator,
        )?;
        Ok((traj, trace))
    }

    /// All three objectives from one joint state/sensitivity integration.
    pub fn evaluate(&self, params: &TrajectoryParams) -> Result<EvalRecord> {
        let traj = params.to_bezier()?;
        let trace = propagate(
            &self.closed_loop(&traj, self.p_c),
            &Self::start_state(params),
            [0.0; 3],
            params.duration(),
            &self.integrator,
            &SensitivityOptions::default(),
        )?;
        let pi = cost_pi(&trace, &self.sensitivity.rows, self.sensitivity.norm)?;
        let theta = cost_theta(&trace, self.sensitivity.norm)?;
        let gram = e2log(&trace, &traj, &self.p_c, &self.constants, &self.observability)?;
        let lambda_min = gram.lambda_min();
        Ok(EvalRecord {
            objectives: ObjectiveVector {
                pi,
                theta,
                e2log: -lambda_min,
            },
            lambda_min,
            rotor_margin: trace.max_rotor_margin,
            saturated_samples: trace.saturated_samples,
            terminal_error: terminal_vector(&trace, &self.target).norm(),
        })
    }
}

fn terminal_vector(trace: &SimTrace, target: &[f64]) -> Vector3<f64> {
    match trace.final_state() {
        Some(s) => s.r - Vector3::new(target[0], target[1], target[2]),
        None => Vector3::repeat(f64::INFINITY),
    }
}

/// Memoizes [`Context::evaluate`] by the exact bits of the decision vector.
pub struct Evaluator<'a> {
    pub ctx: &'a Context,
    pub template: TrajectoryParams,
    cache: HashMap<Vec<u64>, std::result::Result<EvalRecord, String>>,
    pub hits: usize,
    pub misses: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(ctx: &'a Context, template: TrajectoryParams) -> Self {
        Self {
            ctx,
            template,
            cache: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn evaluate(&mut self, free: &[f64]) -> std::result::Result<EvalRecord, String> {
        let key: Vec<u64> = free.iter().map(|v| v.to_bits()).collect();
        if let Some(hit) = self.cache.get(&key) {
            self.hits += 1;
            return hit.clone();
        }
        self.misses += 1;
        let out = self
            .ctx
            .evaluate(&self.template.with_free(free))
            .map_err(|e| e.to_string());
        self.cache.insert(key, out.clone());
        out
    }
}

// ---------------------------------------------------------------------------
// Preconditioning

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preconditioned {
    /// `a_INIT` together with the offset final way-point.
    pub params: TrajectoryParams,
    pub target: [f64; 4],
    pub offset: [f64; 3],
    pub terminal_error: f64,
    pub rotor_margin: f64,
    pub saturated_samples: usize,
    pub attempts: usize,
    pub feasibility_evals: usize,
}

/// Box on the free variables from the workspace and derivative limits.
pub fn search_bounds(cfg: &Config, params: &TrajectoryParams) -> Result<Bounds> {
    let m = &cfg.mission;
    let pairs = params.bounds(&m.workspace_lower, &m.workspace_upper, &m.derivative_bounds)?;
    let (lower, upper) = pairs.into_iter().unzip();
    Bounds::new(lower, upper)
}

fn with_tail(params: &TrajectoryParams, target: &[f64; 4], offset: &Vector3<f64>) -> TrajectoryParams {
    let mut p = params.clone();
    for d in 0..3 {
        p.tail.values[d][0] = target[d] + offset[d];
    }
    p
}

/// Builds `a_INIT`: scattered interior way-points made rotor-feasible, then a
/// final way-point offset so the nominal closed loop ends on the target.
pub fn precondition(cfg: &Config, ctx: &Context) -> Result<Preconditioned> {
    let m = &cfg.mission;
    let pc = &cfg.precondition;
    let head = Waypoint::at_rest(0.0, &m.start, m.n_jc);
    let start = Vector3::new(m.start[0], m.start[1], m.start[2]);
    let goal = Vector3::new(m.target[0], m.target[1], m.target[2]);
    let dist = (goal - start).norm();
    let mut rng = stream(cfg.seed, Domain::Precondition, 0);
    let mut worst = f64::INFINITY;
    let mut evals = 0;
    for attempt in 1..=pc.attempts.max(1) {
        let interior: Vec<Vec<f64>> = (1..m.pieces)
            .map(|i| {
                let s = i as f64 / m.pieces as f64;
                (0..4)
                    .map(|d| {
                        let base = m.start[d] + s * (m.target[d] - m.start[d]);
                        let jitter = if d < 3 {
                            pc.spread * dist * rng.random_range(-1.0..=1.0)
                        } else {
                            0.0
                        };
                        (base + jitter).clamp(m.workspace_lower[d], m.workspace_upper[d])
                    })
                    .collect()
            })
            .collect();
        let base = TrajectoryParams::uniform(head.clone(), &m.target, m.duration, &interior, m.interior_mode)?;
        let bounds = search_bounds(cfg, &base)?;

        // Phase 1: rotor feasibility with a safety margin.
        let excess = |free: &[f64]| -> f64 {
            match ctx.fly(&base.with_free(free), ctx.p_c) {
                Ok((_, tr)) => (tr.max_rotor_margin + pc.rotor_margin).max(0.0),
                Err(_) => f64::INFINITY,
            }
        };
        let mut free = base.free.clone();
        if excess(&free) > 0.0 {
            let opts = OptimizerOptions {
                max_evals: pc.feasibility_evals,
                rho_begin: 0.1 * dist.max(1.0),
                rho_end: 1e-3,
                f_target: Some(0.0),
                ..cfg.optimizer.clone()
            };
            let run = minimize(|x| Evaluation::unconstrained(excess(x)), &free, &bounds, &opts)?;
            evals += run.evaluations;
            worst = worst.min(run.f_best);
            if run.f_best > 0.0 {
                continue;
            }
            free = run.x_best;
        }
        let base = base.with_free(&free);

        // Phase 2: Newton iteration on the final way-point offset.
        let error_at = |o: &Vector3<f64>| -> Result<(Vector3<f64>, SimTrace)> {
            let (_, tr) = ctx.fly(&with_tail(&base, &m.target, o), ctx.p_c)?;
            Ok((terminal_vector(&tr, &m.target), tr))
        };
        let mut o = Vector3::zeros();
        let Ok((mut e, mut trace)) = error_at(&o) else { continue };
        let mut jac: Option<Matrix3<f64>> = None;
        for _ in 0..pc.offset_iterations {
            if e.norm() < 0.1 * pc.terminal_tol {
                break;
            }
            let j = match jac {
                Some(j) => j,
                None => {
                    let h = 1e-3;
                    let mut j = Matrix3::zeros();
                    for k in 0..3 {
                        let mut ok = o;
                        ok[k] += h;
                        let (ek, _) = error_at(&ok)?;
                        j.set_column(k, &((ek - e) / h));
                    }
                    j
                }
            };
            let Some(step) = j.lu().solve(&(-e)) else { break };
            let o_new = o + step;
            let Ok((e_new, tr)) = error_at(&o_new) else { break };
            // Broyden update of the offset Jacobian.
            let s2 = step.norm_squared();
            jac = Some(if s2 > 0.0 {
                j + (e_new - e - j * step) * step.transpose() / s2
            } else {
                j
            });
            o = o_new;
            e = e_new;
            trace = tr;
        }
        if e.norm() < pc.terminal_tol && trace.max_rotor_margin <= 0.0 && trace.saturated_samples == 0 {
            return Ok(Preconditioned {
                params: with_tail(&base, &m.target, &o),
                target: m.target,
                offset: [o[0], o[1], o[2]],
                terminal_error: e.norm(),
                rotor_margin: trace.max_rotor_margin,
                saturated_samples: trace.saturated_samples,
                attempts: attempt,
                feasibility_evals: evals,
            });
        }
        worst = worst.min(trace.max_rotor_margin.max(e.norm()));
    }
    Err(Error::Infeasible { violation: worst })
}

// ---------------------------------------------------------------------------
// Stages

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    Pi,
    Theta,
    E2log,
    Sis,
    Cop,
}

impl StageId {
    pub const ALL: [StageId; 5] = [StageId::Pi, StageId::Theta, StageId::E2log, StageId::Sis, StageId::Cop];

    pub fn name(&self) -> &'static str {
        match self {
            StageId::Pi => "pi",
            StageId::Theta => "theta",
            StageId::E2log => "e2log",
            StageId::Sis => "sis",
            StageId::Cop => "cop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == s)
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar objective minimized by a stage.
#[derive(Clone, Debug)]
pub enum Objective {
    Component(usize),
    Tchebycheff {
        anchors: ParetoAnchors,
        weights: [f64; 3],
        rho: f64,
        augmentation: Augmentation,
    },
}

impl Objective {
    pub fn value(&self, f: &ObjectiveVector) -> Result<f64> {
        match self {
            Objective::Component(i) => Ok(f.as_array()[*i]),
            Objective::Tchebycheff {
                anchors,
                weights,
                rho,
                augmentation,
            } => scalarize(f, anchors, weights, *rho, *augmentation),
        }
    }
}

/// Tchebycheff utility; with [`Augmentation::RangeNormalized`] every objective
/// with a non-zero range is first divided by that range.
pub fn scalarize(
    f: &ObjectiveVector,
    anchors: &ParetoAnchors,
    w: &[f64; 3],
    rho: f64,
    aug: Augmentation,
) -> Result<f64> {
    match aug {
        Augmentation::Raw => tchebycheff(&f.as_array(), anchors, w, rho),
        Augmentation::RangeNormalized => {
            let scale: Vec<f64> = (0..3)
                .map(|i| {
                    let r = (anchors.nadir[i] - anchors.utopia[i]).abs();
                    if r > 0.0 {
                        r
                    } else {
                        1.0
                    }
                })
                .collect();
            let fs: Vec<f64> = f.as_array().iter().zip(&scale).map(|(v, s)| v / s).collect();
            let scaled = ParetoAnchors {
                utopia: anchors.utopia.iter().zip(&scale).map(|(v, s)| v / s).collect(),
                nadir: anchors.nadir.iter().zip(&scale).map(|(v, s)| v / s).collect(),
            };
            tchebycheff(&fs, &scaled, w, rho)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub value: Option<f64>,
    pub violation: Option<f64>,
    pub best: Option<f64>,
    /// `(F_Π, F_Θ, F_E2LOG)` of the evaluated point.
    pub objectives: Option<ObjectiveVector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: StageId,
    pub x_best: Vec<f64>,
    pub record: EvalRecord,
    pub termination: Termination,
    pub evaluations: usize,
    pub iterations: usize,
    pub history: Vec<HistoryRow>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StageOutcome {
    Completed(StageResult),
    Failed { stage: StageId, reason: String },
    Skipped { stage: StageId, reason: String },
}

impl StageOutcome {
    pub fn stage(&self) -> StageId {
        match self {
            StageOutcome::Completed(r) => r.stage,
            StageOutcome::Failed { stage, .. } | StageOutcome::Skipped { stage, .. } => *stage,
        }
    }

    pub fn result(&self) -> Option<&StageResult> {
        match self {
            StageOutcome::Completed(r) => Some(r),
            _ => None,
        }
    }
}

/// Minimizes `objective` subject to the rotor bounds, starting at `start`.
pub fn run_stage(
    stage: StageId,
    eval: &mut Evaluator,
    objective: &Objective,
    start: &[f64],
    bounds: &Bounds,
    opts: &OptimizerOptions,
) -> Result<StageResult> {
    let mut log: Vec<Option<ObjectiveVector>> = Vec::new();
    let run: OptRun = minimize(
        |x| match eval.evaluate(x) {
            Ok(rec) => {
                log.push(Some(rec.objectives));
                match objective.value(&rec.objectives) {
                    Ok(v) => Evaluation {
                        f: v,
                        constraints: vec![rec.rotor_margin],
                    },
                    Err(_) => Evaluation {
                        f: f64::INFINITY,
                        constraints: vec![f64::INFINITY],
                    },
                }
            }
            Err(_) => {
                log.push(None);
                Evaluation {
                    f: f64::INFINITY,
                    constraints: vec![f64::INFINITY],
                }
            }
        },
        start,
        bounds,
        opts,
    )?;
    let record = eval.evaluate(&run.x_best).map_err(Error::Missing)?;
    let history = run
        .history
        .iter()
        .zip(log)
        .map(|(h, f)| HistoryRow {
            value: h.f,
            violation: h.violation,
            best: h.best,
            objectives: f,
        })
        .collect();
    Ok(StageResult {
        stage,
        x_best: run.x_best,
        record,
        termination: run.termination,
        evaluations: run.evaluations,
        iterations: run.iterations,
        history,
        wall_time_s: run.wall_time_s,
    })
}

// ---------------------------------------------------------------------------
// Posterior filter

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub sis_init: f64,
    pub sis_cop: f64,
    pub e2log_init: f64,
    pub e2log_cop: f64,
    pub reason: String,
}

/// Accepts iff both `F_SIS` and `F_E2LOG` strictly improve on the start.
pub fn filter_costs(sis_cop: f64, e2log_cop: f64, sis_init: f64, e2log_init: f64) -> bool {
    sis_cop < sis_init && e2log_cop < e2log_init
}

pub fn posterior_filter(
    cop: &ObjectiveVector,
    init: &ObjectiveVector,
    anchors: &ParetoAnchors,
    scal: &ScalarizationConfig,
) -> Result<Verdict> {
    let sis = |f: &ObjectiveVector| scalarize(f, anchors, &scal.sis_weights, scal.rho, scal.augmentation);
    let (sis_cop, sis_init) = (sis(cop)?, sis(init)?);
    let accepted = filter_costs(sis_cop, cop.e2log, sis_init, init.e2log);
    let reason = match (sis_cop < sis_init, cop.e2log < init.e2log) {
        (true, true) => "both objectives improved",
        (false, true) => "SIS utility did not improve",
        (true, false) => "E2LOG did not improve",
        (false, false) => "neither objective improved",
    };
    Ok(Verdict {
        accepted,
        sis_init,
        sis_cop,
        e2log_init: init.e2log,
        e2log_cop: cop.e2log,
        reason: reason.into(),
    })
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    /// Row `j` holds `F(a_j^O)` for the Π, Θ, and E2LOG minimizers.
    pub matrix: Vec<Vec<f64>>,
    pub anchors: ParetoAnchors,
    pub degenerate: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub seed: u64,
    pub init: Preconditioned,
    pub init_record: EvalRecord,
    pub stages: Vec<StageOutcome>,
    pub anchors: Option<AnchorReport>,
    pub verdict: Option<Verdict>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl PipelineOutput {
    pub fn stage(&self, id: StageId) -> Option<&StageResult> {
        self.stages.iter().find(|s| s.stage() == id).and_then(|s| s.result())
    }

    /// Decision vector of a stage; falls back to `a_INIT` when the stage did not complete.
    pub fn free(&self, id: Option<StageId>) -> &[f64] {
        match id.and_then(|id| self.stage(id)) {
            Some(r) => &r.x_best,
            None => &self.init.params.free,
        }
    }

    pub fn params(&self, id: Option<StageId>) -> TrajectoryParams {
        self.init.params.with_free(self.free(id))
    }

    pub fn record(&self, id: Option<StageId>) -> EvalRecord {
        match id.and_then(|id| self.stage(id)) {
            Some(r) => r.record,
            None => self.init_record,
        }
    }
}

/// Runs preconditioning and then every stage up to and including `last`.
pub fn run_pipeline(cfg: &Config, last: StageId) -> Result<PipelineOutput> {
    let selection: Vec<StageId> = StageId::ALL.into_iter().filter(|s| *s <= last).collect();
    run_selected(cfg, &selection)
}

/// Runs the preconditioning and the listed stages. The scalarized stages
/// need all three individual stages for their anchors.
pub fn run_selected(cfg: &Config, selection: &[StageId]) -> Result<PipelineOutput> {
    let clock = Instant::now();
    let ctx = Context::from_config(cfg)?;
    let init = precondition(cfg, &ctx)?;
    let bounds = search_bounds(cfg, &init.params)?;
    let mut eval = Evaluator::new(&ctx, init.params.clone());
    let start = init.params.free.clone();
    let init_record = eval.evaluate(&start).map_err(Error::Missing)?;
    let opts = &cfg.optimizer;
    let mut stages = Vec::new();

    for (i, id) in [StageId::Pi, StageId::Theta, StageId::E2log].into_iter().enumerate() {
        if !selection.contains(&id) {
            continue;
        }
        let outcome = match run_stage(id, &mut eval, &Objective::Component(i), &start, &bounds, opts) {
            Ok(r) => StageOutcome::Completed(r),
            Err(e) => StageOutcome::Failed {
                stage: id,
                reason: e.to_string(),
            },
        };
        stages.push(outcome);
    }

    let mut anchors = None;
    if selection.contains(&StageId::Sis) || selection.contains(&StageId::Cop) {
        let rows: Vec<Option<&StageResult>> = stages.iter().map(|s| s.result()).collect();
        if rows.len() == 3 && rows.iter().all(|r| r.is_some()) {
            let matrix: Vec<Vec<f64>> = rows
                .iter()
                .flatten()
                .map(|r| r.record.objectives.as_array().to_vec())
                .collect();
            let a = anchors_unchecked(&matrix)?;
            anchors = Some(AnchorReport {
                degenerate: a.degenerate(),
                matrix,
                anchors: a,
            });
        }
    }

    let scal = &cfg.scalarization;
    for (id, weights) in [(StageId::Sis, scal.sis_weights), (StageId::Cop, scal.cop_weights)] {
        if !selection.contains(&id) {
            continue;
        }
        let outcome = match &anchors {
            None => StageOutcome::Skipped {
                stage: id,
                reason: "anchors unavailable because an individual stage failed".into(),
            },
            Some(rep) if rep.degenerate.iter().any(|&i| weights[i] > 0.0) => StageOutcome::Skipped {
                stage: id,
                reason: format!("degenerate anchor range for objectives {:?}", rep.degenerate),
            },
            Some(rep) => {
                let objective = Objective::Tchebycheff {
                    anchors: rep.anchors.clone(),
                    weights,
                    rho: scal.rho,
                    augmentation: scal.augmentation,
                };
                match run_stage(id, &mut eval, &objective, &start, &bounds, opts) {
                    Ok(r) => StageOutcome::Completed(r),
                    Err(e) => StageOutcome::Failed {
                        stage: id,
                        reason: e.to_string(),
                    },
                }
            }
        };
        stages.push(outcome);
    }

    let mut out = PipelineOutput {
        seed: cfg.seed,
        init,
        init_record,
        stages,
        anchors,
        verdict: None,
        wall_time_s: 0.0,
    };
    if selection.contains(&StageId::Cop) {
        if let Some(rep) = &out.anchors {
            let cop = out.record(Some(StageId::Cop)).objectives;
            out.verdict = posterior_filter(&cop, &init_record.objectives, &rep.anchors, scal).ok();
        }
    }
    out.wall_time_s = clock.elapsed().as_secs_f64();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Run directory

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub status: String,
    pub objectives: ObjectiveVector,
    pub lambda_min: f64,
    pub rotor_margin: f64,
    pub terminal_error: f64,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stages: Vec<StageSummary>,
    pub degenerate_anchors: Vec<usize>,
    pub accepted: Option<bool>,
}

pub fn summarize(out: &PipelineOutput) -> RunSummary {
    let mut stages = vec![StageSummary {
        stage: "init".into(),
        status: "completed".into(),
        objectives: out.init_record.objectives,
        lambda_min: out.init_record.lambda_min,
        rotor_margin: out.init_record.rotor_margin,
        terminal_error: out.init_record.terminal_error,
        evaluations: 0,
    }];
    for s in &out.stages {
        let (status, rec, evals) = match s {
            StageOutcome::Completed(r) => ("completed", r.record, r.evaluations),
            StageOutcome::Failed { .. } => ("failed", out.init_record, 0),
            StageOutcome::Skipped { .. } => ("skipped", out.init_record, 0),
        };
        stages.push(StageSummary {
            stage: s.stage().name().into(),
            status: status.into(),
            objectives: rec.objectives,
            lambda_min: rec.lambda_min,
            rotor_margin: rec.rotor_margin,
            terminal_error: rec.terminal_error,
            evaluations: evals,
        });
    }
    RunSummary {
        seed: out.seed,
        stages,
        degenerate_anchors: out.anchors.as_ref().map(|a| a.degenerate.clone()).unwrap_or_default(),
        accepted: out.verdict.as_ref().map(|v| v.accepted),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_trajectory(dir: &Path, name: &str, ctx: &Context, params: &TrajectoryParams, sample: f64) -> Result<()> {
    write_json(&dir.join(format!("waypoints_{name}.json")), &params.unpack()?)?;
    let traj = params.to_bezier()?;
    std::fs::write(dir.join(format!("traj_{name}.csv")), traj.to_csv(sample, 2)?)?;
    let (_, trace) = ctx.fly(params, ctx.p_c)?;
    std::fs::write(dir.join(format!("sim_{name}.csv")), trace.to_csv())?;
    Ok(())
}

/// Writes the run directory. Everything except `timing.json` is a pure
/// function of the configuration.
pub fn write_run_dir(dir: &Path, cfg: &Config, out: &PipelineOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let ctx = Context::from_config(cfg)?;
    let sample = cfg.integrator.sample_interval;
    write_json(&dir.join("precondition.json"), &out.init)?;
    write_trajectory(dir, "init", &ctx, &out.init.params, sample)?;
    for s in &out.stages {
        let name = s.stage().name();
        write_json(&dir.join(format!("stage_{name}.json")), s)?;
        if let Some(r) = s.result() {
            write_trajectory(dir, name, &ctx, &out.init.params.with_free(&r.x_best), sample)?;
        }
    }
    if let Some(a) = &out.anchors {
        write_json(&dir.join("anchors.json"), a)?;
    }
    if let Some(v) = &out.verdict {
        write_json(&dir.join("verdict.json"), v)?;
    }
    write_json(&dir.join("summary.json"), &summarize(out))?;
    let mut timing: Vec<(String, f64)> = out
        .stages
        .iter()
        .filter_map(|s| s.result().map(|r| (r.stage.name().to_string(), r.wall_time_s)))
        .collect();
    timing.push(("total".into(), out.wall_time_s));
    write_json(
        &dir.join("timing.json"),
        &timing.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
    )?;
    Ok(())
}

/// Reads back a pipeline run directory written by [`write_run_dir`].
pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_waypoints(path: &Path) -> Result<Vec<Waypoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_quadrants() {
        assert!(filter_costs(0.5, -2.0, 1.0, -1.0));
        assert!(!filter_costs(1.5, -2.0, 1.0, -1.0));
        assert!(!filter_costs(0.5, -0.5, 1.0, -1.0));
        assert!(!filter_costs(1.5, -0.5, 1.0, -1.0));
        assert!(!filter_costs(1.0, -1.0, 1.0, -1.0));
    }

    #[test]
    fn range_normalized_matches_raw_max_term() {
        let a = ParetoAnchors {
            utopia: vec![1.0, 10.0, -3.0],
            nadir: vec![2.0, 30.0, -1.0],
        };
        let f = ObjectiveVector::from_array([1.5, 20.0, -2.0]);
        let w = [0.2, 0.3, 0.5];
        let raw = scalarize(&f, &a, &w, 0.0, Augmentation::Raw).unwrap();
        let norm = scalarize(&f, &a, &w, 0.0, Augmentation::RangeNormalized).unwrap();
        assert!((raw - norm).abs() < 1e-15);
        let norm = scalarize(&f, &a, &w, 1e-2, Augmentation::RangeNormalized).unwrap();
        assert!((norm - (0.25 + 1e-2 * 1.5)).abs() < 1e-15);
    }

    #[test]
    fn stage_names_round_trip() {
        for id in StageId::ALL {
            assert_eq!(StageId::parse(id.name()), Some(id));
        }
        assert_eq!(StageId::parse("bogus"), None);
    }
}
