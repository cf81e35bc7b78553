//! Monte Carlo tracking campaigns, order statistics, and measurement export.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, Perturbation};
use crate::error::{Error, Result};
use crate::observability::{measure, MeasurementModel, AUG_DIM};
use crate::pipeline::{
    read_summary, run_pipeline, write_run_dir, Context, PipelineOutput, Preconditioned, StageId, StageOutcome,
};
use crate::quadrotor::ParamVector;
use crate::seeding::{child_seed, stream, Domain};
use crate::sim::tracking_error_norm;
use crate::trajectory::TrajectoryParams;

/// Relative perturbation `δ ∈ [−1, 1]²` of `(k_f, k_m)` for one flight.
pub fn unit_perturbation(law: Perturbation, seed: u64, flight_id: u32) -> [f64; 2] {
    let mut rng = stream(seed, Domain::Flight, flight_id);
    match law {
        Perturbation::Uniform => [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
        Perturbation::NormalClipped => [0, 1].map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (0.5 * z).clamp(-1.0, 1.0)
        }),
    }
}

pub fn perturbed(nominal: &ParamVector, amplitude: f64, delta: [f64; 2]) -> ParamVector {
    ParamVector {
        kf: nominal.kf * (1.0 + amplitude * delta[0]),
        km: nominal.km * (1.0 + amplitude * delta[1]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flight {
    pub id: u32,
    pub p_real: ParamVector,
    /// Positional mean integral error norm; `None` if the flight diverged.
    pub error: Option<f64>,
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSamples {
    pub flights: Vec<Flight>,
}

impl TrackingSamples {
    pub fn errors(&self) -> Vec<f64> {
        self.flights.iter().filter_map(|f| f.error).collect()
    }

    pub fn diverged(&self) -> usize {
        self.flights.iter().filter(|f| f.error.is_none()).count()
    }

    pub fn saturated(&self) -> usize {
        self.flights.iter().filter(|f| f.saturated).count()
    }
}

/// Flies `params` `n_flights` times with perturbed plant parameters. Flight
/// `i` uses the random stream `first_id + i`, so different trajectories
/// flown with the same ids see identical parameter draws.
pub fn monte_carlo_tracking(
    ctx: &Context,
    params: &TrajectoryParams,
    amplitude: f64,
    n_flights: usize,
    law: Perturbation,
    seed: u64,
    first_id: u32,
) -> Result<TrackingSamples> {
    if !(amplitude >= 0.0) {
        return Err(Error::domain("perturbation amplitude must be non-negative"));
    }
    let flights = (0..n_flights as u32)
        .into_par_iter()
        .map(|i| {
            let id = first_id + i;
            let p_real = perturbed(&ctx.p_c, amplitude, unit_perturbation(law, seed, id));
            let (error, saturated) = match ctx.fly(params, p_real) {
                Ok((traj, trace)) => (tracking_error_norm(&trace, &traj).ok(), trace.saturated_samples > 0),
                Err(Error::SimulationDiverged { .. }) | Err(Error::DegenerateThrust { .. }) => (None, false),
                Err(e) => return Err(e),
            };
            Ok(Flight {
                id,
                p_real,
                error,
                saturated,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackingSamples { flights })
}

/// Order statistics with linearly interpolated quartiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (s.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
        };
        Some(Self {
            n: s.len(),
            min: s[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: s[s.len() - 1],
            mean: s.iter().sum::<f64>() / s.len() as f64,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Init,
    Sis,
    E2log,
    Cop,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 4] = [
        TrajectoryKind::Init,
        TrajectoryKind::Sis,
        TrajectoryKind::E2log,
        TrajectoryKind::Cop,
    ];

    pub fn stage(&self) -> Option<StageId> {
        match self {
            TrajectoryKind::Init => None,
            TrajectoryKind::Sis => Some(StageId::Sis),
            TrajectoryKind::E2log => Some(StageId::E2log),
            TrajectoryKind::Cop => Some(StageId::Cop),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryKind::Init => "init",
            TrajectoryKind::Sis => "sis",
            TrajectoryKind::E2log => "e2log",
            TrajectoryKind::Cop => "cop",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub kind: TrajectoryKind,
    pub tracking: Option<Summary>,
    pub lambda_min: Summary,
    pub flights: usize,
    pub diverged: usize,
    pub saturated: usize,
}

/// `median(lhs) ≤ median(rhs)` up to a relative slack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingVerdict {
    pub lhs: TrajectoryKind,
    pub rhs: TrajectoryKind,
    pub lhs_median: Option<f64>,
    pub rhs_median: Option<f64>,
    pub n_lhs: usize,
    pub n_rhs: usize,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub kinds: Vec<KindStats>,
    pub verdicts: Vec<OrderingVerdict>,
}

/// Tracking-error and observability inputs of one trajectory kind.
#[derive(Clone, Debug, PartialEq)]
pub struct KindSamples {
    pub kind: TrajectoryKind,
    pub tracking: TrackingSamples,
    pub lambda_min: Vec<f64>,
}

pub fn ordering_verdict(lhs: &KindStats, rhs: &KindStats, slack: f64) -> OrderingVerdict {
    let lm = lhs.tracking.map(|s| s.median);
    let rm = rhs.tracking.map(|s| s.median);
    OrderingVerdict {
        lhs: lhs.kind,
        rhs: rhs.kind,
        lhs_median: lm,
        rhs_median: rm,
        n_lhs: lhs.tracking.map_or(0, |s| s.n),
        n_rhs: rhs.tracking.map_or(0, |s| s.n),
        holds: matches!((lm, rm), (Some(l), Some(r)) if l <= r * (1.0 + slack)),
    }
}

/// Statistics per kind plus the verdicts `SIS ≤ COP` and `COP ≤ E2LOG`.
pub fn campaign_compare(samples: &[KindSamples], slack: f64) -> Result<CampaignStats> {
    let kinds: Vec<KindStats> = samples
        .iter()
        .map(|s| {
            Ok(KindStats {
                kind: s.kind,
                tracking: Summary::from_samples(&s.tracking.errors()),
                lambda_min: Summary::from_samples(&s.lambda_min)
                    .ok_or_else(|| Error::Missing(format!("no observability value for {}", s.kind.name())))?,
                flights: s.tracking.flights.len(),
                diverged: s.tracking.diverged(),
                saturated: s.tracking.saturated(),
            })
        })
        .collect::<Result<_>>()?;
    let find = |k: TrajectoryKind| {
        kinds
            .iter()
            .find(|s| s.kind == k)
            .ok_or_else(|| Error::Missing(format!("trajectory kind {} missing from campaign", k.name())))
    };
    let verdicts = vec![
        ordering_verdict(find(TrajectoryKind::Sis)?, find(TrajectoryKind::Cop)?, slack),
        ordering_verdict(find(TrajectoryKind::Cop)?, find(TrajectoryKind::E2log)?, slack),
    ];
    Ok(CampaignStats { kinds, verdicts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeReport {
    pub amplitude: f64,
    pub stats: CampaignStats,
    pub samples: Vec<(TrajectoryKind, TrackingSamples)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub index: u32,
    pub target: [f64; 4],
    pub seed: u64,
    pub accepted: Option<bool>,
    pub lambda_min: Vec<(TrajectoryKind, f64)>,
    pub amplitudes: Vec<AmplitudeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub seed: u64,
    pub perturbation: Perturbation,
    pub targets: Vec<TargetReport>,
    /// Number of targets on which each verdict held, per amplitude.
    pub verdict_counts: Vec<(f64, String, usize, usize)>,
}

/// Random targets drawn from the campaign box; yaw comes from the mission.
pub fn sample_targets(cfg: &Config) -> Vec<[f64; 4]> {
    let c = &cfg.campaign;
    let mut rng = stream(cfg.seed, Domain::Targets, 0);
    (0..c.targets)
        .map(|_| {
            let mut t = [0.0; 4];
            for d in 0..3 {
                t[d] = c.target_lower[d] + rng.random::<f64>() * (c.target_upper[d] - c.target_lower[d]);
            }
            t[3] = cfg.mission.target[3];
            t
        })
        .collect()
}

/// Configuration of the pipeline for campaign target `index`.
pub fn target_config(cfg: &Config, index: u32, target: [f64; 4]) -> Config {
    let mut c = cfg.clone();
    c.mission.target = target;
    c.seed = child_seed(cfg.seed, Domain::Pipeline, index);
    c
}

/// One trajectory of a campaign with its nominal `λ_min`.
#[derive(Clone, Debug, PartialEq)]
pub struct CampaignTrajectory {
    pub kind: TrajectoryKind,
    pub params: TrajectoryParams,
    pub lambda_min: f64,
}

/// INIT, SIS, E2LOG, and COP of one pipeline run. Stages that did not
/// complete fall back to `a_INIT`.
pub fn trajectory_set(out: &PipelineOutput) -> Vec<CampaignTrajectory> {
    TrajectoryKind::ALL
        .iter()
        .map(|k| CampaignTrajectory {
            kind: *k,
            params: out.params(k.stage()),
            lambda_min: out.record(k.stage()).lambda_min,
        })
        .collect()
}

/// Reads the same set back from a run directory.
pub fn load_trajectory_set(dir: &Path) -> Result<(Config, Vec<CampaignTrajectory>)> {
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))
    };
    let cfg = Config::from_toml(&read("config.toml")?)?;
    let init: Preconditioned = serde_json::from_str(&read("precondition.json")?)?;
    let summary = read_summary(dir)?;
    let init_lambda = summary
        .stages
        .iter()
        .find(|s| s.stage == "init")
        .map(|s| s.lambda_min)
        .ok_or_else(|| Error::Missing("init entry in summary.json".into()))?;
    let mut set = Vec::new();
    for kind in TrajectoryKind::ALL {
        let (params, lambda_min) = match kind.stage() {
            None => (init.params.clone(), init_lambda),
            Some(id) => {
                let stage: StageOutcome = serde_json::from_str(&read(&format!("stage_{}.json", id.name()))?)?;
                match stage.result() {
                    Some(r) => (init.params.with_free(&r.x_best), r.record.lambda_min),
                    None => (init.params.clone(), init_lambda),
                }
            }
        };
        set.push(CampaignTrajectory {
            kind,
            params,
            lambda_min,
        });
    }
    Ok((cfg, set))
}

/// Tracking flights for every trajectory and amplitude. All trajectories of
/// one target share the flight ids `index << 16 ..`, so they see identical
/// parameter draws.
pub fn evaluate_trajectories(cfg: &Config, index: u32, set: &[CampaignTrajectory]) -> Result<Vec<AmplitudeReport>> {
    let ctx = Context::from_config(cfg)?;
    let c = &cfg.campaign;
    c.amplitudes
        .iter()
        .map(|&amplitude| {
            let mut kind_samples = Vec::new();
            for t in set {
                let tracking = monte_carlo_tracking(
                    &ctx,
                    &t.params,
                    amplitude,
                    c.flights,
                    c.perturbation,
                    cfg.seed,
                    index << 16,
                )?;
                kind_samples.push(KindSamples {
                    kind: t.kind,
                    tracking,
                    lambda_min: vec![t.lambda_min],
                });
            }
            Ok(AmplitudeReport {
                amplitude,
                stats: campaign_compare(&kind_samples, c.ordering_slack)?,
                samples: kind_samples.into_iter().map(|k| (k.kind, k.tracking)).collect(),
            })
        })
        .collect()
}

/// Full campaign: one pipeline per sampled target, then the tracking flights.
/// Pipeline run directories are written under `out_dir/target_<i>` when given.
pub fn run_campaign(cfg: &Config, out_dir: Option<&Path>) -> Result<CampaignReport> {
    let c = &cfg.campaign;
    let targets = sample_targets(cfg);
    let work = || -> Result<Vec<TargetReport>> {
        targets
            .par_iter()
            .enumerate()
            .map(|(i, target)| {
                let tcfg = target_config(cfg, i as u32, *target);
                let out = run_pipeline(&tcfg, StageId::Cop)?;
                if let Some(dir) = out_dir {
                    write_run_dir(&dir.join(format!("target_{i}")), &tcfg, &out)?;
                }
                let set = trajectory_set(&out);
                Ok(TargetReport {
                    index: i as u32,
                    target: *target,
                    seed: tcfg.seed,
                    accepted: out.verdict.as_ref().map(|v| v.accepted),
                    lambda_min: set.iter().map(|t| (t.kind, t.lambda_min)).collect(),
                    amplitudes: evaluate_trajectories(cfg, i as u32, &set)?,
                })
            })
            .collect()
    };
    let reports = if c.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(c.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)?
    } else {
        work()?
    };
    let mut verdict_counts = Vec::new();
    for (ai, &amp) in c.amplitudes.iter().enumerate() {
        for vi in 0..2 {
            let first = &reports[0].amplitudes[ai].stats.verdicts[vi];
            let label = format!("{} <= {}", first.lhs.name(), first.rhs.name());
            let held = reports
                .iter()
                .filter(|r| r.amplitudes[ai].stats.verdicts[vi].holds)
                .count();
            verdict_counts.push((amp, label, held, reports.len()));
        }
    }
    let report = CampaignReport {
        seed: cfg.seed,
        perturbation: c.perturbation,
        targets: reports,
        verdict_counts,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(dir.join("campaign.json"), text)?;
        std::fs::write(dir.join("flights.csv"), flights_csv(&report))?;
    }
    Ok(report)
}

/// Plot-ready table with one row per flight.
pub fn flights_csv(report: &CampaignReport) -> String {
    let mut out = String::from("target,amplitude,kind,flight,kf,km,error,saturated\n");
    for t in &report.targets {
        for a in &t.amplitudes {
            for (kind, samples) in &a.samples {
                for f in &samples.flights {
                    let err = f.error.map_or(String::from("nan"), |e| e.to_string());
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        t.index,
                        a.amplitude,
                        kind.name(),
                        f.id,
                        f.p_real.kf,
                        f.p_real.km,
                        err,
                        f.saturated as u8
                    )
                    .unwrap();
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Measurement export

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementTrace {
    pub times: Vec<f64>,
    pub rotor_speeds: Vec<[f64; 4]>,
    pub channels: Vec<&'static str>,
    pub truth: Vec<Vec<f64>>,
    pub measured: Vec<Vec<f64>>,
}

impl MeasurementTrace {
    /// `t, w1..w4` (rad/s) and the measured channels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,w1,w2,w3,w4");
        for c in &self.channels {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for i in 0..self.times.len() {
            write!(out, "{}", self.times[i]).unwrap();
            for w in self.rotor_speeds[i] {
                write!(out, ",{w}").unwrap();
            }
            for y in &self.measured[i] {
                write!(out, ",{y}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Simulates `params` under the nominal model and samples the sensor
/// channels at `rate` Hz. `noise` holds one standard deviation per channel
/// (empty for noiseless output).
pub fn export_measurements(
    ctx: &Context,
    params: &TrajectoryParams,
    model: &MeasurementModel,
    rate: f64,
    noise: &[f64],
    seed: u64,
) -> Result<MeasurementTrace> {
    model.validate()?;
    if !(rate > 0.0) {
        return Err(Error::domain("sample rate must be positive"));
    }
    let n_out = model.n_out();
    if !noise.is_empty() && noise.len() != n_out {
        return Err(Error::Dimension {
            expected: n_out,
            got: noise.len(),
        });
    }
    if noise.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::domain("noise standard deviations must be non-negative"));
    }
    let mut sampled = ctx.clone();
    sampled.integrator.sample_interval = 1.0 / rate;
    let (_, trace) = sampled.fly(params, ctx.p_c)?;
    let mut rng = stream(seed, Domain::Noise, 0);
    let mut truth = Vec::with_capacity(trace.len());
    let mut measured = Vec::with_capacity(trace.len());
    for (s, u) in trace.states.iter().zip(&trace.inputs) {
        let x = s.to_array();
        let z: [f64; AUG_DIM] = std::array::from_fn(|i| match i {
            13 => ctx.p_c.kf,
            14 => ctx.p_c.km,
            _ => x[i],
        });
        let y = measure(model, &ctx.constants, &z, &u.0);
        let noisy = y
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let sigma = noise.get(k).copied().unwrap_or(0.0);
                if sigma > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    v + sigma * n
                } else {
                    *v
                }
            })
            .collect();
        truth.push(y);
        measured.push(noisy);
    }
    Ok(MeasurementTrace {
        times: trace.times.clone(),
        rotor_speeds: trace.inputs.iter().map(|u| u.rotor_speeds()).collect(),
        channels: model.channel_names(),
        truth,
        measured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn summary_of_known_samples() {
        let s = Summary::from_samples(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(
            (s.min, s.q1, s.median, s.q3, s.max, s.mean),
            (1.0, 2.0, 3.0, 4.0, 5.0, 3.0)
        );
        let e = Summary::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((e.q1, e.median, e.q3), (1.75, 2.5, 3.25));
        assert!(Summary::from_samples(&[]).is_none());
    }

    #[test]
    fn perturbation_laws_stay_in_range() {
        for law in [Perturbation::Uniform, Perturbation::NormalClipped] {
            for id in 0..200 {
                let d = unit_perturbation(law, 3, id);
                assert!(d.iter().all(|v| (-1.0..=1.0).contains(v)));
                assert_eq!(d, unit_perturbation(law, 3, id));
            }
        }
        let p = ParamVector { kf: 2.0, km: 4.0 };
        assert_eq!(perturbed(&p, 0.0, [0.7, -0.3]), p);
        assert_eq!(perturbed(&p, 0.1, [1.0, -1.0]), ParamVector { kf: 2.2, km: 3.6 });
    }

    fn kind(k: TrajectoryKind, errors: &[f64]) -> KindSamples {
        KindSamples {
            kind: k,
            tracking: TrackingSamples {
                flights: errors
                    .iter()
                    .enumerate()
                    .map(|(i, e)| Flight {
                        id: i as u32,
                        p_real: ParamVector { kf: 1.0, km: 1.0 },
                        error: Some(*e),
                        saturated: false,
                    })
                    .collect(),
            },
            lambda_min: vec![1.0],
        }
    }

    #[test]
    fn identical_kinds_give_equal_medians() {
        let e = [0.1, 0.3, 0.2];
        let samples: Vec<KindSamples> = TrajectoryKind::ALL.iter().map(|k| kind(*k, &e)).collect();
        let stats = campaign_compare(&samples, 0.0).unwrap();
        let medians: Vec<f64> = stats.kinds.iter().map(|k| k.tracking.unwrap().median).collect();
        assert!(medians.iter().all(|m| *m == medians[0]));
        assert!(stats.verdicts.iter().all(|v| v.holds));
    }

    #[test]
    fn verdict_slack() {
        let samples = vec![
            kind(TrajectoryKind::Init, &[1.0]),
            kind(TrajectoryKind::Sis, &[1.005]),
            kind(TrajectoryKind::Cop, &[1.0]),
            kind(TrajectoryKind::E2log, &[0.5]),
        ];
        let stats = campaign_compare(&samples, 0.01).unwrap();
        assert!(stats.verdicts[0].holds);
        assert!(!stats.verdicts[1].holds);
        assert!(campaign_compare(&samples[..2], 0.01).is_err());
    }

    proptest! {
        #[test]
        fn summary_is_permutation_invariant_and_ordered(mut v in prop::collection::vec(-1e3..1e3f64, 1..40), seed in 0u64..1000) {
            let a = Summary::from_samples(&v).unwrap();
            let mut rng = stream(seed, Domain::Noise, 0);
            for i in (1..v.len()).rev() {
                let j = rng.random_range(0..=i);
                v.swap(i, j);
            }
            let b = Summary::from_samples(&v).unwrap();
            prop_assert_eq!(a.median, b.median);
            prop_assert_eq!(a.q1, b.q1);
            prop_assert_eq!(a.q3, b.q3);
            prop_assert!(a.min <= a.q1 && a.q1 <= a.median && a.median <= a.q3 && a.q3 <= a.max);
            prop_assert!((a.mean - b.mean).abs() <= 1e-9 * (1.0 + a.mean.abs()));
        }
    }
}
