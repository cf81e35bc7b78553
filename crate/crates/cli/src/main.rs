use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use coplan::config::Config;
use coplan::evaluation::{
    evaluate_trajectories, export_measurements, load_trajectory_set, run_campaign, AmplitudeReport, CampaignReport,
};
use coplan::pipeline::{
    precondition, read_summary, read_waypoints, run_selected, summarize, write_run_dir, Context, RunSummary, StageId,
    StageOutcome,
};
use coplan::trajectory::TrajectoryParams;
use coplan::{Error, Result};

/// Control- and observability-aware quadrotor trajectory planning.
#[derive(Parser, Debug)]
#[command(name = "coplan", version)]
struct Cli {
    /// Configuration file (TOML); built-in defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for run artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print a machine-readable JSON summary.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the feasible, target-reaching initial trajectory.
    Precondition,
    /// Optimize one objective or run the whole pipeline.
    Optimize {
        #[arg(long, value_enum, default_value = "pipeline")]
        objective: ObjectiveArg,
    },
    /// Monte Carlo tracking campaign over random targets, or over one existing run.
    Evaluate {
        /// Pipeline run directory to evaluate instead of sampling new targets.
        #[arg(long, value_name = "DIR")]
        run: Option<PathBuf>,
    },
    /// Export sampled sensor measurements and rotor speeds as CSV.
    Export(ExportArgs),
    /// Summarize a run or campaign directory without modifying it.
    Report {
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
    },
    /// Print the effective configuration with every default filled in.
    Config {
        /// Start from the small desk-scale preset.
        #[arg(long)]
        desk: bool,
    },
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Pipeline run directory holding the trajectory.
    #[arg(
        long,
        value_name = "DIR",
        conflicts_with = "waypoints",
        required_unless_present = "waypoints"
    )]
    run: Option<PathBuf>,
    /// Stage of the run to export (init, pi, theta, e2log, sis, cop).
    #[arg(long, default_value = "cop")]
    stage: String,
    /// Way-point JSON file to export instead of a run stage.
    #[arg(long, value_name = "FILE")]
    waypoints: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Pi,
    Theta,
    E2log,
    Sis,
    Cop,
    Pipeline,
}

impl ObjectiveArg {
    fn selection(self) -> Vec<StageId> {
        let individual = [StageId::Pi, StageId::Theta, StageId::E2log];
        match self {
            ObjectiveArg::Pi => vec![StageId::Pi],
            ObjectiveArg::Theta => vec![StageId::Theta],
            ObjectiveArg::E2log => vec![StageId::E2log],
            ObjectiveArg::Sis => [&individual[..], &[StageId::Sis]].concat(),
            ObjectiveArg::Cop => [&individual[..], &[StageId::Cop]].concat(),
            ObjectiveArg::Pipeline => StageId::ALL.to_vec(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(cli: &Cli, value: &Value, text: impl FnOnce() -> String) -> Result<()> {
    if cli.json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{}", text());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Config { desk } => {
            let mut cfg = if *desk { Config::desk() } else { load_config(&cli)? };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::Precondition => cmd_precondition(&cli),
        Command::Optimize { objective } => cmd_optimize(&cli, *objective),
        Command::Evaluate { run } => match run {
            Some(dir) => cmd_evaluate_run(&cli, dir),
            None => cmd_campaign(&cli),
        },
        Command::Export(args) => cmd_export(&cli, args),
        Command::Report { run } => cmd_report(&cli, run),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_precondition(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let ctx = Context::from_config(&cfg)?;
    let pre = precondition(&cfg, &ctx)?;
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
        write_json(&dir.join("precondition.json"), &pre)?;
        write_json(&dir.join("waypoints_init.json"), &pre.params.unpack()?)?;
    }
    let value = json!({
        "seed": cfg.seed,
        "target": pre.target,
        "offset": pre.offset,
        "terminal_error": pre.terminal_error,
        "rotor_margin": pre.rotor_margin,
        "saturated_samples": pre.saturated_samples,
        "attempts": pre.attempts,
    });
    emit(cli, &value, || {
        format!(
            "target        {:?}\noffset        [{:.4}, {:.4}, {:.4}]\nterminal err  {:.3e} m\nrotor margin  {:.4}\nsaturated     {}\nattempts      {}\n",
            pre.target,
            pre.offset[0],
            pre.offset[1],
            pre.offset[2],
            pre.terminal_error,
            pre.rotor_margin,
            pre.saturated_samples,
            pre.attempts
        )
    })
}

fn summary_text(s: &RunSummary) -> String {
    let mut out = format!(
        "seed {}\n{:<7} {:<10} {:>12} {:>12} {:>12} {:>11} {:>6}\n",
        s.seed, "stage", "status", "F_pi", "F_theta", "F_e2log", "term err", "evals"
    );
    for st in &s.stages {
        out += &format!(
            "{:<7} {:<10} {:>12.5e} {:>12.5e} {:>12.5e} {:>11.3e} {:>6}\n",
            st.stage,
            st.status,
            st.objectives.pi,
            st.objectives.theta,
            st.objectives.e2log,
            st.terminal_error,
            st.evaluations
        );
    }
    if !s.degenerate_anchors.is_empty() {
        out += &format!("degenerate anchors {:?}\n", s.degenerate_anchors);
    }
    match s.accepted {
        Some(true) => out += "posterior filter: accepted\n",
        Some(false) => out += "posterior filter: rejected\n",
        None => {}
    }
    out
}

fn cmd_optimize(cli: &Cli, objective: ObjectiveArg) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = run_selected(&cfg, &objective.selection())?;
    if let Some(dir) = &cli.out {
        write_run_dir(dir, &cfg, &out)?;
    }
    for s in &out.stages {
        if let StageOutcome::Failed { stage, reason } | StageOutcome::Skipped { stage, reason } = s {
            eprintln!("note: stage {stage} did not complete: {reason}");
        }
    }
    let summary = summarize(&out);
    emit(cli, &serde_json::to_value(&summary)?, || summary_text(&summary))
}

fn amplitude_text(reports: &[AmplitudeReport]) -> String {
    let mut out = String::new();
    for a in reports {
        out += &format!(
            "amplitude {}\n  {:<6} {:>11} {:>11} {:>11} {:>11} {:>5} {:>4} {:>4}\n",
            a.amplitude, "kind", "q1", "median", "q3", "lambda_min", "n", "div", "sat"
        );
        for k in &a.stats.kinds {
            let (q1, med, q3) = k
                .tracking
                .map_or((f64::NAN, f64::NAN, f64::NAN), |t| (t.q1, t.median, t.q3));
            out += &format!(
                "  {:<6} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>5} {:>4} {:>4}\n",
                k.kind.name(),
                q1,
                med,
                q3,
                k.lambda_min.median,
                k.flights,
                k.diverged,
                k.saturated
            );
        }
        for v in &a.stats.verdicts {
            out += &format!(
                "  median {} <= {}: {} (n = {}, {})\n",
                v.lhs.name(),
                v.rhs.name(),
                if v.holds { "holds" } else { "fails" },
                v.n_lhs,
                v.n_rhs
            );
        }
    }
    out
}

fn cmd_evaluate_run(cli: &Cli, dir: &Path) -> Result<()> {
    let (mut cfg, set) = load_trajectory_set(dir)?;
    if let Some(path) = &cli.config {
        let over = Config::load(path)?;
        cfg.campaign = over.campaign;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let reports = evaluate_trajectories(&cfg, 0, &set)?;
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out)?;
        write_json(&out.join("evaluation.json"), &reports)?;
    }
    emit(cli, &serde_json::to_value(&reports)?, || amplitude_text(&reports))
}

fn campaign_text(r: &CampaignReport) -> String {
    let mut out = String::new();
    for t in &r.targets {
        out += &format!(
            "target {} [{:.3}, {:.3}, {:.3}] filter {}\n",
            t.index,
            t.target[0],
            t.target[1],
            t.target[2],
            match t.accepted {
                Some(true) => "accepted",
                Some(false) => "rejected",
                None => "n/a",
            }
        );
        out += &amplitude_text(&t.amplitudes);
    }
    for (amp, label, held, n) in &r.verdict_counts {
        out += &format!("amplitude {amp}: median {label} holds on {held} of {n} targets\n");
    }
    out
}

fn cmd_campaign(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let report = run_campaign(&cfg, cli.out.as_deref())?;
    let value = json!({
        "seed": report.seed,
        "perturbation": report.perturbation,
        "verdict_counts": report.verdict_counts,
        "targets": report.targets.iter().map(|t| json!({
            "index": t.index,
            "target": t.target,
            "accepted": t.accepted,
            "amplitudes": t.amplitudes.iter().map(|a| &a.stats).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    emit(cli, &value, || campaign_text(&report))
}

fn params_from_waypoints(cfg: &Config, path: &Path) -> Result<TrajectoryParams> {
    let wps = read_waypoints(path)?;
    if wps.len() < 2 {
        return Err(Error::Missing(format!(
            "{}: need at least two way-points",
            path.display()
        )));
    }
    let template = TrajectoryParams {
        free: Vec::new(),
        head: wps[0].clone(),
        tail: wps[wps.len() - 1].clone(),
        interior_times: wps[1..wps.len() - 1].iter().map(|w| w.t).collect(),
        mode: cfg.mission.interior_mode,
    };
    TrajectoryParams::pack(&wps, &template)
}

fn cmd_export(cli: &Cli, args: &ExportArgs) -> Result<()> {
    let (cfg, params, name) = match (&args.run, &args.waypoints) {
        (Some(dir), _) => {
            let (mut cfg, _) = load_trajectory_set(dir)?;
            if let Some(path) = &cli.config {
                cfg.export = Config::load(path)?.export;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let file = dir.join(format!("waypoints_{}.json", args.stage));
            if !file.exists() {
                return Err(Error::Missing(format!(
                    "stage {} has no trajectory in {}",
                    args.stage,
                    dir.display()
                )));
            }
            let params = params_from_waypoints(&cfg, &file)?;
            (cfg, params, args.stage.clone())
        }
        (None, Some(path)) => {
            let cfg = load_config(cli)?;
            let params = params_from_waypoints(&cfg, path)?;
            let name = path
                .file_stem()
                .map_or("trajectory".into(), |s| s.to_string_lossy().into_owned());
            (cfg, params, name)
        }
        (None, None) => return Err(Error::Missing("either --run or --waypoints is required".into())),
    };
    let ctx = Context::from_config(&cfg)?;
    let trace = export_measurements(
        &ctx,
        &params,
        &cfg.observability.model,
        cfg.export.rate,
        &cfg.export.noise,
        cfg.seed,
    )?;
    let csv = trace.to_csv();
    let file = match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let file = dir.join(format!("measurements_{name}.csv"));
            std::fs::write(&file, &csv)?;
            Some(file)
        }
        None => None,
    };
    let value = json!({
        "samples": trace.times.len(),
        "rate": cfg.export.rate,
        "channels": trace.channels,
        "noise": cfg.export.noise,
        "file": file,
    });
    if file.is_none() && !cli.json {
        print!("{csv}");
        return Ok(());
    }
    emit(cli, &value, || {
        format!(
            "{} samples at {} Hz written to {}\n",
            trace.times.len(),
            cfg.export.rate,
            file.as_ref().map_or(String::new(), |f| f.display().to_string())
        )
    })
}

fn cmd_report(cli: &Cli, dir: &Path) -> Result<()> {
    let campaign = dir.join("campaign.json");
    if campaign.exists() {
        let text = std::fs::read_to_string(&campaign)?;
        let report: CampaignReport = serde_json::from_str(&text)?;
        let value = json!({ "seed": report.seed, "verdict_counts": report.verdict_counts });
        return emit(cli, &value, || campaign_text(&report));
    }
    let summary = read_summary(dir)?;
    emit(cli, &serde_json::to_value(&summary)?, || summary_text(&summary))
}
