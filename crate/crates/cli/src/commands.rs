//! The five commands. Inputs are resolved before the output directory is
//! created, so configuration errors leave nothing on disk.

use std::path::PathBuf;
use std::sync::Arc;

use dnls_core::acceptance::{is_unexpected, run_all, Context, Outcome, KNOWN_FAILURES};
use dnls_core::evolution::{evolve_with, Classification, Drift, TrajectoryRecord};
use dnls_core::functionals::FunctionalReport;
use dnls_core::ground_state::{
    ground_state_from_gaussian, local_min_probe, minimize_weinstein, omega_closed_form, sharp_constant, GroundState,
};
use dnls_core::io::csv_line;
use dnls_core::kernel::{classify_regime, DipoleParams, Regime};
use dnls_core::snapshot::Snapshot;
use dnls_core::spectral::{Field3D, Grid, GridSpec};
use dnls_core::threshold::{build_curve, d_of_m, uniform_energy};
use dnls_core::virial::{monitor_i_positivity, virial_series, IPositivityReport, WeightKind};
use log::info;
use serde::Serialize;

use crate::artifacts::ArtifactDir;
use crate::config::{parse_config, Command, RunConfig};
use crate::init::{realize, split_stem};
use crate::{CliError, RunArgs};

/// Perturbation size of the local-minimum probe.
const PROBE_SIZE: f64 = 1e-3;

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Reads and resolves the configuration of `args`.
pub fn resolve_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?,
        None => "{}".to_string(),
    };
    let mut cfg = parse_config(&text, &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.command = cfg.command.or(Some(args.command));
    cfg.validate(args.command)?;
    if args.command == Command::Virial && cfg.evolution.as_ref().is_some_and(|e| e.snapshot_stride.is_some()) {
        return Err(config("evolution.snapshot_stride: not supported by virial; use evolve for snapshots"));
    }
    // The top-level seed drives every random choice of the run.
    cfg.threshold.options.seed = cfg.seed;
    cfg.threshold.d_options.seed = cfg.seed;
    cfg.verify.acceptance.seed = cfg.seed;
    Ok(cfg)
}

/// Everything a command needs besides the output directory.
struct Prepared {
    cfg: RunConfig,
    params: DipoleParams,
    grid: Option<Arc<Grid>>,
    init: Option<Field3D>,
    q1: Option<GroundState>,
}

fn prepare(cfg: RunConfig, command: Command) -> Result<Prepared, CliError> {
    let params = classify_regime(cfg.lambda1, cfg.lambda2);
    let grid = match cfg.grid {
        Some(spec) => Some(Arc::new(Grid::new(spec).map_err(|e| config(format!("grid: {e}")))?)),
        None => None,
    };
    let mut q1 = None;
    match command {
        Command::GroundState => require_unstable(&params)?,
        Command::ThresholdCurve => match &cfg.threshold.ground_state_file {
            Some(path) => {
                let (dir, stem) = split_stem(path);
                let gs = GroundState::load(&dir, &stem)
                    .map_err(|e| config(format!("threshold.ground_state_file ({}): {e}", path.display())))?;
                if gs.alpha != 1.0 {
                    return Err(config(format!(
                        "threshold.ground_state_file: needs the alpha = 1 ground state, file has alpha = {}",
                        gs.alpha
                    )));
                }
                if gs.params.lambda1 != params.lambda1 || gs.params.lambda2 != params.lambda2 {
                    return Err(config(format!(
                        "threshold.ground_state_file: computed for ({}, {}), config has ({}, {})",
                        gs.params.lambda1, gs.params.lambda2, params.lambda1, params.lambda2
                    )));
                }
                q1 = Some(gs);
            }
            None => require_unstable(&params)?,
        },
        _ => {}
    }
    let init = match &cfg.init {
        Some(desc) if matches!(command, Command::GroundState | Command::Evolve | Command::Virial) => {
            Some(realize(desc, grid.as_ref(), &params).map_err(config)?)
        }
        _ => None,
    };
    Ok(Prepared {
        cfg,
        params,
        grid,
        init,
        q1,
    })
}

fn require_unstable(p: &DipoleParams) -> Result<(), CliError> {
    if p.regime != Regime::Unstable {
        return Err(config(format!(
            "lambda1, lambda2: ({}, {}) is not in the unstable regime, which has no ground state",
            p.lambda1, p.lambda2
        )));
    }
    Ok(())
}

/// Runs one command and returns its output directory. The manifest is
/// written whenever the directory was created, including on failure.
pub fn run(args: &RunArgs) -> Result<PathBuf, CliError> {
    let cfg = resolve_config(args)?;
    let out_dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("dnls-{}", args.command)));
    let prepared = prepare(cfg, args.command)?;
    let mut out = ArtifactDir::create(&out_dir)?;
    // The directory is left out so identical runs hash identically.
    let resolved = RunConfig {
        output_dir: None,
        ..prepared.cfg.clone()
    };
    let result = out
        .write_json("resolved_config.json", &resolved)
        .and_then(|()| dispatch(args.command, &prepared, &mut out));
    out.finish(&args.command.to_string(), &result)?;
    result.map(|()| out_dir)
}

fn dispatch(command: Command, p: &Prepared, out: &mut ArtifactDir) -> Result<(), CliError> {
    match command {
        Command::GroundState => ground_state(p, out).map(|_| ()),
        Command::ThresholdCurve => threshold_curve(p, out),
        Command::Evolve => evolve(p, out),
        Command::Virial => virial(p, out),
        Command::Verify => verify(p, out),
    }
}

#[derive(Serialize)]
struct GroundStateSummary {
    alpha: f64,
    lambda1: f64,
    lambda2: f64,
    grid: GridSpec,
    omega: f64,
    omega_closed_form: f64,
    c_alpha: f64,
    sharp_constant: f64,
    weinstein: f64,
    elliptic_residual: f64,
    pohozaev_residuals: [f64; 2],
    iterations: usize,
    local_min_probe: Option<f64>,
    boundary_amplitude: f64,
    report: FunctionalReport,
}

fn save_ground_state(gs: &GroundState, out: &mut ArtifactDir, stem: &str) -> Result<(), CliError> {
    gs.save(out.root(), stem).map_err(config)?;
    out.record(&format!("{stem}.snap"));
    out.record(&format!("{stem}.json"));
    let mut csv = String::from("iteration,objective\n");
    for (i, v) in gs.descent_history.iter().enumerate() {
        csv.push_str(&format!("{i},{}\n", csv_line(&[*v])));
    }
    out.write(&format!("{stem}_descent.csv"), csv.as_bytes())
}

fn compute_ground_state(p: &Prepared, alpha: f64) -> Result<GroundState, CliError> {
    let opts = &p.cfg.ground_state.options;
    let gs = match &p.init {
        Some(init) => minimize_weinstein(&p.params, alpha, init, opts),
        None => {
            let grid = p.grid.as_ref().ok_or_else(|| config("grid: required"))?;
            ground_state_from_gaussian(&p.params, alpha, grid, opts)
        }
    };
    gs.map_err(numerical)
}

fn ground_state(p: &Prepared, out: &mut ArtifactDir) -> Result<GroundState, CliError> {
    let alpha = p.cfg.ground_state.alpha;
    info!("minimizing the Weinstein quotient for alpha = {alpha}");
    let gs = compute_ground_state(p, alpha)?;
    save_ground_state(&gs, out, "ground_state")?;
    let trials = p.cfg.ground_state.probe_trials;
    let probe = (trials > 0).then(|| local_min_probe(&gs, trials, PROBE_SIZE, p.cfg.seed));
    let summary = GroundStateSummary {
        alpha,
        lambda1: p.params.lambda1,
        lambda2: p.params.lambda2,
        grid: gs.field.grid().spec(),
        omega: gs.omega,
        omega_closed_form: omega_closed_form(&gs.report, alpha),
        c_alpha: gs.c_alpha,
        sharp_constant: sharp_constant(&gs),
        weinstein: gs.weinstein,
        elliptic_residual: gs.elliptic_residual,
        pohozaev_residuals: gs.pohozaev_residuals,
        iterations: gs.iterations,
        local_min_probe: probe,
        boundary_amplitude: gs.field.boundary_amplitude(),
        report: gs.report,
    };
    out.write_json("summary.json", &summary)?;
    Ok(gs)
}

fn threshold_curve(p: &Prepared, out: &mut ArtifactDir) -> Result<(), CliError> {
    let computed;
    let q1 = match &p.q1 {
        Some(q) => q,
        None => {
            info!("computing Q_1");
            computed = compute_ground_state(p, 1.0)?;
            save_ground_state(&computed, out, "ground_state")?;
            &computed
        }
    };
    let section = &p.cfg.threshold;
    info!("building the threshold curve with {} samples", section.options.samples);
    let curve = build_curve(q1, &section.options).map_err(numerical)?;
    out.write("threshold_curve.csv", curve.to_csv().as_bytes())?;
    #[derive(Serialize)]
    struct CurveSummary {
        #[serde(flatten)]
        metadata: dnls_core::threshold::CurveMetadata,
        monotonicity_defect: f64,
    }
    out.write_json(
        "threshold_curve.json",
        &CurveSummary {
            metadata: curve.metadata(),
            monotonicity_defect: curve.monotonicity_defect(),
        },
    )?;
    if !section.d_factors.is_empty() {
        let l = q1.field.grid().box_length();
        let mut csv = String::from("mass_factor,mass,d,uniform_energy\n");
        for f in &section.d_factors {
            let m = f * curve.mass_q1;
            let d = d_of_m(m, q1, &section.d_options);
            csv.push_str(&csv_line(&[*f, m, d, uniform_energy(m, l, &q1.params)]));
            csv.push('\n');
        }
        out.write("d_values.csv", csv.as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvolutionSummary {
    grid: GridSpec,
    dt: f64,
    t_final: f64,
    steps: usize,
    outputs: usize,
    classification: Classification,
    trusted_until: f64,
    aborted_at: Option<usize>,
    drift: Drift,
    initial: Option<FunctionalReport>,
    last: Option<FunctionalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight: Option<WeightKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vpp_discrepancy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    boundary_flag: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    i_positivity: Option<IPositivityReport>,
}

impl EvolutionSummary {
    fn new(u0: &Field3D, cfg: &dnls_core::evolution::EvolutionConfig, traj: &TrajectoryRecord) -> Self {
        Self {
            grid: u0.grid().spec(),
            dt: cfg.dt,
            t_final: cfg.t_final,
            steps: cfg.steps(),
            outputs: traj.times.len(),
            classification: traj.classification,
            trusted_until: traj.trusted_until,
            aborted_at: traj.aborted_at,
            drift: traj.drift,
            initial: traj.rows.first().copied(),
            last: traj.rows.last().copied(),
            weight: None,
            vpp_discrepancy: None,
            boundary_flag: None,
            i_positivity: None,
        }
    }
}

fn aborted(traj: &TrajectoryRecord) -> Result<(), CliError> {
    match traj.aborted_at {
        Some(step) => Err(numerical(format!("field became non-finite at step {step}"))),
        None => Ok(()),
    }
}

fn initial_field(p: &Prepared) -> Result<&Field3D, CliError> {
    p.init.as_ref().ok_or_else(|| config("init: required"))
}

fn evolve(p: &Prepared, out: &mut ArtifactDir) -> Result<(), CliError> {
    let u0 = initial_field(p)?;
    let cfg = p.cfg.evolution.as_ref().ok_or_else(|| config("evolution: required"))?.to_config();
    info!("evolving {} steps of dt = {}", cfg.steps(), cfg.dt);
    let mut write_error = None;
    let traj = evolve_with(u0, &cfg, &p.params, |step, t, u| {
        if write_error.is_some() {
            return;
        }
        let bytes = Snapshot::from_field(u, t).encode();
        if let Err(e) = out.write(&format!("snapshots/step_{step:06}.snap"), &bytes) {
            write_error = Some(e);
        }
    })
    .map_err(config)?;
    if let Some(e) = write_error {
        return Err(e);
    }
    out.write("trajectory.csv", traj.to_csv().as_bytes())?;
    out.write_json("summary.json", &EvolutionSummary::new(u0, &cfg, &traj))?;
    aborted(&traj)
}

fn virial(p: &Prepared, out: &mut ArtifactDir) -> Result<(), CliError> {
    let u0 = initial_field(p)?;
    let cfg = p.cfg.evolution.as_ref().ok_or_else(|| config("evolution: required"))?.to_config();
    let section = &p.cfg.virial;
    info!("virial run with weight {:?}", section.weight);
    let (traj, series) = virial_series(u0, &cfg, &p.params, section.weight).map_err(config)?;
    out.write("trajectory.csv", traj.to_csv().as_bytes())?;
    out.write("virial.csv", series.to_csv().as_bytes())?;
    let mut summary = EvolutionSummary::new(u0, &cfg, &traj);
    summary.weight = Some(section.weight);
    summary.vpp_discrepancy = Some(series.vpp_discrepancy());
    summary.boundary_flag = Some(series.boundary_flag);
    summary.i_positivity = Some(monitor_i_positivity(&traj, section.eta_fraction));
    out.write_json("summary.json", &summary)?;
    aborted(&traj)
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    outcomes: &'a [Outcome],
    known_failures: &'a [&'a str],
    passed: usize,
    failed: usize,
    unexpected: Vec<&'a str>,
}

/// The line printed for one criterion.
pub fn outcome_line(o: &Outcome) -> String {
    let known = KNOWN_FAILURES.contains(&o.id.as_str());
    format!("{}{}", o.line(), if known { " (known failure)" } else { "" })
}

fn verify(p: &Prepared, out: &mut ArtifactDir) -> Result<(), CliError> {
    let section = &p.cfg.verify;
    let ctx = Context::new(section.acceptance.clone());
    let outcomes = run_all(&ctx, &section.only, |o| println!("{}", outcome_line(o)));
    if outcomes.is_empty() {
        return Err(config(format!("verify.only: {:?} matches no criterion", section.only)));
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    let report = VerifyReport {
        outcomes: &outcomes,
        known_failures: KNOWN_FAILURES,
        passed: outcomes.len() - failed,
        failed,
        unexpected: outcomes.iter().filter(|o| is_unexpected(o)).map(|o| o.id.as_str()).collect(),
    };
    out.write_json("verify.json", &report)?;
    println!("verify: {} passed, {failed} failed", report.passed);
    if report.unexpected.is_empty() {
        Ok(())
    } else {
        Err(numerical(format!("unexpected outcome: {}", report.unexpected.join(", "))))
    }
}
