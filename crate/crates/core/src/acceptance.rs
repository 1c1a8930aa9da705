//! The acceptance suite. Each criterion evaluates a list of checks against
//! fixed tolerances; expensive objects (ground states, the threshold curve,
//! trajectories) are built once per [`Context`] and shared.

use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evolution::{evolve, evolve_with, EvolutionConfig, Stepper, TrajectoryRecord};
use crate::functionals::{galilean_boost, report, FunctionalReport};
use crate::ground_state::{
    elliptic_residual, ground_state_from_gaussian, minimize_weinstein, omega_closed_form, sharp_constant,
    GroundState, WeinsteinOptions,
};
use crate::kernel::{classify_regime, DipoleParams, KHAT_MAX, KHAT_MIN};
use crate::oracle::Gaussian;
use crate::spectral::{make_grid, Field3D, C64};
use crate::threshold::{
    build_curve, build_s, minimal_feasible_mass, d_of_m, embed_in_larger_box, gn_bound_margin, in_region_k, mass_ratio_s,
    project_to_i_zero, raise_mass, raised_energy_bound, random_trial_fields, script_e, DOptions, SProfile,
    ThresholdCurve, ThresholdOptions,
};
use crate::virial::{covering_radius, virial_series, virial_vpp, virial_eval, VirialSeries, VirialWeight, WeightKind};

/// Desk-scale settings of the suite.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceConfig {
    pub n: usize,
    pub box_length: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub threshold: ThresholdOptions,
    /// Grid of the anisotropic dipolar oracle check.
    pub oracle_n: usize,
    pub oracle_box: f64,
    /// Dipolar parameter of the static virial identity check.
    pub virial_lambda2: f64,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self {
            n: 64,
            box_length: 112.0,
            lambda1: -1.0,
            lambda2: 0.0,
            seed: 0,
            threshold: ThresholdOptions::default(),
            oracle_n: 192,
            oracle_box: 80.0,
            virial_lambda2: 0.4,
        }
    }
}

/// One comparison of a computed value against its tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: format!("< {tol:.1e}"),
            passed: value < tol,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, floor: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: format!(">= {floor:.4e}"),
            passed: value >= floor,
        }
    }

    pub fn in_range(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: format!("in [{lo:.4e}, {hi:.4e}]"),
            passed: (lo..=hi).contains(&value),
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            bound: "holds".into(),
            passed: ok,
        }
    }

    fn error(name: &str, err: impl fmt::Display) -> Self {
        Self {
            name: format!("{name}: {err}"),
            value: f64::NAN,
            bound: "available".into(),
            passed: false,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {:.4e} ({})", self.name, self.value, self.bound)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Outcome {
    pub id: String,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// `PASS id: check; check; ...`.
    pub fn line(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let checks: Vec<String> = self.checks.iter().map(|c| c.to_string()).collect();
        format!("{status} {}: {} [{:.1} s]", self.id, checks.join("; "), self.seconds)
    }
}

/// Trajectories of random data in the region below the threshold curve.
pub struct RegionRun {
    pub initial: FunctionalReport,
    pub trajectory: TrajectoryRecord,
    pub virial: VirialSeries,
    pub radius: f64,
}

/// Shared, lazily built objects.
pub struct Context {
    pub config: AcceptanceConfig,
    pub params: DipoleParams,
    q: [OnceLock<Result<GroundState, String>>; 3],
    s: OnceLock<Result<SProfile, String>>,
    curve: OnceLock<Result<ThresholdCurve, String>>,
    region_runs: OnceLock<Result<Vec<RegionRun>, String>>,
    doubled: OnceLock<Result<GroundState, String>>,
}

pub const ALPHAS: [f64; 3] = [0.5, 1.0, 2.0];

impl Context {
    pub fn new(config: AcceptanceConfig) -> Self {
        let params = classify_regime(config.lambda1, config.lambda2);
        Self {
            config,
            params,
            q: Default::default(),
            s: OnceLock::new(),
            curve: OnceLock::new(),
            region_runs: OnceLock::new(),
            doubled: OnceLock::new(),
        }
    }

    pub fn ground_state(&self, alpha: f64) -> Result<&GroundState, String> {
        let idx = ALPHAS.iter().position(|a| *a == alpha).expect("alpha in the suite");
        self.q[idx]
            .get_or_init(|| {
                info!("computing the ground state for alpha = {alpha}");
                let grid = make_grid(self.config.n, self.config.box_length).map_err(|e| e.to_string())?;
                ground_state_from_gaussian(&self.params, alpha, &grid, &WeinsteinOptions::default()).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    pub fn q1(&self) -> Result<&GroundState, String> {
        self.ground_state(1.0)
    }

    pub fn s_profile(&self) -> Result<&SProfile, String> {
        self.s
            .get_or_init(|| build_s(self.q1()?).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(Clone::clone)
    }

    pub fn curve(&self) -> Result<&ThresholdCurve, String> {
        self.curve
            .get_or_init(|| {
                info!("building the threshold curve");
                let opts = ThresholdOptions {
                    seed: self.config.seed,
                    ..self.config.threshold.clone()
                };
                build_curve(self.q1()?, &opts).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// `Q_1` recomputed in a box of twice the length at the same spacing,
    /// starting from the zero-padded field.
    pub fn doubled_q1(&self) -> Result<&GroundState, String> {
        self.doubled
            .get_or_init(|| {
                let q = self.q1()?;
                let big = embed_in_larger_box(&q.field, 2).map_err(|e| e.to_string())?;
                minimize_weinstein(&self.params, 1.0, &big, &WeinsteinOptions::default()).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    pub fn region_runs(&self) -> Result<&[RegionRun], String> {
        self.region_runs
            .get_or_init(|| build_region_runs(self))
            .as_ref()
            .map(|v| v.as_slice())
            .map_err(Clone::clone)
    }
}

/// `epsilon_curve * E(S)`.
fn epsilon(curve: &ThresholdCurve) -> f64 {
    curve.epsilon()
}

fn build_region_runs(ctx: &Context) -> Result<Vec<RegionRun>, String> {
    let curve = ctx.curve()?;
    let p = &ctx.params;
    let grid = make_grid(48, 30.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.seed ^ 0x6b);
    let mut runs = Vec::new();
    let mut attempts = 0;
    while runs.len() < 10 {
        attempts += 1;
        if attempts > 400 {
            return Err(format!("only {} random fields in the region after 400 draws", runs.len()));
        }
        let widths = [0; 3].map(|_| rng.gen_range(2.0..3.2));
        let g = Gaussian { amp: 1.0, widths };
        let mass = rng.gen_range(0.2..0.98) * curve.mass_q1;
        let xi = [0; 3].map(|_| rng.gen_range(-0.3..0.3));
        let amp = (mass / g.mass()).sqrt();
        let u = Field3D::from_fn(&grid, |x| C64::from_polar(amp * g.eval(x), xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2]));
        let r = report(&u, p);
        if !(in_region_k(r.mass, r.energy, curve) && r.i_value > 0.0) {
            continue;
        }
        let cfg = EvolutionConfig {
            dt: EvolutionConfig::default_dt(&u),
            t_final: 3.0,
            output_stride: 6,
            snapshot_stride: Some(6),
            ..EvolutionConfig::default()
        };
        let mut fields = Vec::new();
        let trajectory = evolve_with(&u, &cfg, p, |_, t, f| fields.push((t, f.clone()))).map_err(|e| e.to_string())?;
        // the ball must hold the mass over the whole trusted window
        let radius = fields
            .iter()
            .filter(|(t, _)| *t <= trajectory.trusted_until)
            .map(|(_, f)| covering_radius(f, 0.99999))
            .fold(0.0, f64::max);
        let w = VirialWeight::new(&grid, WeightKind::Localized { radius });
        let evals: Vec<_> = fields.iter().map(|(_, f)| virial_eval(f, &w, p)).collect();
        let virial = VirialSeries::from_evaluations(fields.iter().map(|(t, _)| *t).collect(), &evals);
        info!("region run {}: M = {:.3}, E = {:.4}, I = {:.4}", runs.len(), r.mass, r.energy, r.i_value);
        runs.push(RegionRun {
            initial: r,
            trajectory,
            virial,
            radius,
        });
    }
    Ok(runs)
}

/// A criterion of the suite.
pub struct Criterion {
    pub id: &'static str,
    pub title: &'static str,
    pub run: fn(&Context) -> Vec<Check>,
}

pub const CRITERIA: &[Criterion] = &[
    Criterion {
        id: "kernel-symbol-range",
        title: "max and min of the dipole symbol on a 64^3 lattice",
        run: kernel_symbol_range,
    },
    Criterion {
        id: "radial-null-dipolar",
        title: "isotropic Gaussian has no dipolar energy",
        run: radial_null_dipolar,
    },
    Criterion {
        id: "anisotropic-dipolar-oracle",
        title: "dipolar energy of an axial Gaussian against quadrature",
        run: anisotropic_dipolar_oracle,
    },
    Criterion {
        id: "ground-state-q1",
        title: "Pohozaev, energy, N/G, elliptic residual and omega of Q_1",
        run: ground_state_q1,
    },
    Criterion {
        id: "sharp-constant",
        title: "C_alpha W(Q_alpha) = 1 and C_1 through S",
        run: sharp_constant_consistency,
    },
    Criterion {
        id: "s-anchors",
        title: "mass ratio, Gamma and I of S",
        run: s_anchors,
    },
    Criterion {
        id: "threshold-curve",
        title: "curve end value, monotonicity, infeasibility below M(S), d above M(Q_1)",
        run: threshold_curve,
    },
    Criterion {
        id: "scaling-algebra",
        title: "I(u^s) = s dE/ds and the mass-raising construction",
        run: scaling_algebra,
    },
    Criterion {
        id: "evolution",
        title: "mass drift, energy-drift order, time reversal, Galilean covariance",
        run: evolution_checks,
    },
    Criterion {
        id: "virial-identities",
        title: "V'' = 8I, V'' against finite differences, localized lower bound",
        run: virial_identities,
    },
    Criterion {
        id: "i-positivity",
        title: "min I(u(t)) >= I(u0)/2 for data below the curve",
        run: i_positivity,
    },
    Criterion {
        id: "box-robustness",
        title: "M(Q_1), C_1 and the curve at M(S) under box doubling",
        run: box_robustness,
    },
];

/// Criteria that fail at their stated tolerance. They still run and report
/// FAIL; callers treat a failure of these as expected and a pass as news.
// i-positivity: sextic-dominated Gaussians below M(S) disperse with
// I(u(t)) -> 2E < I(u0)/2, so the fixed fraction cannot hold on all data.
pub const KNOWN_FAILURES: &[&str] = &["i-positivity"];

/// Whether the outcome differs from the expectation in [`KNOWN_FAILURES`].
pub fn is_unexpected(o: &Outcome) -> bool {
    o.passed() == KNOWN_FAILURES.contains(&o.id.as_str())
}

pub fn run_criterion(ctx: &Context, c: &Criterion) -> Outcome {
    let t = std::time::Instant::now();
    let checks = (c.run)(ctx);
    Outcome {
        id: c.id.to_string(),
        checks,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// Runs the criteria whose id contains one of `filters` (all when empty),
/// calling `on_outcome` as each finishes.
pub fn run_all<S: AsRef<str>>(ctx: &Context, filters: &[S], mut on_outcome: impl FnMut(&Outcome)) -> Vec<Outcome> {
    CRITERIA
        .iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| c.id.contains(f.as_ref())))
        .map(|c| {
            let o = run_criterion(ctx, c);
            on_outcome(&o);
            o
        })
        .collect()
}

fn kernel_symbol_range(_: &Context) -> Vec<Check> {
    let grid = match make_grid(64, 32.0) {
        Ok(g) => g,
        Err(e) => return vec![Check::error("grid", e)],
    };
    let table = grid.dipole_table();
    let max = table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = table.iter().copied().fold(f64::INFINITY, f64::min);
    vec![
        Check::below("|max khat - 8pi/3|", (max - KHAT_MAX).abs(), 1e-12),
        Check::below("|min khat + 4pi/3|", (min - KHAT_MIN).abs(), 1e-12),
    ]
}

fn radial_null_dipolar(_: &Context) -> Vec<Check> {
    let grid = make_grid(64, 24.0).expect("valid grid");
    let g = Gaussian::isotropic(1.0, 1.7);
    let u = Field3D::from_real_fn(&grid, |x| g.eval(x));
    let r = report(&u, &classify_regime(-1.0, 0.5));
    vec![Check::below("|D| / ||u||_4^4", (r.dipolar / r.quartic).abs(), 1e-10)]
}

fn anisotropic_dipolar_oracle(ctx: &Context) -> Vec<Check> {
    let grid = match make_grid(ctx.config.oracle_n, ctx.config.oracle_box) {
        Ok(g) => g,
        Err(e) => return vec![Check::error("grid", e)],
    };
    [Gaussian::axial(1.0, 1.0, 1.6), Gaussian::axial(1.0, 1.5, 0.9)]
        .iter()
        .map(|g| {
            let u = Field3D::from_real_fn(&grid, |x| g.eval(x));
            let d = crate::kernel::dipolar_energy(&u);
            let oracle = g.dipolar();
            Check::below(
                format!("|D / D_oracle - 1| (widths {:?})", g.widths),
                (d / oracle - 1.0).abs(),
                1e-6,
            )
        })
        .collect()
}

fn ground_state_q1(ctx: &Context) -> Vec<Check> {
    let q = match ctx.q1() {
        Ok(q) => q,
        Err(e) => return vec![Check::error("Q_1", e)],
    };
    let r = &q.report;
    let omega_closed = omega_closed_form(r, 1.0);
    let omega_pohozaev = r.n_value / (4.0 * r.mass);
    vec![
        Check::below("Pohozaev residual 1", q.pohozaev_residuals[0], 1e-5),
        Check::below("Pohozaev residual 2", q.pohozaev_residuals[1], 1e-5),
        Check::below("|E| / G", (r.energy / r.kinetic).abs(), 1e-4),
        Check::below("|N / G - 8/3|", (r.n_value / r.kinetic - 8.0 / 3.0).abs(), 1e-4),
        Check::below("elliptic residual", elliptic_residual(q), 1e-4),
        Check::below("|omega_closed / (N / 4M) - 1|", (omega_closed / omega_pohozaev - 1.0).abs(), 1e-4),
    ]
}

fn sharp_constant_consistency(ctx: &Context) -> Vec<Check> {
    let mut checks = Vec::new();
    for alpha in ALPHAS {
        match ctx.ground_state(alpha) {
            Ok(q) => checks.push(Check::below(
                format!("|C W - 1| (alpha = {alpha})"),
                (sharp_constant(q) * q.weinstein - 1.0).abs(),
                1e-6,
            )),
            Err(e) => checks.push(Check::error(&format!("Q_{alpha}"), e)),
        }
    }
    match (ctx.q1(), ctx.s_profile()) {
        (Ok(q), Ok(s)) => {
            let via_s = 16.0 / 9.0 * 3f64.powf(0.25) / s.resampled.mass.sqrt();
            checks.push(Check::below("|C_1 / ((16/9) 3^(1/4) / ||S||_2) - 1|", (sharp_constant(q) / via_s - 1.0).abs(), 1e-5));
        }
        (Err(e), _) | (_, Err(e)) => checks.push(Check::error("S", e)),
    }
    checks
}

fn s_anchors(ctx: &Context) -> Vec<Check> {
    let (q, s) = match (ctx.q1(), ctx.s_profile()) {
        (Ok(q), Ok(s)) => (q, s),
        (Err(e), _) | (_, Err(e)) => return vec![Check::error("S", e)],
    };
    let (a, r) = (&s.algebraic, &s.resampled);
    vec![
        Check::below("|M(S)/M(Q_1) - 4/(3 sqrt 3)| (algebraic)", (a.mass / q.report.mass - mass_ratio_s()).abs(), 1e-12),
        Check::below("|Gamma(S) - 1/3| (algebraic)", (a.gamma - 1.0 / 3.0).abs(), 1e-6),
        Check::below("|I(S)| / G(S) (algebraic)", (a.i_value / a.kinetic).abs(), 1e-6),
        Check::below("|Gamma(S) - 1/3| (resampled)", (r.gamma - 1.0 / 3.0).abs(), 1e-3),
        Check::below("|I(S)| / G(S) (resampled)", (r.i_value / r.kinetic).abs(), 1e-3),
    ]
}

fn threshold_curve(ctx: &Context) -> Vec<Check> {
    let (q, curve) = match (ctx.q1(), ctx.curve()) {
        (Ok(q), Ok(c)) => (q, c),
        (Err(e), _) | (_, Err(e)) => return vec![Check::error("curve", e)],
    };
    let eps = epsilon(curve);
    let mut checks = Vec::new();
    let last = curve.samples.last().and_then(|s| s.value.finite());
    checks.push(match last {
        Some(v) => Check::in_range("E-curve(M(Q_1))", v, -eps, eps),
        None => Check::error("E-curve(M(Q_1))", "infeasible"),
    });
    let all_feasible = curve.samples.iter().all(|s| s.value.is_finite());
    checks.push(Check::flag("every sample on [M(S), M(Q_1)] feasible", all_feasible));
    checks.push(Check::below("max (E_{i+1} - E_i)", curve.monotonicity_defect(), eps));
    let m_low = 0.5 * curve.mass_s;
    let trials = random_trial_fields(q, m_low, 100, ctx.config.seed ^ 0x1f);
    let mass_s = curve.mass_s;
    let (mut min_i, mut min_gn) = (f64::INFINITY, f64::INFINITY);
    for u in &trials {
        let r = report(u, &q.params);
        min_i = min_i.min(r.i_value / r.kinetic);
        let scale = 4.0 / 3.0 * (r.mass / mass_s).sqrt() * (r.kinetic + r.sextic);
        min_gn = min_gn.min(gn_bound_margin(&r, mass_s) / scale);
    }
    checks.push(Check::at_least("min I / G over 100 trials at M(S)/2", min_i, -1e-8));
    checks.push(Check::at_least("min GN margin (relative) over the trials", min_gn, -1e-6));
    let (v, used) = script_e(m_low, q, &ThresholdOptions { seed: ctx.config.seed, ..ctx.config.threshold.clone() });
    checks.push(Check::flag(format!("E-curve(M(S)/2) infeasible ({used} restarts feasible)"), !v.is_finite()));
    let d = d_of_m(1.2 * curve.mass_q1, q, &DOptions { seed: ctx.config.seed, ..DOptions::default() });
    checks.push(Check::below("d(1.2 M(Q_1)) + eps", d + eps, 0.0));
    checks
}

fn scaling_algebra(ctx: &Context) -> Vec<Check> {
    let p = ctx.params;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.seed ^ 0x5ca1e);
    let grid = make_grid(32, 24.0).expect("valid grid");
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut reports = Vec::new();
    for _ in 0..20 {
        let widths = [0; 3].map(|_| rng.gen_range(1.0..2.5));
        let amp = rng.gen_range(0.3..1.6);
        let g = Gaussian { amp, widths };
        let xi = [0; 3].map(|_| rng.gen_range(-0.5..0.5));
        let u = Field3D::from_fn(&grid, |x| C64::from_polar(g.eval(x), xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2]));
        let r = report(&u, &p);
        let poly = r.scale_polys();
        let s = rng.gen_range(0.5..2.0);
        let fd = (poly.e_at(s + h) - poly.e_at(s - h)) / (2.0 * h);
        let scale = poly.a * s * s + poly.b.abs() * s.powi(3) + poly.c * s.powi(6);
        worst = worst.max((poly.i_at(s) - s * fd).abs() / scale);
        reports.push(r);
    }
    let mut checks = vec![Check::below("max |I(u^s) - s dE/ds| / scale over 20 fields", worst, 1e-6)];
    let s = match ctx.s_profile() {
        Ok(s) => s,
        Err(e) => {
            checks.push(Check::error("S", e));
            return checks;
        }
    };
    let eps = ctx.config.threshold.epsilon_curve * s.algebraic.energy;
    let (mut mass_err, mut i_err, mut energy_excess) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    let mut constrained = vec![s.algebraic];
    for r in &reports {
        let Some(m_min) = minimal_feasible_mass(r).finite() else {
            continue;
        };
        let a = (rng.gen_range(1.1..1.6) * m_min / r.mass).sqrt();
        if let Ok(x) = project_to_i_zero(&r.rescaled(a, 1.0, &p), &p) {
            constrained.push(x.report);
        }
    }
    for u in &constrained {
        for factor in [1.05, 1.2, 1.5] {
            let target = factor * u.mass;
            let Ok((v, _, _)) = raise_mass(u, target, &p) else {
                continue;
            };
            mass_err = mass_err.max((v.mass / target - 1.0).abs());
            i_err = i_err.max((v.i_value / v.kinetic).abs());
            energy_excess = energy_excess.max(v.energy - raised_energy_bound(u, target));
        }
    }
    checks.push(Check::at_least("I = 0 states raised", constrained.len() as f64, 21.0));
    checks.push(Check::below("max |M(v)/m' - 1|", mass_err, 1e-12));
    checks.push(Check::below("max |I(v)| / G(v)", i_err, 1e-10));
    checks.push(Check::below("max E(v) - bound", energy_excess, eps));
    checks
}

fn evolution_checks(_: &Context) -> Vec<Check> {
    let p = classify_regime(-1.0, 0.4);
    let mut checks = Vec::new();
    let grid = make_grid(32, 20.0).expect("valid grid");
    let g = Gaussian::axial(0.8, 1.3, 1.8);
    let u = Field3D::from_real_fn(&grid, |x| g.eval(x));
    let cfg = EvolutionConfig {
        dt: EvolutionConfig::default_dt(&u),
        output_stride: 1000,
        ..EvolutionConfig::default()
    };
    let cfg = EvolutionConfig {
        t_final: 1000.0 * cfg.dt,
        ..cfg
    };
    match evolve(&u, &cfg, &p) {
        Ok(tr) => checks.push(Check::below("mass drift over 1000 steps", tr.drift.mass, 1e-11)),
        Err(e) => checks.push(Check::error("evolve", e)),
    }
    let drift = |dt: f64| {
        let cfg = EvolutionConfig {
            dt,
            t_final: 0.5,
            output_stride: 1,
            ..EvolutionConfig::default()
        };
        evolve(&u, &cfg, &p).map(|t| t.drift.energy).unwrap_or(f64::NAN)
    };
    let (d1, d2) = (drift(0.01), drift(0.005));
    checks.push(Check::in_range("energy drift ratio dt / (dt/2)", d1 / d2, 3.5, 4.5));
    let dt = 0.005;
    let (fwd, bwd) = (Stepper::new(&u, dt, &p), Stepper::new(&u, -dt, &p));
    let mut v = u.clone();
    for _ in 0..200 {
        v = fwd.step(&v);
    }
    for _ in 0..200 {
        v = bwd.step(&v);
    }
    checks.push(Check::below("time reversal L2 error", v.relative_l2_distance(&u), 1e-6));
    checks.push(Check::below("Galilean covariance L2 error", galilean_error(&p), 1e-5));
    checks
}

/// Relative L2 distance between the evolution of a boosted Gaussian and the
/// boosted, translated evolution of the Gaussian.
pub fn galilean_error(p: &DipoleParams) -> f64 {
    let (n, l) = (64, 20.0);
    let grid = make_grid(n, l).expect("valid grid");
    let g = Gaussian::axial(0.8, 1.3, 1.8);
    let u = Field3D::from_real_fn(&grid, |x| g.eval(x));
    let k0 = 2.0 * PI / l;
    let xi = [k0, 0.0, 2.0 * k0];
    let (dt, steps) = (0.005, 40);
    let t = steps as f64 * dt;
    let st = Stepper::new(&u, dt, p);
    let mut a = galilean_boost(&u, xi);
    let mut b = u.clone();
    for _ in 0..steps {
        a = st.step(&a);
        b = st.step(&b);
    }
    let xi2: f64 = xi.iter().map(|x| x * x).sum();
    let b = b
        .translate(xi.map(|x| 2.0 * x * t))
        .map_with_point(|x, z| z * C64::from_polar(1.0, x[0] * xi[0] + x[1] * xi[1] + x[2] * xi[2] - t * xi2));
    a.relative_l2_distance(&b)
}

fn virial_identities(ctx: &Context) -> Vec<Check> {
    let mut checks = Vec::new();
    let grid = make_grid(128, 80.0).expect("valid grid");
    let g = Gaussian::axial(0.8, 1.3, 1.8);
    let u = Field3D::from_real_fn(&grid, |x| g.eval(x));
    let w = VirialWeight::new(&grid, WeightKind::Quadratic);
    for l2 in [0.0, ctx.config.virial_lambda2] {
        let p = classify_regime(-1.0, l2);
        let r = report(&u, &p);
        checks.push(Check::below(
            format!("|V''/(8I) - 1| static, lambda2 = {l2}"),
            (virial_vpp(&u, &w, &p) / (8.0 * r.i_value) - 1.0).abs(),
            1e-6,
        ));
    }
    let grid = make_grid(48, 20.0).expect("valid grid");
    let u = Field3D::from_real_fn(&grid, |x| g.eval(x));
    let p = classify_regime(-1.0, ctx.config.virial_lambda2);
    let dt = 0.0025;
    let cfg = EvolutionConfig {
        dt,
        t_final: 0.5,
        output_stride: 2,
        ..EvolutionConfig::default()
    };
    let tol = 1e-3f64.max(100.0 * dt * dt);
    for kind in [WeightKind::Quadratic, WeightKind::Localized { radius: 4.0 }] {
        match virial_series(&u, &cfg, &p, kind) {
            Ok((_, vs)) => checks.push(Check::below(format!("V'' direct vs finite difference, {kind:?}"), vs.vpp_discrepancy(), tol)),
            Err(e) => checks.push(Check::error("virial series", e)),
        }
    }
    match ctx.region_runs() {
        Ok(runs) => {
            let mut worst = f64::INFINITY;
            for run in runs {
                let until = run.trajectory.trusted_until;
                for (i, t) in run.virial.times.iter().enumerate() {
                    if *t > until {
                        break;
                    }
                    let eight_i = 8.0 * run.virial.i_series[i];
                    worst = worst.min((run.virial.vpp_direct[i] - eight_i) / eight_i.abs());
                }
            }
            checks.push(Check::at_least("min (V''_R - 8I) / 8I over region runs", worst, -0.05));
        }
        Err(e) => checks.push(Check::error("region runs", e)),
    }
    checks
}

fn i_positivity(ctx: &Context) -> Vec<Check> {
    let runs = match ctx.region_runs() {
        Ok(runs) => runs,
        Err(e) => return vec![Check::error("region runs", e)],
    };
    let ratios: Vec<f64> = runs
        .iter()
        .map(|run| {
            let rep = crate::virial::monitor_i_positivity(&run.trajectory, 0.5);
            rep.i_min / rep.i_initial
        })
        .collect();
    let meeting = ratios.iter().filter(|r| **r >= 0.5).count();
    vec![
        Check::at_least("runs with (M, E) below the curve", runs.len() as f64, 10.0),
        Check::at_least("runs with min_t I >= I(u0)/2", meeting as f64, runs.len() as f64),
        Check::at_least("min over runs of min_t I(u(t)) / I(u0)", ratios.iter().copied().fold(f64::INFINITY, f64::min), 0.5),
    ]
}

fn box_robustness(ctx: &Context) -> Vec<Check> {
    let (q, big) = match (ctx.q1(), ctx.doubled_q1()) {
        (Ok(q), Ok(b)) => (q, b),
        (Err(e), _) | (_, Err(e)) => return vec![Check::error("doubled box", e)],
    };
    let rel = |a: f64, b: f64| (a / b - 1.0).abs();
    let mut checks = vec![
        Check::below("M(Q_1) relative change", rel(big.report.mass, q.report.mass), 5e-3),
        Check::below("C_1 relative change", rel(sharp_constant(big), sharp_constant(q)), 5e-3),
    ];
    match (build_s(q), build_s(big)) {
        (Ok(a), Ok(b)) => checks.push(Check::below("E-curve(M(S)) relative change", rel(b.algebraic.energy, a.algebraic.energy), 5e-3)),
        _ => checks.push(Check::error("S", "not built")),
    }
    checks
}
