//! Strang splitting for `(i d_t + Delta) u = V(|u|^2) u`.
//!
//! Free flight is an exact spectral phase. The potential
//! `V = lambda1 |u|^2 + lambda2 K*|u|^2 + |u|^4` depends only on `|u|^2`,
//! which the nonlinear flow leaves unchanged, so that substep is the exact
//! pointwise rotation `u e^{-i dt V}`.

use std::f64::consts::PI;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::{report, FunctionalReport};
use crate::io::csv_line;
use crate::kernel::{potential_of_density, DipoleParams};
use crate::spectral::{Field3D, C64};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("dt must be finite and nonzero, got {0}")]
    BadStep(f64),
    #[error("t_final must be finite and nonnegative, got {0}")]
    BadHorizon(f64),
    #[error("output_stride must be positive")]
    ZeroStride,
}

/// Quantities recorded at each output time in addition to the functionals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSet {
    pub linf: bool,
    pub variance: bool,
    pub outer_mass: bool,
}

impl Default for MonitorSet {
    fn default() -> Self {
        Self {
            linf: true,
            variance: true,
            outer_mass: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_final: f64,
    pub output_stride: usize,
    pub monitors: MonitorSet,
    pub snapshot_stride: Option<usize>,
    /// The trusted window ends once the mass outside the ball of radius
    /// `trusted_radius * L` exceeds `trusted_outer_mass * M`.
    pub trusted_radius: f64,
    pub trusted_outer_mass: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 1.0,
            output_stride: 10,
            monitors: MonitorSet::default(),
            snapshot_stride: None,
            trusted_radius: 0.25,
            trusted_outer_mass: 0.05,
        }
    }
}

impl EvolutionConfig {
    /// `0.8 (2 pi / |k|^2_max) / 4` for the grid of `u`.
    pub fn default_dt(u: &Field3D) -> f64 {
        0.2 * 2.0 * PI / u.grid().max_k_squared()
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt.abs()).round() as usize
    }

    pub fn validate(&self, u: &Field3D) -> Result<(), EvolutionError> {
        if !(self.dt.is_finite() && self.dt != 0.0) {
            return Err(EvolutionError::BadStep(self.dt));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(EvolutionError::BadHorizon(self.t_final));
        }
        if self.output_stride == 0 {
            return Err(EvolutionError::ZeroStride);
        }
        let limit = 2.0 * PI / u.grid().max_k_squared();
        if self.dt.abs() >= limit {
            warn!("dt = {} exceeds 2 pi / |k|^2_max = {limit:.3e}; the highest modes rotate by more than pi per substep", self.dt);
        }
        Ok(())
    }
}

/// Strang stepper with the half-step kinetic phase cached.
pub struct Stepper {
    dt: f64,
    p: DipoleParams,
    half_kinetic: Vec<C64>,
}

impl Stepper {
    pub fn new(u: &Field3D, dt: f64, p: &DipoleParams) -> Self {
        let half_kinetic = u
            .grid()
            .k_squared_table()
            .iter()
            .map(|k2| C64::from_polar(1.0, -0.5 * dt * k2))
            .collect();
        Self {
            dt,
            p: *p,
            half_kinetic,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, u: &Field3D) -> Field3D {
        let v = u.apply_symbol_table(&self.half_kinetic);
        let v = nonlinear_flow(&v, self.dt, &self.p);
        v.apply_symbol_table(&self.half_kinetic)
    }
}

/// Exact flow of `i d_t u = V(|u|^2) u` for time `dt`.
pub fn nonlinear_flow(u: &Field3D, dt: f64, p: &DipoleParams) -> Field3D {
    let rho = u.abs_sq();
    let phi = p.has_dipole().then(|| potential_of_density(u.grid(), &rho));
    let vals: Vec<C64> = u
        .values()
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let r = rho[i];
            let v = p.lambda1 * r + phi.as_ref().map_or(0.0, |f| p.lambda2 * f[i]) + r * r;
            z * C64::from_polar(1.0, -dt * v)
        })
        .collect();
    Field3D::from_values(u.grid(), vals).expect("same grid")
}

/// One Strang step (half free flight, exact nonlinear rotation, half free flight).
pub fn step_strang(u: &Field3D, dt: f64, p: &DipoleParams) -> Field3D {
    Stepper::new(u, dt, p).step(u)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    DispersingLike,
    ConcentratingLike,
    Undetermined,
}

/// Monitors beyond the functionals, `NaN` when not requested.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtraMonitors {
    pub linf: f64,
    pub variance: f64,
    pub outer_mass_fraction: f64,
}

/// Maximum deviation from the initial value, relative to it (absolute when
/// the initial value vanishes).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub mass: f64,
    pub energy: f64,
    pub momentum: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub rows: Vec<FunctionalReport>,
    pub extras: Vec<ExtraMonitors>,
    pub drift: Drift,
    pub classification: Classification,
    /// Last output time inside the trusted window.
    pub trusted_until: f64,
    /// Set when the run stopped on a non-finite field, with the step index.
    pub aborted_at: Option<usize>,
}

impl TrajectoryRecord {
    pub const EXTRA_COLUMNS: [&'static str; 3] = ["linf", "variance", "outer_mass_fraction"];

    pub fn csv_header() -> String {
        let mut cols = vec!["t"];
        cols.extend(FunctionalReport::CSV_COLUMNS);
        cols.extend(Self::EXTRA_COLUMNS);
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for ((t, r), x) in self.times.iter().zip(&self.rows).zip(&self.extras) {
            let mut vals = vec![*t];
            vals.extend(r.csv_values());
            vals.extend([x.linf, x.variance, x.outer_mass_fraction]);
            out.push_str(&csv_line(&vals));
            out.push('\n');
        }
        out
    }

    /// Rows inside the trusted window.
    pub fn trusted_rows(&self) -> impl Iterator<Item = (f64, &FunctionalReport)> {
        let until = self.trusted_until;
        self.times.iter().copied().zip(&self.rows).take_while(move |(t, _)| *t <= until)
    }
}

/// Monitors of `u` at centre `[0; 3]`.
pub fn extra_monitors(u: &Field3D, mass: f64, set: &MonitorSet, radius: f64) -> ExtraMonitors {
    let grid = u.grid();
    let linf = if set.linf { u.max_abs() } else { f64::NAN };
    let variance = if set.variance {
        let w: Vec<f64> = u
            .values()
            .par_iter()
            .enumerate()
            .map(|(i, z)| {
                let x = grid.point(i);
                (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) * z.norm_sqr()
            })
            .collect();
        grid.integrate(&w)
    } else {
        f64::NAN
    };
    let outer = if set.outer_mass && mass > 0.0 {
        let r2 = radius * radius;
        let w: Vec<f64> = u
            .values()
            .par_iter()
            .enumerate()
            .map(|(i, z)| {
                let x = grid.point(i);
                if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] > r2 {
                    z.norm_sqr()
                } else {
                    0.0
                }
            })
            .collect();
        grid.integrate(&w) / mass
    } else {
        f64::NAN
    };
    ExtraMonitors {
        linf,
        variance,
        outer_mass_fraction: outer,
    }
}

fn relative_deviation(x: f64, x0: f64) -> f64 {
    if x0 != 0.0 {
        ((x - x0) / x0).abs()
    } else {
        x.abs()
    }
}

fn drift_of(rows: &[FunctionalReport]) -> Drift {
    let Some(r0) = rows.first() else {
        return Drift::default();
    };
    rows.iter().fold(Drift::default(), |mut d, r| {
        d.mass = d.mass.max(relative_deviation(r.mass, r0.mass));
        d.energy = d.energy.max(relative_deviation(r.energy, r0.energy));
        for j in 0..3 {
            d.momentum[j] = d.momentum[j].max(relative_deviation(r.momentum[j], r0.momentum[j]));
        }
        d
    })
}

fn classify(rows: &[FunctionalReport], extras: &[ExtraMonitors], aborted: bool) -> Classification {
    if aborted {
        let linf: Vec<f64> = extras.iter().map(|x| x.linf).collect();
        let monotone = linf.windows(2).all(|w| w[1] >= w[0]);
        let grew = match (linf.first(), linf.last()) {
            (Some(a), Some(b)) => *b >= 10.0 * a,
            _ => false,
        };
        return if monotone && grew {
            Classification::ConcentratingLike
        } else {
            Classification::Undetermined
        };
    }
    let (Some(r0), Some(r1)) = (rows.first(), rows.last()) else {
        return Classification::Undetermined;
    };
    if r1.kinetic >= 100.0 * r0.kinetic {
        return Classification::ConcentratingLike;
    }
    let (v0, v1) = (extras[0].variance, extras[extras.len() - 1].variance);
    if r1.sextic < 0.2 * r0.sextic && v1 >= 4.0 * v0 {
        return Classification::DispersingLike;
    }
    Classification::Undetermined
}

/// Evolves `u0` and records the monitors every `output_stride` steps.
pub fn evolve(u0: &Field3D, cfg: &EvolutionConfig, p: &DipoleParams) -> Result<TrajectoryRecord, EvolutionError> {
    evolve_with(u0, cfg, p, |_, _, _| {})
}

struct Recorder<'a> {
    cfg: &'a EvolutionConfig,
    p: &'a DipoleParams,
    radius: f64,
    times: Vec<f64>,
    rows: Vec<FunctionalReport>,
    extras: Vec<ExtraMonitors>,
    trusted: bool,
    trusted_until: f64,
}

impl Recorder<'_> {
    fn record(&mut self, u: &Field3D, t: f64) {
        let r = report(u, self.p);
        let set = MonitorSet {
            outer_mass: true,
            ..self.cfg.monitors
        };
        let x = extra_monitors(u, r.mass, &set, self.radius);
        if self.trusted && x.outer_mass_fraction >= self.cfg.trusted_outer_mass {
            self.trusted = false;
        }
        if self.trusted {
            self.trusted_until = t;
        }
        self.times.push(t);
        self.rows.push(r);
        self.extras.push(x);
    }
}

/// [`evolve`] with a callback receiving `(step, t, u)` every `snapshot_stride` steps.
pub fn evolve_with(
    u0: &Field3D,
    cfg: &EvolutionConfig,
    p: &DipoleParams,
    mut on_snapshot: impl FnMut(usize, f64, &Field3D),
) -> Result<TrajectoryRecord, EvolutionError> {
    cfg.validate(u0)?;
    let stepper = Stepper::new(u0, cfg.dt, p);
    let steps = cfg.steps();
    let mut rec = Recorder {
        cfg,
        p,
        radius: cfg.trusted_radius * u0.grid().box_length(),
        times: Vec::new(),
        rows: Vec::new(),
        extras: Vec::new(),
        trusted: true,
        trusted_until: 0.0,
    };
    let mut u = u0.clone();
    rec.record(&u, 0.0);
    let snap = cfg.snapshot_stride.filter(|s| *s > 0);
    if snap.is_some() {
        on_snapshot(0, 0.0, &u);
    }
    let mut aborted_at = None;
    for n in 1..=steps {
        u = stepper.step(&u);
        let t = n as f64 * cfg.dt.abs();
        if !u.is_finite() {
            warn!("non-finite field at step {n} (t = {t})");
            aborted_at = Some(n);
            break;
        }
        if n % cfg.output_stride == 0 || n == steps {
            rec.record(&u, t);
        }
        if snap.is_some_and(|s| n % s == 0) {
            on_snapshot(n, t, &u);
        }
    }
    let classification = classify(&rec.rows, &rec.extras, aborted_at.is_some());
    Ok(TrajectoryRecord {
        drift: drift_of(&rec.rows),
        times: rec.times,
        rows: rec.rows,
        extras: rec.extras,
        classification,
        trusted_until: rec.trusted_until,
        aborted_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::classify_regime;
    use crate::oracle::Gaussian;
    use crate::spectral::make_grid;

    #[test]
    fn zero_field_stays_zero() {
        let grid = make_grid(16, 10.0).unwrap();
        let u = Field3D::zeros(&grid);
        let v = step_strang(&u, 0.01, &classify_regime(-1.0, 0.5));
        assert!(v.values().iter().all(|z| *z == C64::default()));
    }

    #[test]
    fn linear_limit_matches_free_flight() {
        let grid = make_grid(32, 16.0).unwrap();
        let g = Gaussian::isotropic(1e-6, 1.5);
        let u = Field3D::from_real_fn(&grid, |x| g.eval(x));
        let dt = 0.05;
        let p = classify_regime(0.0, 0.0);
        let v = step_strang(&u, dt, &p);
        let free = u.apply_multiplier(|k| C64::from_polar(1.0, -dt * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2])));
        assert!(v.relative_l2_distance(&free) < 1e-13, "{}", v.relative_l2_distance(&free));
    }

    #[test]
    fn mass_conserved_by_one_step() {
        let grid = make_grid(16, 12.0).unwrap();
        let g = Gaussian::axial(1.2, 1.4, 2.0);
        let u = Field3D::from_real_fn(&grid, |x| g.eval(x));
        let p = classify_regime(-1.0, 0.3);
        let v = step_strang(&u, 0.01, &p);
        assert!((v.norm_sq() / u.norm_sq() - 1.0).abs() < 1e-14);
    }
}
