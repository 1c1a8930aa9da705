//! The mass/energy plane: the profile `S`, the threshold curve
//! `m -> inf{E(u) : M(u) = m, I(u) = 0}`, the region below it, the
//! fixed-mass energy infimum `d(m)` and the functional `L(m, e)`.
//!
//! Every constrained value is computed in the scaling algebra: a shape `f`
//! is brought to mass `m` by its amplitude and onto `I = 0` by the
//! mass-preserving dilation `u^s = s^{3/2} u(s x)`. Along that family the
//! critical points of `E` are exactly the roots of `I`, the larger root
//! being the local minimum, so each shape has one well defined value and
//! the descent runs over shapes.

use std::sync::Arc;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::{bisect, report, Extended, FunctionalReport, ScalePolynomials};
use crate::ground_state::{rescale_by_grid, Gauge, GroundState};
use crate::io::fmt_sig;
use crate::kernel::DipoleParams;
use crate::oracle::Gaussian;
use crate::shape::{self, DescentSettings, ScalarObjective};
use crate::spectral::{Field3D, GridSpec, C64};

/// `M(S) / M(Q_1)`.
pub fn mass_ratio_s() -> f64 {
    4.0 / (3.0 * 3f64.sqrt())
}

/// `(a, b)` with `S = a Q_1(b x)`.
pub const S_SCALING: (f64, f64) = (std::f64::consts::FRAC_1_SQRT_2, 0.866_025_403_784_438_6);

#[derive(Debug, Error)]
pub enum ThresholdError {
    #[error("ground state has alpha = {0}; the threshold objects need alpha = 1")]
    NotAlphaOne(f64),
    #[error("no positive dilation brings the field onto I = 0")]
    NoIZeroPoint,
    #[error("field has I > 0 and no root of I(u^s) was requested above or below s = 1")]
    PositiveVirial,
    #[error("the curve does not cover m = {m} with e = {e} (sampled up to {mass_q1})")]
    OutsideCurve { m: f64, e: f64, mass_q1: f64 },
    #[error("target mass {target} is not above the current mass {mass}")]
    MassNotRaised { target: f64, mass: f64 },
    #[error(transparent)]
    Grid(#[from] crate::spectral::GridError),
}

/// `S` from both routes: exact functionals from the scaling table and a
/// field resampled on the ground-state grid.
#[derive(Clone, Debug)]
pub struct SProfile {
    pub field: Field3D,
    pub algebraic: FunctionalReport,
    pub resampled: FunctionalReport,
}

pub fn build_s(q1: &GroundState) -> Result<SProfile, ThresholdError> {
    if (q1.alpha - 1.0).abs() > 1e-12 {
        return Err(ThresholdError::NotAlphaOne(q1.alpha));
    }
    let (a, b) = S_SCALING;
    let algebraic = q1.report.rescaled(a, b, &q1.params);
    let field = q1.field.rescale(a, b);
    let resampled = report(&field, &q1.params);
    Ok(SProfile {
        field,
        algebraic,
        resampled,
    })
}

/// Result of moving a field onto `I = 0` along `u^s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IZeroProjection {
    pub s: f64,
    pub report: FunctionalReport,
}

/// Relative tolerance under which `I(u)` counts as zero.
const I_ZERO_TOL: f64 = 1e-12;

/// The root `s*` of `I(u^s)` at which `Gamma(u^{s*}) >= 1/3`, searched on the
/// whole positive axis. `s* = 1` when `u` already has `I = 0` and `Gamma >= 1/3`.
pub fn project_to_i_zero(r: &FunctionalReport, p: &DipoleParams) -> Result<IZeroProjection, ThresholdError> {
    let scale = r.kinetic + r.sextic;
    if r.i_value.abs() <= I_ZERO_TOL * scale && r.gamma >= 1.0 / 3.0 {
        return Ok(IZeroProjection { s: 1.0, report: *r });
    }
    let s = upper_root(&r.scale_polys()).ok_or(ThresholdError::NoIZeroPoint)?;
    Ok(IZeroProjection {
        s,
        report: r.l2_dilated(s, p),
    })
}

/// Field version of [`project_to_i_zero`]; the dilation is applied exactly
/// through the grid.
pub fn project_field_to_i_zero(u: &Field3D, p: &DipoleParams) -> Result<(Field3D, IZeroProjection), ThresholdError> {
    let proj = project_to_i_zero(&report(u, p), p)?;
    let v = if proj.s == 1.0 {
        u.clone()
    } else {
        rescale_by_grid(u, proj.s.powf(1.5), proj.s)?
    };
    Ok((v, proj))
}

/// Larger positive root of `a + b s + c s^4`; a double root within round-off
/// is accepted.
fn upper_root(poly: &ScalePolynomials) -> Option<f64> {
    if let Some(&s) = poly.i_roots().last() {
        return Some(s);
    }
    let (a, b, c) = (poly.a, poly.b, poly.c);
    if !(a > 0.0 && c > 0.0 && b < 0.0) {
        return None;
    }
    let s_min = (-b / (4.0 * c)).cbrt();
    let q_min = a + b * s_min + c * s_min.powi(4);
    (q_min <= 1e-12 * a).then_some(s_min)
}

/// Functionals of `sqrt(m / M) f`.
fn at_mass(r: &FunctionalReport, m: f64) -> ScalePolynomials {
    let x = m / r.mass;
    ScalePolynomials {
        a: x * r.kinetic,
        b: -0.75 * x * x * r.n_value,
        c: x * x * x * r.sextic,
        m,
    }
}

/// Lowest energy of a shape on `{M = m, I = 0}` within its scaling orbit,
/// `None` when the orbit misses the constraint set.
pub fn shape_threshold_value(r: &FunctionalReport, m: f64) -> Option<f64> {
    if !(r.mass > 0.0 && r.kinetic > 0.0 && r.sextic > 0.0) {
        return None;
    }
    let poly = at_mass(r, m);
    upper_root(&poly).map(|s| poly.e_at(s))
}

/// Smallest mass at which the scaling orbit of the shape meets `I = 0`:
/// `(256 / (27 sqrt 3)) W_1(f)^2`.
pub fn minimal_feasible_mass(r: &FunctionalReport) -> Extended {
    if !(r.n_value > 0.0) {
        return Extended::Infinite;
    }
    let w2 = r.mass * r.kinetic.powf(1.5) * r.sextic.sqrt() / (r.n_value * r.n_value);
    Extended::Finite(256.0 / (27.0 * 3f64.sqrt()) * w2)
}

/// `E(sqrt(m / M) f)` and its exact partials.
struct EnergyAtMass {
    m: f64,
}

impl ScalarObjective for EnergyAtMass {
    fn value(&self, r: &FunctionalReport) -> Option<f64> {
        (r.mass > 0.0).then(|| at_mass(r, self.m).e_at(1.0))
    }

    fn partials(&self, r: &FunctionalReport) -> [f64; 4] {
        let x = self.m / r.mass;
        let dx = -self.m / (r.mass * r.mass);
        let de_dx = 0.5 * r.kinetic - 0.5 * x * r.n_value + 0.5 * x * x * r.sextic;
        [de_dx * dx, 0.5 * x, x * x * x / 6.0, -0.25 * x * x]
    }
}

struct ThresholdObjective {
    m: f64,
}

impl ScalarObjective for ThresholdObjective {
    fn value(&self, r: &FunctionalReport) -> Option<f64> {
        shape_threshold_value(r, self.m)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdOptions {
    /// Curve tolerance as a fraction of `E(S)`.
    pub epsilon_curve: f64,
    pub samples: usize,
    pub restarts: usize,
    /// Restarts after which a mass with no feasible shape is declared infeasible.
    pub infeasibility_restarts: usize,
    pub max_iterations: usize,
    pub residual_tol: f64,
    pub dilation_pin: f64,
    /// Relative H1 size of the random perturbations used by restarts.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self {
            epsilon_curve: 0.02,
            samples: 17,
            restarts: 3,
            infeasibility_restarts: 8,
            max_iterations: 60,
            residual_tol: 1e-7,
            dilation_pin: 10.0,
            perturbation: 0.05,
            seed: 0,
        }
    }
}

impl ThresholdOptions {
    fn descent(&self, pin: f64) -> DescentSettings {
        DescentSettings {
            max_iterations: self.max_iterations,
            residual_tol: self.residual_tol,
            stall_rel_decrease: 1e-10,
            stall_window: 10,
            step_tol: 1e-7,
            renormalize_every: 10,
            conjugate_gradient: true,
            project_orbit: false,
            dilation_pin: pin,
        }
    }
}

/// One curve value with the number of restarts that reached `I = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub m: f64,
    pub value: Extended,
    pub restarts_used: usize,
}

/// Ties a curve to the ground state it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveGauge {
    pub gauge: Gauge,
    pub lambda1: f64,
    pub lambda2: f64,
    pub grid: GridSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub mass_q1: f64,
    pub mass_s: f64,
    pub energy_s: f64,
    pub epsilon_curve: f64,
    pub samples: Vec<CurveSample>,
    pub gauge: CurveGauge,
}

/// Metadata written next to the curve CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub gauge: CurveGauge,
    pub mass_q1: f64,
    pub mass_s: f64,
    pub energy_s: f64,
    pub epsilon_curve: f64,
    pub epsilon_absolute: f64,
}

impl ThresholdCurve {
    pub const CSV_COLUMNS: [&'static str; 4] = ["m", "script_e", "feasible_flag", "restarts_used"];

    /// Absolute curve tolerance, `epsilon_curve * E(S)`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon_curve * self.energy_s
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::CSV_COLUMNS.join(",");
        out.push('\n');
        for s in &self.samples {
            let (v, flag) = match s.value {
                Extended::Finite(v) => (fmt_sig(v, 12), 1),
                Extended::Infinite => ("inf".to_string(), 0),
            };
            out.push_str(&format!("{},{},{},{}\n", fmt_sig(s.m, 12), v, flag, s.restarts_used));
        }
        out
    }

    pub fn metadata(&self) -> CurveMetadata {
        CurveMetadata {
            gauge: self.gauge.clone(),
            mass_q1: self.mass_q1,
            mass_s: self.mass_s,
            energy_s: self.energy_s,
            epsilon_curve: self.epsilon_curve,
            epsilon_absolute: self.epsilon(),
        }
    }

    fn finite_points(&self) -> Vec<(f64, f64)> {
        self.samples.iter().filter_map(|s| s.value.finite().map(|v| (s.m, v))).collect()
    }

    /// Piecewise-linear interpolant of the samples on `[mass_s, mass_q1]`,
    /// `+inf` below `mass_s`, and the last sample beyond `mass_q1`.
    pub fn interpolate(&self, m: f64) -> Extended {
        let pts = self.finite_points();
        if pts.is_empty() || m < self.mass_s {
            return Extended::Infinite;
        }
        if m <= pts[0].0 {
            return Extended::Finite(pts[0].1);
        }
        for w in pts.windows(2) {
            let ((m0, e0), (m1, e1)) = (w[0], w[1]);
            if m <= m1 {
                let t = (m - m0) / (m1 - m0);
                return Extended::Finite(e0 + t * (e1 - e0));
            }
        }
        Extended::Finite(pts[pts.len() - 1].1)
    }

    /// Largest violation of monotone decrease between consecutive samples.
    pub fn monotonicity_defect(&self) -> f64 {
        self.finite_points()
            .windows(2)
            .map(|w| w[1].1 - w[0].1)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Random smooth perturbation with relative H1 size `size`, supported where
/// `f` lives.
fn perturb(f: &Field3D, size: f64, rng: &mut ChaCha8Rng) -> Field3D {
    let grid = f.grid();
    let noise: Vec<C64> = (0..grid.len()).map(|_| C64::new(rng.gen_range(-1.0..1.0), 0.0)).collect();
    let noise = Field3D::from_values(grid, noise).expect("noise matches grid");
    let k0 = 4.0 * grid.fundamental_wavenumber();
    let peak = f.max_abs();
    let smooth = noise
        .apply_multiplier(|k| C64::new((-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) / (k0 * k0)).exp(), 0.0))
        .zip_map(f, |n, v| C64::new(n.re * (v.norm() / peak).sqrt() * peak, 0.0));
    let h1 = |g: &Field3D| (g.norm_sq() + g.gradient_norm_sq()).sqrt();
    f.axpy(size * h1(f) / h1(&smooth).max(1e-300), &smooth)
}

/// An isotropic Gaussian with the mass and `G / M` of `f`.
fn matched_gaussian(f: &Field3D, r: &FunctionalReport) -> Field3D {
    // for exp(-|x|^2 / (2 w^2)): G / M = 3 / (2 w^2)
    let w = (1.5 * r.mass / r.kinetic).sqrt();
    let g = Gaussian::isotropic(1.0, w);
    let amp = (r.mass / g.mass()).sqrt();
    Field3D::from_real_fn(f.grid(), |x| amp * g.eval(x))
}

fn restart_fields(q: &Field3D, r: &FunctionalReport, count: usize, size: f64, rng: &mut ChaCha8Rng) -> Vec<Field3D> {
    (0..count)
        .map(|i| match i {
            0 => q.clone(),
            2 => matched_gaussian(q, r),
            _ => perturb(q, size * (1.0 + (i / 3) as f64), rng),
        })
        .collect()
}

/// Value of the threshold minimization at mass `m` from the given starts.
/// Returns the best value and how many starts reached `I = 0`; a start whose
/// orbit misses the constraint is first moved towards feasibility by
/// lowering its Weinstein quotient.
fn threshold_from_starts(
    m: f64,
    p: &DipoleParams,
    starts: Vec<Field3D>,
    opts: &ThresholdOptions,
) -> (Extended, usize, Option<Field3D>) {
    let mut best: Option<(f64, Field3D)> = None;
    let mut used = 0;
    for start in starts {
        let r = report(&start, p);
        let start = if shape_threshold_value(&r, m).is_some() {
            start
        } else {
            match towards_feasibility(&start, m, p, opts) {
                Some(f) => f,
                None => continue,
            }
        };
        let obj = ThresholdObjective { m };
        let Ok(out) = shape::descend(&obj, p, &start, &opts.descent(opts.dilation_pin)) else {
            continue;
        };
        let Some(v) = shape_threshold_value(&out.report, m) else {
            continue;
        };
        used += 1;
        debug!("threshold at m = {m:.6}: start value {:?} -> {v:.9e} in {} iterations", obj.value(&r), out.iterations);
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, out.field));
        }
    }
    match best {
        Some((v, f)) => (Extended::Finite(v), used, Some(f)),
        None => (Extended::Infinite, 0, None),
    }
}

/// Lowers `W_1` (equivalently the minimal feasible mass) from `f`; returns the
/// result when its orbit reaches mass `m`.
fn towards_feasibility(f: &Field3D, m: f64, p: &DipoleParams, opts: &ThresholdOptions) -> Option<Field3D> {
    struct MinimalMass;
    impl ScalarObjective for MinimalMass {
        fn value(&self, r: &FunctionalReport) -> Option<f64> {
            minimal_feasible_mass(r).finite().map(f64::ln)
        }
        fn partials(&self, r: &FunctionalReport) -> [f64; 4] {
            [1.0 / r.mass, 1.5 / r.kinetic, 0.5 / r.sextic, -2.0 / r.n_value]
        }
        fn relative_decrease(&self, old: f64, new: f64) -> f64 {
            1.0 - (new - old).exp()
        }
    }
    let out = shape::descend(&MinimalMass, p, f, &opts.descent(opts.dilation_pin)).ok()?;
    let reach = minimal_feasible_mass(&out.report).finite()?;
    debug!("minimal feasible mass lowered to {reach:.6} (target {m:.6})");
    (reach <= m).then_some(out.field)
}

/// The threshold value at mass `m`, with `opts.restarts` starts built from `q1`.
pub fn script_e(m: f64, q1: &GroundState, opts: &ThresholdOptions) -> (Extended, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ m.to_bits());
    let count = if m < q1.report.mass * mass_ratio_s() {
        opts.infeasibility_restarts
    } else {
        opts.restarts
    };
    let starts = restart_fields(&q1.field, &q1.report, count, opts.perturbation, &mut rng);
    let (v, used, _) = threshold_from_starts(m, &q1.params, starts, opts);
    (v, used)
}

/// Chebyshev points of the second kind on `[lo, hi]`, ascending.
pub fn chebyshev_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|k| {
            let t = -(std::f64::consts::PI * k as f64 / (n - 1) as f64).cos();
            0.5 * (lo + hi) + 0.5 * (hi - lo) * t
        })
        .collect()
}

/// Samples the threshold curve between `M(S)` and `M(Q_1)`. Each sample
/// starts from `Q_1`, from the best shape of the previous sample and from
/// random perturbations.
pub fn build_curve(q1: &GroundState, opts: &ThresholdOptions) -> Result<ThresholdCurve, ThresholdError> {
    let s = build_s(q1)?;
    let mass_q1 = q1.report.mass;
    let mass_s = mass_q1 * mass_ratio_s();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut samples = Vec::with_capacity(opts.samples);
    let mut previous: Option<Field3D> = None;
    for m in chebyshev_points(mass_s, mass_q1, opts.samples) {
        let mut starts = restart_fields(&q1.field, &q1.report, opts.restarts, opts.perturbation, &mut rng);
        if let Some(prev) = previous.take() {
            if starts.len() > 1 {
                starts[1] = prev;
            } else {
                starts.push(prev);
            }
        }
        let (value, used, best) = threshold_from_starts(m, &q1.params, starts, opts);
        info!("threshold curve: m = {m:.6}, value {value}");
        previous = best;
        samples.push(CurveSample {
            m,
            value,
            restarts_used: used,
        });
    }
    Ok(ThresholdCurve {
        mass_q1,
        mass_s,
        energy_s: s.algebraic.energy,
        epsilon_curve: opts.epsilon_curve,
        samples,
        gauge: CurveGauge {
            gauge: Gauge::Elliptic,
            lambda1: q1.params.lambda1,
            lambda2: q1.params.lambda2,
            grid: q1.field.grid().spec(),
        },
    })
}

/// `0 < m < M(Q_1)` and `0 < e < E-hat(m)`.
pub fn in_region_k(m: f64, e: f64, curve: &ThresholdCurve) -> bool {
    if !(m > 0.0 && m < curve.mass_q1 && e > 0.0) {
        return false;
    }
    match curve.interpolate(m) {
        Extended::Infinite => true,
        Extended::Finite(v) => e < v,
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// `L(m, e) = e + (m + e) / dist((m, e), Omega)` off
/// `Omega = {m >= M(S), e >= E-hat(m)}` and `+inf` on it. Beyond `M(Q_1)` the
/// curve is continued by its last sample; points below that are outside the
/// sampled range.
pub fn l_functional(m: f64, e: f64, curve: &ThresholdCurve) -> Result<Extended, ThresholdError> {
    let pts = curve.finite_points();
    let Some(&last) = pts.last() else {
        return Ok(Extended::Infinite);
    };
    let first = pts[0];
    if m > last.0 && e < last.1 {
        return Err(ThresholdError::OutsideCurve {
            m,
            e,
            mass_q1: curve.mass_q1,
        });
    }
    if let Extended::Finite(v) = curve.interpolate(m) {
        if e >= v {
            return Ok(Extended::Infinite);
        }
    }
    let q = (m, e);
    // boundary: vertical ray above the first sample, the polyline, and the
    // horizontal ray continuing the last sample
    let mut dist = if e >= first.1 {
        (m - first.0).abs()
    } else {
        ((m - first.0).powi(2) + (e - first.1).powi(2)).sqrt()
    };
    for w in pts.windows(2) {
        dist = dist.min(segment_distance(q, w[0], w[1]));
    }
    let ray = if m >= last.0 {
        (e - last.1).abs()
    } else {
        ((m - last.0).powi(2) + (e - last.1).powi(2)).sqrt()
    };
    dist = dist.min(ray);
    if dist == 0.0 {
        return Ok(Extended::Infinite);
    }
    Ok(Extended::Finite(e + (m + e) / dist))
}

/// Mass-raising rescale: for `u` with `I(u) = 0`, `Gamma(u) >= 1/3` and
/// `M(u) < target`, the functionals of `v = sqrt(tau sigma) u(sigma x)` with
/// `M(v) = target`, `I(v) = 0`, together with `(tau, sigma)`.
pub fn raise_mass(r: &FunctionalReport, target: f64, p: &DipoleParams) -> Result<(FunctionalReport, f64, f64), ThresholdError> {
    if !(target > r.mass) {
        return Err(ThresholdError::MassNotRaised {
            target,
            mass: r.mass,
        });
    }
    let g = r.gamma;
    let f = |t: f64| (1.0 + t * t * g).powi(2) / (t * (1.0 + g).powi(2));
    let ratio = target / r.mass;
    let mut hi = 2.0;
    while f(hi) < ratio {
        hi *= 2.0;
    }
    let tau = bisect(&|t| f(t) - ratio, 1.0, hi);
    let sigma = (tau / f(tau)).sqrt();
    Ok((r.rescaled((tau * sigma).sqrt(), sigma, p), tau, sigma))
}

/// `E(u) - ((m' - m) / (6 m)) ||grad u||^2`, the energy bound for the raised field.
pub fn raised_energy_bound(r: &FunctionalReport, target: f64) -> f64 {
    r.energy - (target - r.mass) / (6.0 * r.mass) * r.kinetic
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    pub residual_tol: f64,
    pub seed: u64,
}

impl Default for DOptions {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_iterations: 150,
            residual_tol: 1e-8,
            seed: 0,
        }
    }
}

/// Energy of the constant field of mass `m` on a periodic box of side `l`,
/// `lambda1 m^2 / (4 l^3) + m^3 / (6 l^6)` (the dipolar term vanishes).
/// On the torus this replaces zero as the energy of a fully spread state.
pub fn uniform_energy(m: f64, l: f64, p: &DipoleParams) -> f64 {
    let v = l.powi(3);
    p.lambda1 * m * m / (4.0 * v) + m.powi(3) / (6.0 * v * v)
}

/// Infimum of `E` at fixed mass `m` by preconditioned descent with mass
/// projection from several starts. The spreading limit `u^s`, `s -> 0`, has
/// energy tending to zero, so the result never exceeds zero. On the box the
/// descent below `M(Q_1)` spreads towards the constant state, whose energy is
/// [`uniform_energy`].
pub fn d_of_m(m: f64, q1: &GroundState, opts: &DOptions) -> f64 {
    if m <= 0.0 {
        return 0.0;
    }
    let p = &q1.params;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ m.to_bits());
    let starts = restart_fields(&q1.field, &q1.report, opts.restarts, 0.05, &mut rng);
    let settings = DescentSettings {
        max_iterations: opts.max_iterations,
        residual_tol: opts.residual_tol,
        stall_rel_decrease: 1e-12,
        stall_window: 10,
        step_tol: 1e-9,
        renormalize_every: 1,
        conjugate_gradient: true,
        project_orbit: false,
        dilation_pin: 0.0,
    };
    let obj = EnergyAtMass { m };
    let mut best = 0.0f64;
    for start in starts {
        if let Ok(out) = shape::descend(&obj, p, &start, &settings) {
            let v = out.value;
            debug!("d({m:.6}): descent value {v:.9e} after {} iterations", out.iterations);
            best = best.min(v);
        }
    }
    best
}

/// Random trial fields at mass `m` on the grid of `q1`: Gaussians with
/// random widths, offsets and boosts, and randomly dilated perturbations of
/// `Q_1`.
pub fn random_trial_fields(q1: &GroundState, m: f64, count: usize, seed: u64) -> Vec<Field3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = q1.field.grid().clone();
    let base_width = (1.5 * q1.report.mass / q1.report.kinetic).sqrt();
    (0..count)
        .map(|i| {
            let f = if i % 2 == 0 {
                let widths = [0; 3].map(|_| base_width * rng.gen_range(0.4..1.6));
                let g = Gaussian { amp: 1.0, widths };
                let off = [0; 3].map(|_| rng.gen_range(-0.1..0.1) * grid.box_length());
                let xi = [0; 3].map(|_| rng.gen_range(-0.5..0.5));
                Field3D::from_fn(&grid, |x| {
                    let y = [x[0] - off[0], x[1] - off[1], x[2] - off[2]];
                    let ph = xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2];
                    C64::from_polar(g.eval(y), ph)
                })
            } else {
                let s = rng.gen_range(0.7..1.4);
                perturb(&q1.field, 0.3, &mut rng).l2_dilation(s)
            };
            let mass = f.norm_sq();
            f.scale((m / mass).sqrt())
        })
        .collect()
}

/// `(4/3) (||u||_2 / ||S||_2) (||grad u||^2 + ||u||_6^6) - N(u)`, nonnegative by
/// the sharp inequality.
pub fn gn_bound_margin(r: &FunctionalReport, mass_s: f64) -> f64 {
    4.0 / 3.0 * (r.mass / mass_s).sqrt() * (r.kinetic + r.sextic) - r.n_value
}

/// Embeds a field into a box of `factor` times the length at the same grid
/// spacing, padding with zeros.
pub fn embed_in_larger_box(f: &Field3D, factor: usize) -> Result<Field3D, ThresholdError> {
    let spec = f.grid().spec();
    let grid = Arc::new(crate::spectral::Grid::new(GridSpec {
        n: spec.n * factor,
        box_length: spec.box_length * factor as f64,
    })?);
    let n = spec.n;
    let big = grid.n();
    let shift = (big - n) / 2;
    let mut vals = vec![C64::default(); grid.len()];
    for (idx, v) in f.values().iter().enumerate() {
        let (i, j, k) = f.grid().unravel(idx);
        vals[grid.index(i + shift, j + shift, k + shift)] = *v;
    }
    Ok(Field3D::from_values(&grid, vals).expect("embedding matches grid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::classify_regime;

    fn report_of(m: f64, g: f64, s: f64, n: f64) -> FunctionalReport {
        let p = classify_regime(-1.0, 0.0);
        FunctionalReport::from_terms(m, g, n, 0.0, s, [0.0; 3], &p)
    }

    #[test]
    fn minimal_mass_matches_feasibility() {
        let r = report_of(2.0, 3.0, 0.7, 2.5);
        let mmin = minimal_feasible_mass(&r).finite().unwrap();
        assert!(shape_threshold_value(&r, mmin * (1.0 + 1e-6)).is_some());
        assert!(shape_threshold_value(&r, mmin * (1.0 - 1e-6)).is_none());
    }

    #[test]
    fn threshold_value_is_energy_on_constraint() {
        let p = classify_regime(-1.0, 0.0);
        let r = report_of(2.0, 3.0, 0.7, 2.5);
        let m = 1.5 * minimal_feasible_mass(&r).finite().unwrap();
        let v = shape_threshold_value(&r, m).unwrap();
        let scaled = r.rescaled((m / r.mass).sqrt(), 1.0, &p);
        let proj = project_to_i_zero(&scaled, &p).unwrap();
        assert!(proj.report.i_value.abs() < 1e-10 * proj.report.kinetic);
        assert!((proj.report.energy - v).abs() < 1e-10 * v.abs().max(1.0));
        assert!(proj.report.gamma >= 1.0 / 3.0 - 1e-12);
    }

    #[test]
    fn chebyshev_endpoints() {
        let pts = chebyshev_points(1.0, 3.0, 17);
        assert_eq!(pts.len(), 17);
        assert!((pts[0] - 1.0).abs() < 1e-15 && (pts[16] - 3.0).abs() < 1e-15);
        assert!(pts.windows(2).all(|w| w[1] > w[0]));
    }
}
