//! Optimizers of the Weinstein quotient, their rescaling to solutions of the
//! stationary equation `-Q'' + omega Q + lambda1 Q^3 + lambda2 (K*Q^2) Q + Q^5 = 0`,
//! and the sharp Gagliardo-Nirenberg constant they determine.
//!
//! The quotient is invariant under `f -> a f(b x)`. Among all rescalings of a
//! minimizer exactly one solves the stationary equation with unit quintic
//! and cubic coefficients; that representative is the one returned (the
//! "elliptic gauge"). It satisfies `Gamma(Q) = alpha`.

use std::path::Path;
use std::sync::Arc;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::{report, Extended, FunctionalReport};
use crate::kernel::{potential_of_density, DipoleParams, Regime};
use crate::oracle::Gaussian;
use crate::shape::{self, DescentError, DescentSettings, ScalarObjective};
use crate::snapshot::{Snapshot, SnapshotError};
use crate::spectral::{Field3D, Grid, GridSpec, C64};

#[derive(Debug, Error)]
pub enum GroundStateError {
    #[error("parameters ({0}, {1}) are not in the unstable regime")]
    NotUnstable(f64, f64),
    #[error("alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("initial field has N <= 0, so the quotient is infinite")]
    NoAdmissibleStart,
    #[error("field has zero gradient norm")]
    ZeroGradient,
    #[error("no convergence after {iterations} iterations (residual {residual:.3e}, W {weinstein:.12e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        weinstein: f64,
    },
    #[error("non-finite value during minimization at iteration {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Grid(#[from] crate::spectral::GridError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("sidecar: {0}")]
    Sidecar(String),
}

/// Choice of representative returned by [`rescale_to_gamma`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// The rescaling that solves the stationary equation (two parameters).
    Elliptic,
    /// Amplitude only, no dilation.
    Amplitude,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeinsteinOptions {
    pub max_iterations: usize,
    /// Stop once the scaled gradient norm falls below this.
    pub residual_tol: f64,
    /// Stall test: relative decrease of W over `stall_window` iterations ...
    pub stall_rel_decrease: f64,
    pub stall_window: usize,
    /// ... together with an H1 step norm below this.
    pub step_tol: f64,
    /// Iterations between amplitude renormalizations.
    pub regauge_every: usize,
    pub conjugate_gradient: bool,
    /// Remove the phase-free dilation and amplitude directions from each step.
    pub project_orbit: bool,
    /// Stiffness of the penalty `mu (ln(G/M) - ln(G0/M0))^2` holding the
    /// sample scale at its starting value. The lattice quotient is not
    /// dilation invariant and otherwise slides towards grid-scale spikes.
    pub dilation_pin: f64,
    /// Iteration budget of the unpinned polish that follows the pinned descent.
    pub polish_iterations: usize,
    /// Largest accepted relative boundary amplitude of the result.
    pub boundary_tol: f64,
    /// Box enlargements by a factor 1.5 allowed when the boundary test fails.
    pub box_retries: usize,
}

impl Default for WeinsteinOptions {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            residual_tol: 1e-9,
            stall_rel_decrease: 1e-10,
            stall_window: 20,
            step_tol: 1e-8,
            regauge_every: 10,
            conjugate_gradient: true,
            project_orbit: false,
            dilation_pin: 10.0,
            polish_iterations: 300,
            boundary_tol: 2e-5,
            box_retries: 2,
        }
    }
}

/// A converged optimizer in the elliptic gauge together with its diagnostics.
#[derive(Clone, Debug)]
pub struct GroundState {
    pub field: Field3D,
    pub params: DipoleParams,
    pub alpha: f64,
    pub omega: f64,
    pub c_alpha: f64,
    pub weinstein: f64,
    pub report: FunctionalReport,
    pub pohozaev_residuals: [f64; 2],
    pub elliptic_residual: f64,
    pub iterations: usize,
    /// Accepted values of the descent objective: W times the dilation-pin
    /// factor `exp(mu delta^2)`, which is W itself once the pin is released.
    pub descent_history: Vec<f64>,
}

/// `(a, b)` such that `a f(b x)` solves the stationary equation, given the
/// functionals of a critical point `f` of the quotient.
pub fn elliptic_gauge(r: &FunctionalReport, alpha: f64) -> Option<(f64, f64)> {
    if !(r.n_value > 0.0 && r.sextic > 0.0 && r.kinetic > 0.0) {
        return None;
    }
    let (k3, k5) = cubic_quintic_coefficients(r, alpha);
    Some(((k5 / k3).sqrt(), k5.sqrt() / k3))
}

fn cubic_quintic_coefficients(r: &FunctionalReport, alpha: f64) -> (f64, f64) {
    let k3 = 4.0 * (1.0 + alpha) * r.kinetic / (3.0 * r.n_value);
    let k5 = alpha * r.kinetic / r.sextic;
    (k3, k5)
}

/// `omega = 3 alpha N^2 / (16 (1 + alpha) M ||f||_6^6)`, invariant under rescaling.
pub fn omega_closed_form(r: &FunctionalReport, alpha: f64) -> f64 {
    3.0 * alpha * r.n_value * r.n_value / (16.0 * (1.0 + alpha) * r.mass * r.sextic)
}

/// Rescales `f` to `g = a f(b x)` with `Gamma(g) = alpha`.
pub fn rescale_to_gamma(
    f: &Field3D,
    alpha: f64,
    p: &DipoleParams,
    gauge: Gauge,
) -> Result<(Field3D, f64, f64), GroundStateError> {
    let r = report(f, p);
    if r.kinetic == 0.0 {
        return Err(GroundStateError::ZeroGradient);
    }
    let (a, b) = match gauge {
        Gauge::Amplitude => ((alpha / r.gamma).powf(0.25), 1.0),
        Gauge::Elliptic => elliptic_gauge(&r, alpha).ok_or(GroundStateError::NoAdmissibleStart)?,
    };
    let g = if b == 1.0 { f.scale(a) } else { f.rescale(a, b) };
    Ok((g, a, b))
}

/// `C_alpha = 4 (1 + alpha) / (3 alpha^{alpha/(2(1+alpha))}) ||grad Q||^{(alpha-1)/(alpha+1)} / ||Q||_2`.
pub fn sharp_constant_from(r: &FunctionalReport, alpha: f64) -> f64 {
    let e = 1.0 + alpha;
    4.0 * e / (3.0 * alpha.powf(alpha / (2.0 * e))) * r.kinetic.sqrt().powf((alpha - 1.0) / e) / r.mass.sqrt()
}

pub fn sharp_constant(gs: &GroundState) -> f64 {
    sharp_constant_from(&gs.report, gs.alpha)
}

/// Relative residuals of the two Pohozaev identities.
pub fn pohozaev_residuals(r: &FunctionalReport, omega: f64) -> [f64; 2] {
    let (g, s, n, m) = (r.kinetic, r.sextic, r.n_value, r.mass);
    let first = (g + s - n + omega * m) / (g + s + n.abs() + omega * m);
    let second = (g / 6.0 + s / 6.0 - n / 4.0 + omega * m / 2.0) / (g / 6.0 + s / 6.0 + n.abs() / 4.0 + omega * m / 2.0);
    [first.abs(), second.abs()]
}

/// Relative L2 residual of the stationary equation, normalized by `||Q||_{H1}`.
pub fn elliptic_residual_of(q: &Field3D, omega: f64, p: &DipoleParams) -> f64 {
    let rho = q.abs_sq();
    let phi = if p.has_dipole() {
        Some(potential_of_density(q.grid(), &rho))
    } else {
        None
    };
    let lap = q.laplacian();
    let vals: Vec<C64> = q
        .values()
        .par_iter()
        .zip(lap.values().par_iter())
        .enumerate()
        .map(|(i, (v, l))| {
            let r = rho[i];
            let pot = p.lambda1 * r + phi.as_ref().map_or(0.0, |ph| p.lambda2 * ph[i]) + r * r + omega;
            -l + v * pot
        })
        .collect();
    let res = Field3D::from_values_unchecked(q.grid(), vals);
    let h1 = (q.norm_sq() + q.gradient_norm_sq()).sqrt();
    res.norm_sq().sqrt() / h1
}

pub fn elliptic_residual(gs: &GroundState) -> f64 {
    elliptic_residual_of(&gs.field, gs.omega, &gs.params)
}

/// An axially symmetric Gaussian with `N > 0`, already in the elliptic gauge
/// so that the descent starts near the right scale. Elongated along the
/// dipole axis for `lambda2 > 0` and flattened for `lambda2 < 0`.
pub fn initial_gaussian(p: &DipoleParams, alpha: f64) -> Option<Gaussian> {
    let ratios: &[f64] = if p.lambda2 > 0.0 {
        &[1.25, 2.0, 4.0, 8.0]
    } else if p.lambda2 < 0.0 {
        &[0.8, 0.5, 0.25, 0.125]
    } else {
        &[1.0]
    };
    for &ratio in ratios {
        let g = Gaussian::axial(1.0, 1.0, ratio);
        let d = if p.has_dipole() { g.dipolar() } else { 0.0 };
        let r = FunctionalReport::from_terms(g.mass(), g.kinetic(), g.quartic(), d, g.sextic(), [0.0; 3], p);
        if let Some((a, b)) = elliptic_gauge(&r, alpha) {
            return Some(Gaussian {
                amp: a,
                widths: g.widths.map(|w| w / b),
            });
        }
    }
    None
}

fn log_w(r: &FunctionalReport, alpha: f64) -> Option<f64> {
    match r.weinstein(alpha) {
        Extended::Finite(w) if w.is_finite() && w > 0.0 => Some(w.ln()),
        _ => None,
    }
}

/// `a f(b x)` realized exactly by scaling the samples by `a` and the box by `1/b`.
pub fn rescale_by_grid(f: &Field3D, a: f64, b: f64) -> Result<Field3D, crate::spectral::GridError> {
    let spec = f.grid().spec();
    let grid = if b == 1.0 {
        f.grid().clone()
    } else {
        Arc::new(Grid::new(GridSpec {
            n: spec.n,
            box_length: spec.box_length / b,
        })?)
    };
    Ok(Field3D::from_values_unchecked(&grid, f.values().iter().map(|v| v * a).collect()))
}

/// Moves `f` to the elliptic gauge exactly, through the grid.
fn regauge(f: &Field3D, r: &FunctionalReport, alpha: f64) -> Field3D {
    match elliptic_gauge(r, alpha) {
        Some((a, b)) => rescale_by_grid(f, a, b).unwrap_or_else(|_| f.scale(a)),
        None => f.clone(),
    }
}

fn normalize_amplitude(f: &Field3D, r: &FunctionalReport, alpha: f64) -> Field3D {
    match elliptic_gauge(r, alpha) {
        Some((a, _)) => f.scale(a),
        None => f.clone(),
    }
}

/// Minimizes the Weinstein quotient starting from `init`. The grid of `init`
/// is used; it may be enlarged when the result does not decay at the boundary.
pub fn minimize_weinstein(
    p: &DipoleParams,
    alpha: f64,
    init: &Field3D,
    opts: &WeinsteinOptions,
) -> Result<GroundState, GroundStateError> {
    if p.regime != Regime::Unstable {
        return Err(GroundStateError::NotUnstable(p.lambda1, p.lambda2));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(GroundStateError::BadAlpha(alpha));
    }
    let mut f = init.map(|v| C64::new(v.norm(), 0.0));
    let mut total_iterations = 0;
    let mut history = Vec::new();
    let mut retries = 0;
    loop {
        // the closing gauge fix dilates the box; the discrete problem is not
        // dilation invariant, so the result is kept on its own box
        let (mut q, iters) = descend(p, alpha, &f, opts, &mut history)?;
        total_iterations += iters;
        if opts.dilation_pin > 0.0 && opts.polish_iterations > 0 {
            let polish = WeinsteinOptions {
                dilation_pin: 0.0,
                max_iterations: opts.polish_iterations,
                ..opts.clone()
            };
            let mut trial_history = Vec::new();
            match descend(p, alpha, &q, &polish, &mut trial_history) {
                Ok((polished, n)) => {
                    q = polished;
                    total_iterations += n;
                    history.extend(trial_history);
                }
                Err(e) => debug!("unpinned polish rejected: {e}"),
            }
        }
        let edge = q.boundary_amplitude();
        if edge <= opts.boundary_tol || retries == opts.box_retries {
            if edge > opts.boundary_tol {
                warn!("ground state boundary amplitude {edge:.2e} above {:.1e}", opts.boundary_tol);
            }
            return Ok(finish(q, p, alpha, total_iterations, history));
        }
        retries += 1;
        let target = 1.5 * q.grid().box_length();
        info!("boundary amplitude {edge:.2e}; enlarging box to {target:.3}");
        let grid = Arc::new(Grid::new(GridSpec {
            n: q.grid().n(),
            box_length: target,
        })?);
        f = q.resample(&grid, 1.0);
    }
}

fn finish(q: Field3D, p: &DipoleParams, alpha: f64, iterations: usize, descent_history: Vec<f64>) -> GroundState {
    // real with a positive peak; lattice ripples in the tails keep their sign
    let peak = q.values().iter().max_by(|a, b| a.norm().total_cmp(&b.norm())).copied().unwrap_or_default();
    let sign = if peak.re < 0.0 { -1.0 } else { 1.0 };
    let q = q.map(|v| C64::new(sign * v.re, 0.0));
    let r = report(&q, p);
    let omega = omega_closed_form(&r, alpha);
    GroundState {
        elliptic_residual: elliptic_residual_of(&q, omega, p),
        pohozaev_residuals: pohozaev_residuals(&r, omega),
        c_alpha: sharp_constant_from(&r, alpha),
        weinstein: r.weinstein(alpha).finite().unwrap_or(f64::INFINITY),
        omega,
        field: q,
        params: *p,
        alpha,
        report: r,
        iterations,
        descent_history,
    }
}

struct LogWeinstein {
    alpha: f64,
}

impl ScalarObjective for LogWeinstein {
    fn value(&self, r: &FunctionalReport) -> Option<f64> {
        log_w(r, self.alpha)
    }

    fn partials(&self, r: &FunctionalReport) -> [f64; 4] {
        let e = 1.0 + self.alpha;
        [0.5 / r.mass, 1.5 / (e * r.kinetic), 0.5 * self.alpha / (e * r.sextic), -1.0 / r.n_value]
    }

    fn relative_decrease(&self, old: f64, new: f64) -> f64 {
        1.0 - (new - old).exp()
    }
}

/// One descent on `ln W` followed by the exact gauge fix.
fn descend(
    p: &DipoleParams,
    alpha: f64,
    start: &Field3D,
    opts: &WeinsteinOptions,
    history: &mut Vec<f64>,
) -> Result<(Field3D, usize), GroundStateError> {
    let r0 = report(start, p);
    if log_w(&r0, alpha).is_none() {
        return Err(GroundStateError::NoAdmissibleStart);
    }
    let f = normalize_amplitude(start, &r0, alpha);
    let settings = DescentSettings {
        max_iterations: opts.max_iterations,
        residual_tol: opts.residual_tol,
        stall_rel_decrease: opts.stall_rel_decrease,
        stall_window: opts.stall_window,
        step_tol: opts.step_tol,
        renormalize_every: opts.regauge_every,
        conjugate_gradient: opts.conjugate_gradient,
        project_orbit: opts.project_orbit,
        dilation_pin: opts.dilation_pin,
    };
    let out = shape::descend(&LogWeinstein { alpha }, p, &f, &settings).map_err(|e| match e {
        DescentError::Inadmissible => GroundStateError::NoAdmissibleStart,
        DescentError::NonFinite(it) => GroundStateError::NonFinite(it),
    })?;
    if !out.converged {
        return Err(GroundStateError::NonConvergence {
            iterations: out.iterations,
            residual: out.residual,
            weinstein: weinstein_of(&out.report, alpha),
        });
    }
    history.extend(out.history.iter().map(|v| v.exp()));
    Ok((regauge(&out.field, &report(&out.field, p), alpha), out.iterations))
}

fn weinstein_of(r: &FunctionalReport, alpha: f64) -> f64 {
    r.weinstein(alpha).finite().unwrap_or(f64::INFINITY)
}

/// Largest decrease of W over random H1 perturbations of relative size
/// `size`. A local minimizer gives a value near zero or negative.
pub fn local_min_probe(gs: &GroundState, trials: usize, size: f64, seed: u64) -> f64 {
    let q = &gs.field;
    let grid = q.grid();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h1 = (gs.report.mass + gs.report.kinetic).sqrt();
    let w0 = gs.weinstein;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        // smooth random perturbation supported where Q lives
        let noise: Vec<C64> = (0..grid.len()).map(|_| C64::new(rng.gen_range(-1.0..1.0), 0.0)).collect();
        let noise = Field3D::from_values_unchecked(grid, noise);
        let k0 = 4.0 * grid.fundamental_wavenumber();
        let smooth = noise
            .apply_multiplier(|k| C64::new((-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) / (k0 * k0)).exp(), 0.0))
            .zip_map(q, |n, v| C64::new(n.re * v.re.abs().sqrt(), 0.0));
        let nh1 = (smooth.norm_sq() + smooth.gradient_norm_sq()).sqrt();
        let delta = smooth.scale(size * h1 / nh1);
        let w = report(&q.axpy(1.0, &delta), &gs.params)
            .weinstein(gs.alpha)
            .finite()
            .unwrap_or(f64::INFINITY);
        worst = worst.max(w0 - w);
    }
    worst
}

/// Sidecar metadata persisted next to the field snapshot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundStateSidecar {
    pub alpha: f64,
    pub omega: f64,
    pub c_alpha: f64,
    pub weinstein: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gauge: Gauge,
    pub grid: GridSpec,
    pub pohozaev_residuals: [f64; 2],
    pub elliptic_residual: f64,
    pub iterations: usize,
    pub report: FunctionalReport,
}

impl GroundState {
    pub fn sidecar(&self) -> GroundStateSidecar {
        GroundStateSidecar {
            alpha: self.alpha,
            omega: self.omega,
            c_alpha: self.c_alpha,
            weinstein: self.weinstein,
            lambda1: self.params.lambda1,
            lambda2: self.params.lambda2,
            gauge: Gauge::Elliptic,
            grid: self.field.grid().spec(),
            pohozaev_residuals: self.pohozaev_residuals,
            elliptic_residual: self.elliptic_residual,
            iterations: self.iterations,
            report: self.report,
        }
    }

    /// Writes `<stem>.snap` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), GroundStateError> {
        Snapshot::from_field(&self.field, 0.0).save(&dir.join(format!("{stem}.snap")))?;
        let json = serde_json::to_string_pretty(&self.sidecar()).map_err(|e| GroundStateError::Sidecar(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), json).map_err(SnapshotError::Io)?;
        Ok(())
    }

    /// Loads a saved ground state and recomputes its diagnostics.
    pub fn load(dir: &Path, stem: &str) -> Result<Self, GroundStateError> {
        let text = std::fs::read_to_string(dir.join(format!("{stem}.json"))).map_err(SnapshotError::Io)?;
        let side: GroundStateSidecar = serde_json::from_str(&text).map_err(|e| GroundStateError::Sidecar(e.to_string()))?;
        let field = Snapshot::load(&dir.join(format!("{stem}.snap")))?.into_field_on_own_grid()?;
        let p = crate::kernel::classify_regime(side.lambda1, side.lambda2);
        Ok(finish(field, &p, side.alpha, side.iterations, Vec::new()))
    }

    /// Builds the ground state from a field assumed to be in the elliptic gauge.
    pub fn from_field(field: Field3D, p: &DipoleParams, alpha: f64) -> Self {
        finish(field, p, alpha, 0, Vec::new())
    }
}

/// Descends from the gauge-fixed Gaussian guess on `grid`.
pub fn ground_state_from_gaussian(
    p: &DipoleParams,
    alpha: f64,
    grid: &Arc<Grid>,
    opts: &WeinsteinOptions,
) -> Result<GroundState, GroundStateError> {
    if p.regime != Regime::Unstable {
        return Err(GroundStateError::NotUnstable(p.lambda1, p.lambda2));
    }
    let g = initial_gaussian(p, alpha).ok_or(GroundStateError::NoAdmissibleStart)?;
    let init = Field3D::from_real_fn(grid, |x| g.eval(x));
    minimize_weinstein(p, alpha, &init, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::classify_regime;
    use crate::spectral::make_grid;

    #[test]
    fn rescale_identity_and_gamma_law() {
        let p = classify_regime(-1.0, 0.0);
        let grid = make_grid(32, 24.0).unwrap();
        let g = Gaussian::isotropic(1.0, 2.0);
        let f = Field3D::from_real_fn(&grid, |x| g.eval(x));
        let (h, a, b) = rescale_to_gamma(&f, 0.7, &p, Gauge::Amplitude).unwrap();
        assert_eq!(b, 1.0);
        assert!((report(&h, &p).gamma - 0.7).abs() < 1e-12);
        let (h2, a2, _) = rescale_to_gamma(&h, 0.7, &p, Gauge::Amplitude).unwrap();
        assert!((a2 - 1.0).abs() < 1e-12 && h.relative_l2_distance(&h2) < 1e-12);
        assert!(a > 0.0);
    }

    #[test]
    fn initial_guess_is_admissible() {
        for (l1, l2) in [(-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0)] {
            let p = classify_regime(l1, l2);
            let g = initial_gaussian(&p, 1.0).expect("admissible");
            assert!(g.n_value(&p) > 0.0);
        }
    }

    #[test]
    fn small_grid_descent_converges() {
        let p = classify_regime(-1.0, 0.0);
        let grid = make_grid(32, 100.0).unwrap();
        let opts = WeinsteinOptions {
            residual_tol: 1e-8,
            boundary_tol: 1e-3,
            ..Default::default()
        };
        let gs = ground_state_from_gaussian(&p, 1.0, &grid, &opts).unwrap();
        assert!(gs.elliptic_residual < 1e-6, "{}", gs.elliptic_residual);
        assert!((gs.report.gamma - 1.0).abs() < 1e-6);
        assert!(gs.descent_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-14)));
        assert!((gs.c_alpha * gs.weinstein - 1.0).abs() < 1e-6);
    }
}
