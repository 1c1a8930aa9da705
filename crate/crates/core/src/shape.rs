//! Preconditioned conjugate-gradient descent for objectives that depend on a
//! field only through `M`, `G = ||grad f||^2`, `S = ||f||_6^6` and `N`.
//!
//! Such objectives are invariant under `f -> a f(b x)` in the continuum. On
//! the lattice the dilation direction is not exactly flat, so the descent
//! optionally pins the sample scale `ln(G/M)` with a quadratic penalty.

use log::{debug, trace};
use rayon::prelude::*;

use crate::functionals::{densities, report, Densities, FunctionalReport};
use crate::kernel::DipoleParams;
use crate::spectral::{Field3D, C64};

/// A function of `(M, G, S, N)`.
pub(crate) trait ScalarObjective {
    /// `None` outside the domain (treated as `+inf`).
    fn value(&self, r: &FunctionalReport) -> Option<f64>;

    /// Partial derivatives with respect to `(M, G, S, N)`.
    fn partials(&self, r: &FunctionalReport) -> [f64; 4] {
        numerical_partials(|r| self.value(r), r)
    }

    /// Relative decrease from `old` to `new`, used by the stall test.
    fn relative_decrease(&self, old: f64, new: f64) -> f64 {
        (old - new) / old.abs().max(f64::MIN_POSITIVE)
    }
}

/// Central differences in relative steps of each argument.
pub(crate) fn numerical_partials(f: impl Fn(&FunctionalReport) -> Option<f64>, r: &FunctionalReport) -> [f64; 4] {
    const H: f64 = 1e-5;
    let mut out = [0.0; 4];
    for (j, o) in out.iter_mut().enumerate() {
        let x = scalar(r, j);
        let dx = H * x.abs().max(1e-300);
        let (Some(up), Some(dn)) = (f(&with_scalar(r, j, x + dx)), f(&with_scalar(r, j, x - dx))) else {
            continue;
        };
        *o = (up - dn) / (2.0 * dx);
    }
    out
}

fn scalar(r: &FunctionalReport, j: usize) -> f64 {
    [r.mass, r.kinetic, r.sextic, r.n_value][j]
}

fn with_scalar(r: &FunctionalReport, j: usize, v: f64) -> FunctionalReport {
    let mut out = *r;
    match j {
        0 => out.mass = v,
        1 => out.kinetic = v,
        2 => out.sextic = v,
        _ => out.n_value = v,
    }
    out
}

#[derive(Clone, Debug)]
pub(crate) struct DescentSettings {
    pub max_iterations: usize,
    pub residual_tol: f64,
    pub stall_rel_decrease: f64,
    pub stall_window: usize,
    pub step_tol: f64,
    pub renormalize_every: usize,
    pub conjugate_gradient: bool,
    pub project_orbit: bool,
    pub dilation_pin: f64,
}

/// Final state of a descent; `history` holds the accepted objective values.
pub(crate) struct Descent {
    pub field: Field3D,
    pub report: FunctionalReport,
    pub iterations: usize,
    pub residual: f64,
    pub value: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

#[derive(Debug)]
pub(crate) enum DescentError {
    Inadmissible,
    NonFinite(usize),
}

struct Eval {
    report: FunctionalReport,
    lap: Field3D,
    dens: Densities,
}

fn evaluate(f: &Field3D, p: &DipoleParams) -> Eval {
    let spec = f.to_spectrum();
    let mut lap_spec = spec.clone();
    lap_spec.multiply_by_table(f.grid().k_squared_table());
    let lap = lap_spec.to_field().scale(-1.0);
    let dens = densities(f, p);
    let mut r = report_with_kinetic(f, p, &dens, spec.weighted_norm_sq());
    r.momentum = [0.0; 3];
    Eval { report: r, lap, dens }
}

fn report_with_kinetic(f: &Field3D, p: &DipoleParams, d: &Densities, kinetic: f64) -> FunctionalReport {
    let grid = f.grid();
    let rho = &d.rho;
    let mass = grid.integrate(rho);
    let quartic = grid.integrate(&rho.par_iter().map(|r| r * r).collect::<Vec<_>>());
    let sextic = grid.integrate(&rho.par_iter().map(|r| r * r * r).collect::<Vec<_>>());
    let dipolar = match &d.phi {
        Some(phi) => grid.integrate(&phi.par_iter().zip(rho.par_iter()).map(|(a, b)| a * b).collect::<Vec<_>>()),
        None => 0.0,
    };
    FunctionalReport::from_terms(mass, kinetic, quartic, dipolar, sextic, [0.0; 3], p)
}

/// L2 gradient `sum_X dPhi/dX grad X` from the partials.
fn gradient(f: &Field3D, ev: &Eval, d: [f64; 4], p: &DipoleParams) -> Field3D {
    let [dm, dg, ds, dn] = d;
    let rho = &ev.dens.rho;
    let phi = ev.dens.phi.as_ref();
    let vals = f
        .values()
        .par_iter()
        .zip(ev.lap.values().par_iter())
        .enumerate()
        .map(|(i, (v, l))| {
            let rr = rho[i];
            let nl = p.lambda1 * rr + phi.map_or(0.0, |ph| p.lambda2 * ph[i]);
            v * (2.0 * dm + 6.0 * ds * rr * rr - 4.0 * dn * nl) - l * (2.0 * dg)
        })
        .collect();
    Field3D::from_values_unchecked(f.grid(), vals)
}

fn precondition(g: &Field3D, shift: f64, scale: f64) -> Field3D {
    let mut spec = g.to_spectrum();
    let table: Vec<f64> = g
        .grid()
        .k_squared_table()
        .par_iter()
        .map(|k2| scale / (shift + k2))
        .collect();
    spec.multiply_by_table(&table);
    spec.to_field()
}

/// Removes from `d` its L2 components along the amplitude and dilation
/// generators `f` and `x.grad f`.
fn project_out_orbit(f: &Field3D, d: Field3D) -> Field3D {
    let grad = f.gradient();
    let xg = f.map(|_| C64::default());
    let xg = (0..3).fold(xg, |acc, j| acc.zip_map(&grad[j].map_with_point(|x, v| v * x[j]), |a, b| a + b));
    let basis = [f.clone(), xg];
    let gram = [
        [basis[0].inner_re(&basis[0]), basis[0].inner_re(&basis[1])],
        [basis[1].inner_re(&basis[0]), basis[1].inner_re(&basis[1])],
    ];
    let rhs = [basis[0].inner_re(&d), basis[1].inner_re(&d)];
    let det = gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0];
    if det.abs() <= 1e-14 * gram[0][0] * gram[1][1] {
        return d;
    }
    let c0 = (rhs[0] * gram[1][1] - rhs[1] * gram[0][1]) / det;
    let c1 = (gram[0][0] * rhs[1] - gram[1][0] * rhs[0]) / det;
    d.axpy(-c0, &basis[0]).axpy(-c1, &basis[1])
}

fn renormalize(f: &Field3D, r: &FunctionalReport, mass: f64) -> Field3D {
    f.scale((mass / r.mass).sqrt())
}

/// Minimizes `obj` from `start`, keeping the mass of `start` by amplitude
/// renormalization (the objective being amplitude invariant).
pub(crate) fn descend(
    obj: &dyn ScalarObjective,
    p: &DipoleParams,
    start: &Field3D,
    s: &DescentSettings,
) -> Result<Descent, DescentError> {
    let mut ev = evaluate(start, p);
    let mass0 = ev.report.mass;
    if !(mass0 > 0.0) || obj.value(&ev.report).is_none() {
        return Err(DescentError::Inadmissible);
    }
    let mut f = start.clone();
    let pin = (ev.report.kinetic / ev.report.mass).ln();
    let mu = s.dilation_pin;
    let total = |r: &FunctionalReport| obj.value(r).map(|v| v + mu * ((r.kinetic / r.mass).ln() - pin).powi(2));
    let mut value = total(&ev.report).ok_or(DescentError::Inadmissible)?;
    let mut history = vec![value];
    let mut recent = vec![value];
    let mut prev: Option<(Field3D, Field3D, f64)> = None;
    let mut step = 1.0f64;
    let mut residual = f64::INFINITY;
    let done = |f: Field3D, ev: Eval, it, residual, value, converged, history| {
        Ok(Descent {
            field: f,
            report: ev.report,
            iterations: it,
            residual,
            value,
            converged,
            history,
        })
    };
    for it in 0..s.max_iterations {
        let r = ev.report;
        let mut d = obj.partials(&r);
        if mu > 0.0 {
            let delta = (r.kinetic / r.mass).ln() - pin;
            d[0] -= 2.0 * mu * delta / r.mass;
            d[1] += 2.0 * mu * delta / r.kinetic;
        }
        let g = gradient(&f, &ev, d, p);
        let scale = 0.5 / d[1].abs().max(1e-300);
        let shift = (d[0] / d[1]).abs().max(1e-12 * r.kinetic / r.mass);
        let h1 = (r.mass + r.kinetic).sqrt();
        residual = g.norm_sq().sqrt() * scale / h1;
        if !residual.is_finite() {
            return Err(DescentError::NonFinite(it));
        }
        if residual < s.residual_tol {
            debug!("converged at iteration {it}: residual {residual:.3e}");
            return done(f, ev, it, residual, value, true, history);
        }
        let pg = precondition(&g, shift, scale);
        let gpg = g.inner_re(&pg);
        let mut dir = pg.scale(-1.0);
        if s.conjugate_gradient {
            if let Some((d_old, pg_old, gpg_old)) = &prev {
                let beta = (gpg - g.inner_re(pg_old)) / gpg_old;
                if beta > 0.0 {
                    let cand = dir.axpy(beta, d_old);
                    if g.inner_re(&cand) < 0.0 {
                        dir = cand;
                    }
                }
            }
        }
        if s.project_orbit {
            dir = project_out_orbit(&f, dir);
            if g.inner_re(&dir) >= 0.0 {
                dir = project_out_orbit(&f, pg.scale(-1.0));
            }
            if g.inner_re(&dir) >= 0.0 {
                dir = pg.scale(-1.0);
            }
        }
        let slope = g.inner_re(&dir);
        // Armijo backtracking
        let mut t = (2.0 * step).min(4.0);
        let mut accepted = None;
        for _ in 0..40 {
            let trial = f.axpy(t, &dir);
            if let Some(v) = total(&report(&trial, p)) {
                if v <= value + 1e-4 * t * slope {
                    accepted = Some((trial, v));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, _)) = accepted else {
            debug!("line search stalled at iteration {it}, residual {residual:.3e}");
            let converged = residual < 1e3 * s.residual_tol;
            return done(f, ev, it, residual, value, converged, history);
        };
        step = t;
        let step_h1 = {
            let d = dir.scale(t);
            ((d.norm_sq() + d.gradient_norm_sq()) / (r.mass + r.kinetic).max(1e-300)).sqrt()
        };
        f = trial;
        if (it + 1) % s.renormalize_every.max(1) == 0 {
            f = renormalize(&f, &report(&f, p), mass0);
        }
        prev = Some((dir, pg, gpg));
        ev = evaluate(&f, p);
        value = total(&ev.report).ok_or(DescentError::NonFinite(it))?;
        history.push(value);
        recent.push(value);
        trace!("it {it}: value {value:.15e} res {residual:.3e} t {t:.3e} slope {slope:.3e} step_h1 {step_h1:.3e}");
        if it % 50 == 0 {
            debug!("iteration {it}: value {value:.12e}, residual {residual:.3e}, step {t:.2e}");
        }
        if recent.len() > s.stall_window {
            let old = recent[recent.len() - 1 - s.stall_window];
            let dec = obj.relative_decrease(old, value);
            if dec.abs() < s.stall_rel_decrease && step_h1 < s.step_tol {
                debug!("stalled at iteration {it}: residual {residual:.3e}");
                return done(f, ev, it + 1, residual, value, true, history);
            }
        }
    }
    let it = s.max_iterations;
    done(f, ev, it, residual, value, false, history)
}
