//! Virial functionals `V = int phi |u|^2`, `V'` and `V''` for the weight
//! `|x|^2` and for the localized radial weight `phi = R^2 psi(|x| / R)`,
//! and the `I(u(t)) >= eta` monitor.
//!
//! The localized profile is `psi(r) = r^2` on `[0, 1]`, a C4 polynomial blend
//! on `[1, 2]` and constant beyond.

use std::sync::OnceLock;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evolution::{evolve_with, EvolutionConfig, EvolutionError, TrajectoryRecord};
use crate::functionals::report;
use crate::io::csv_line;
use crate::kernel::{potential_of_density, DipoleParams};
use crate::spectral::{Field3D, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightKind {
    Quadratic,
    Localized { radius: f64 },
}

/// Coefficients of `psi'(1 + t) = sum_k c_k t^k` on `t in [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendProfile {
    pub coeffs: [f64; 9],
    /// `max |psi''''|` over the blend.
    pub fourth_derivative_bound: f64,
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
}

fn poly_derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, a)| k as f64 * a).collect()
}

fn poly_integral(c: &[f64]) -> Vec<f64> {
    std::iter::once(0.0).chain(c.iter().enumerate().map(|(k, a)| a / (k + 1) as f64)).collect()
}

/// Solves the 4x4 system by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// The blend with `psi'(1) = 2`, `psi''(1) = 2` and vanishing `psi'''`,
/// `psi''''` at `t = 0`, all of `psi'..psi''''` vanishing at `t = 1`, and
/// leading coefficient `c8`.
fn blend_with(c8: f64) -> [f64; 9] {
    let falling = |k: usize, d: usize| (0..d).map(|j| (k - j) as f64).product::<f64>();
    let mut a = [[0.0; 4]; 4];
    let mut b = [0.0; 4];
    let fixed = [(0usize, 2.0), (1, 2.0), (8, c8)];
    for d in 0..4 {
        for (j, k) in (4..8).enumerate() {
            a[d][j] = falling(k, d);
        }
        b[d] = -fixed.iter().filter(|(k, _)| *k >= d).map(|&(k, c)| c * falling(k, d)).sum::<f64>();
    }
    let x = solve4(a, b);
    [2.0, 2.0, 0.0, 0.0, x[0], x[1], x[2], x[3], c8]
}

/// `max |psi''''|` of an admissible blend, `None` when the blend violates
/// `psi' >= 0`, `psi'' <= 2` or `psi <= r^2`.
fn blend_cost(c: &[f64; 9], samples: usize) -> Option<f64> {
    let d1 = poly_derivative(c);
    let d3 = poly_derivative(&poly_derivative(&d1));
    let int = poly_integral(c);
    let mut worst = 0.0f64;
    for i in 0..=samples {
        let t = i as f64 / samples as f64;
        let r = 1.0 + t;
        let psi = 1.0 + poly_eval(&int, t);
        if poly_eval(c, t) < -1e-12 || poly_eval(&d1, t) > 2.0 + 1e-12 || psi > r * r + 1e-12 {
            return None;
        }
        worst = worst.max(poly_eval(&d3, t).abs());
    }
    Some(worst)
}

/// The admissible blend with the smallest fourth derivative.
pub fn blend_profile() -> &'static BlendProfile {
    static PROFILE: OnceLock<BlendProfile> = OnceLock::new();
    PROFILE.get_or_init(|| {
        let search = |lo: f64, hi: f64, n: usize, samples: usize| {
            (0..=n)
                .filter_map(|i| {
                    let c8 = lo + (hi - lo) * i as f64 / n as f64;
                    blend_cost(&blend_with(c8), samples).map(|m| (m, c8))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("admissible blend exists")
        };
        let (_, coarse) = search(-200.0, 200.0, 800, 400);
        let (bound, c8) = search(coarse - 0.5, coarse + 0.5, 400, 2000);
        BlendProfile {
            coeffs: blend_with(c8),
            fourth_derivative_bound: bound,
        }
    })
}

/// `psi` and its first four derivatives at `r`.
pub fn psi_derivatives(r: f64) -> [f64; 5] {
    if r <= 1.0 {
        return [r * r, 2.0 * r, 2.0, 0.0, 0.0];
    }
    let c = &blend_profile().coeffs;
    let int = poly_integral(c);
    let t = r.min(2.0) - 1.0;
    let psi = 1.0 + poly_eval(&int, t);
    if r >= 2.0 {
        return [psi, 0.0, 0.0, 0.0, 0.0];
    }
    let d1 = poly_derivative(c);
    let d2 = poly_derivative(&d1);
    let d3 = poly_derivative(&d2);
    [psi, poly_eval(c, t), poly_eval(&d1, t), poly_eval(&d2, t), poly_eval(&d3, t)]
}

/// Pointwise tables of a radial weight on a grid.
#[derive(Clone, Debug)]
pub struct VirialWeight {
    pub kind: WeightKind,
    /// `phi`.
    pub phi: Vec<f64>,
    /// `phi' / rho`.
    pub radial: Vec<f64>,
    /// `phi'' / rho^2 - phi' / rho^3`.
    pub angular: Vec<f64>,
    /// `Delta phi = phi'' + 2 phi' / rho`.
    pub laplacian: Vec<f64>,
    /// `Delta^2 phi = phi'''' + 4 phi''' / rho`.
    pub bilaplacian: Vec<f64>,
}

impl VirialWeight {
    pub fn new(grid: &Grid, kind: WeightKind) -> Self {
        let tables: Vec<[f64; 5]> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.point(i);
                let rho = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                match kind {
                    WeightKind::Quadratic => [rho * rho, 2.0, 0.0, 6.0, 0.0],
                    WeightKind::Localized { radius: big_r } => {
                        let r = rho / big_r;
                        if r <= 1.0 {
                            return [rho * rho, 2.0, 0.0, 6.0, 0.0];
                        }
                        let [psi, d1, d2, d3, d4] = psi_derivatives(r);
                        let (f, f1, f2, f3, f4) = (big_r * big_r * psi, big_r * d1, d2, d3 / big_r, d4 / (big_r * big_r));
                        [f, f1 / rho, f2 / (rho * rho) - f1 / rho.powi(3), f2 + 2.0 * f1 / rho, f4 + 4.0 * f3 / rho]
                    }
                }
            })
            .collect();
        if let WeightKind::Localized { radius } = kind {
            if 2.0 * radius > 0.5 * grid.box_length() {
                warn!("weight radius {radius} leaves the flat part outside the box (L = {})", grid.box_length());
            }
        }
        let col = |j: usize| tables.iter().map(|t| t[j]).collect::<Vec<_>>();
        Self {
            kind,
            phi: col(0),
            radial: col(1),
            angular: col(2),
            laplacian: col(3),
            bilaplacian: col(4),
        }
    }
}

/// Fraction of the mass with some coordinate beyond `3L/8`; the quadratic
/// weight is flagged when it exceeds 1%.
pub fn boundary_mass_fraction(u: &Field3D) -> f64 {
    let grid = u.grid();
    let edge = 0.375 * grid.box_length();
    let outer: Vec<f64> = u
        .values()
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let x = grid.point(i);
            if x.iter().any(|c| c.abs() > edge) {
                z.norm_sqr()
            } else {
                0.0
            }
        })
        .collect();
    let m = u.norm_sq();
    if m > 0.0 {
        grid.integrate(&outer) / m
    } else {
        0.0
    }
}

pub const BOUNDARY_MASS_LIMIT: f64 = 0.01;

fn guard(u: &Field3D, w: &VirialWeight) -> bool {
    if w.kind != WeightKind::Quadratic {
        return false;
    }
    let frac = boundary_mass_fraction(u);
    let flagged = frac > BOUNDARY_MASS_LIMIT;
    if flagged {
        warn!("quadratic weight on data with boundary mass fraction {frac:.3e}");
    }
    flagged
}

fn weighted(grid: &Grid, w: &[f64], f: &[f64]) -> f64 {
    grid.integrate(&w.par_iter().zip(f.par_iter()).map(|(a, b)| a * b).collect::<Vec<_>>())
}

/// `V = int phi |u|^2`.
pub fn virial_v(u: &Field3D, w: &VirialWeight) -> f64 {
    weighted(u.grid(), &w.phi, &u.abs_sq())
}

/// `V' = 2 Im int (grad phi . grad u) conj(u)`, with `grad phi = (phi' / rho) x`.
pub fn virial_vp(u: &Field3D, w: &VirialWeight) -> f64 {
    let grid = u.grid();
    let g = u.gradient();
    let vals: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let z = u.values()[i].conj();
            let dir = (0..3).map(|j| x[j] * g[j].values()[i]).sum::<crate::spectral::C64>();
            w.radial[i] * (dir * z).im
        })
        .collect();
    2.0 * grid.integrate(&vals)
}

/// The five terms of `V''` (kinetic, angular, local nonlinear, bilaplacian, dipolar).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VppTerms {
    pub kinetic: f64,
    pub angular: f64,
    pub local: f64,
    pub bilaplacian: f64,
    pub dipolar: f64,
}

impl VppTerms {
    pub fn total(&self) -> f64 {
        self.kinetic + self.angular + self.local - self.bilaplacian + self.dipolar
    }
}

/// `sum_j x_j (phi' / rho) d_j Phi` for the dipolar potential of `|u|^2`, times `|u|^2`.
fn dipolar_term(u: &Field3D, w: &VirialWeight, p: &DipoleParams, rho: &[f64]) -> f64 {
    if !p.has_dipole() {
        return 0.0;
    }
    let grid = u.grid();
    let phi = Field3D::from_real(grid, &potential_of_density(grid, rho));
    let g = phi.gradient();
    let vals: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let dir: f64 = (0..3).map(|j| x[j] * g[j].values()[i].re).sum();
            w.radial[i] * dir * rho[i]
        })
        .collect();
    -2.0 * p.lambda2 * grid.integrate(&vals)
}

pub fn virial_vpp_terms(u: &Field3D, w: &VirialWeight, p: &DipoleParams) -> VppTerms {
    let grid = u.grid();
    let rho = u.abs_sq();
    let g = u.gradient();
    let (kin, ang): (Vec<f64>, Vec<f64>) = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let grad2: f64 = (0..3).map(|j| g[j].values()[i].norm_sqr()).sum();
            let dir = (0..3).map(|j| x[j] * g[j].values()[i]).sum::<crate::spectral::C64>();
            (w.radial[i] * grad2, w.angular[i] * dir.norm_sqr())
        })
        .unzip();
    let local: Vec<f64> = rho.par_iter().map(|r| p.lambda1 * r * r + 4.0 / 3.0 * r * r * r).collect();
    VppTerms {
        kinetic: 4.0 * grid.integrate(&kin),
        angular: 4.0 * grid.integrate(&ang),
        local: weighted(grid, &w.laplacian, &local),
        bilaplacian: weighted(grid, &w.bilaplacian, &rho),
        dipolar: dipolar_term(u, w, p, &rho),
    }
}

/// `V''` assembled from its five terms.
pub fn virial_vpp(u: &Field3D, w: &VirialWeight, p: &DipoleParams) -> f64 {
    virial_vpp_terms(u, w, p).total()
}

/// All three virial values at one time, with the boundary-mass flag of the
/// quadratic weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirialEval {
    pub v: f64,
    pub vp: f64,
    pub vpp: f64,
    pub i_value: f64,
    pub boundary_flag: bool,
}

pub fn virial_eval(u: &Field3D, w: &VirialWeight, p: &DipoleParams) -> VirialEval {
    VirialEval {
        v: virial_v(u, w),
        vp: virial_vp(u, w),
        vpp: virial_vpp(u, w, p),
        i_value: report(u, p).i_value,
        boundary_flag: guard(u, w),
    }
}

/// Smallest radius whose ball holds `fraction` of the mass.
pub fn covering_radius(u: &Field3D, fraction: f64) -> f64 {
    let grid = u.grid();
    let mut pts: Vec<(f64, f64)> = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let x = grid.point(i);
            ((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt(), z.norm_sqr())
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (r, m) in &pts {
        acc += m;
        if acc >= fraction * total {
            return *r;
        }
    }
    pts.last().map_or(0.0, |p| p.0)
}

/// `int_{|x| >= R}` of `|grad u|^2`, `|u|^2` and `|u|^4`.
pub fn tail_quantities(u: &Field3D, radius: f64) -> [f64; 3] {
    let grid = u.grid();
    let g = u.gradient();
    let r2 = radius * radius;
    let rows: Vec<[f64; 3]> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] < r2 {
                return [0.0; 3];
            }
            let grad2: f64 = (0..3).map(|j| g[j].values()[i].norm_sqr()).sum();
            let rho = u.values()[i].norm_sqr();
            [grad2, rho, rho * rho]
        })
        .collect();
    [0, 1, 2].map(|j| grid.integrate(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
}

/// The dipolar virial term against its homogeneous value `6 lambda2 D`: the
/// deficit `max(0, 6 lambda2 D - term)` and the ratio of the deficit to
/// `tail kinetic + R^-2 tail mass + tail quartic`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipolarVirialBound {
    pub term: f64,
    pub homogeneous: f64,
    pub deficit: f64,
    pub tails: [f64; 3],
    pub constant: f64,
}

pub fn dipolar_virial_bound(u: &Field3D, radius: f64, p: &DipoleParams) -> DipolarVirialBound {
    let w = VirialWeight::new(u.grid(), WeightKind::Localized { radius });
    let rho = u.abs_sq();
    let term = dipolar_term(u, &w, p, &rho);
    let homogeneous = 6.0 * p.lambda2 * report(u, p).dipolar;
    let deficit = (homogeneous - term).max(0.0);
    let tails = tail_quantities(u, radius);
    let scale = tails[0] + tails[1] / (radius * radius) + tails[2];
    let constant = if deficit == 0.0 { 0.0 } else { deficit / scale };
    DipolarVirialBound {
        term,
        homogeneous,
        deficit,
        tails,
        constant,
    }
}

/// Mass-weighted mean position.
pub fn center_of_mass(u: &Field3D) -> [f64; 3] {
    let grid = u.grid();
    let m = u.norm_sq();
    if m == 0.0 {
        return [0.0; 3];
    }
    [0usize, 1, 2].map(|j| {
        let vals: Vec<f64> = u.values().par_iter().enumerate().map(|(i, z)| grid.point(i)[j] * z.norm_sqr()).collect();
        grid.integrate(&vals) / m
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VirialSeries {
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    pub vp: Vec<f64>,
    pub vpp_direct: Vec<f64>,
    /// Centered second difference of `V`; `NaN` at the end points.
    pub vpp_fd: Vec<f64>,
    pub i_series: Vec<f64>,
    pub boundary_flag: bool,
}

impl VirialSeries {
    pub const CSV_COLUMNS: [&'static str; 6] = ["t", "V", "Vp", "Vpp_direct", "Vpp_fd", "I"];

    pub fn from_evaluations(times: Vec<f64>, evals: &[VirialEval]) -> Self {
        let v: Vec<f64> = evals.iter().map(|e| e.v).collect();
        let n = v.len();
        let vpp_fd = (0..n)
            .map(|i| {
                if i == 0 || i + 1 >= n {
                    return f64::NAN;
                }
                let (h0, h1) = (times[i] - times[i - 1], times[i + 1] - times[i]);
                2.0 * (h0 * v[i + 1] - (h0 + h1) * v[i] + h1 * v[i - 1]) / (h0 * h1 * (h0 + h1))
            })
            .collect();
        Self {
            times,
            vp: evals.iter().map(|e| e.vp).collect(),
            vpp_direct: evals.iter().map(|e| e.vpp).collect(),
            i_series: evals.iter().map(|e| e.i_value).collect(),
            boundary_flag: evals.iter().any(|e| e.boundary_flag),
            v,
            vpp_fd,
        }
    }

    /// Centered first difference of `V`, `NaN` at the end points.
    pub fn vp_fd(&self) -> Vec<f64> {
        let n = self.v.len();
        (0..n)
            .map(|i| {
                if i == 0 || i + 1 >= n {
                    f64::NAN
                } else {
                    (self.v[i + 1] - self.v[i - 1]) / (self.times[i + 1] - self.times[i - 1])
                }
            })
            .collect()
    }

    /// `max |Vpp_direct - Vpp_fd| / max |Vpp_direct|` over interior times.
    pub fn vpp_discrepancy(&self) -> f64 {
        let scale = self.vpp_direct.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let err = self
            .vpp_direct
            .iter()
            .zip(&self.vpp_fd)
            .filter(|(_, f)| f.is_finite())
            .fold(0.0f64, |a, (d, f)| a.max((d - f).abs()));
        err / scale.max(f64::MIN_POSITIVE)
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::CSV_COLUMNS.join(",");
        out.push('\n');
        for i in 0..self.times.len() {
            out.push_str(&csv_line(&[self.times[i], self.v[i], self.vp[i], self.vpp_direct[i], self.vpp_fd[i], self.i_series[i]]));
            out.push('\n');
        }
        out
    }
}

/// Evolves `u0` and evaluates the virial functionals at every output time.
pub fn virial_series(
    u0: &Field3D,
    cfg: &EvolutionConfig,
    p: &DipoleParams,
    kind: WeightKind,
) -> Result<(TrajectoryRecord, VirialSeries), EvolutionError> {
    let w = VirialWeight::new(u0.grid(), kind);
    let mut evals = Vec::new();
    let mut times = Vec::new();
    let cfg = EvolutionConfig {
        snapshot_stride: Some(cfg.output_stride),
        ..cfg.clone()
    };
    let traj = evolve_with(u0, &cfg, p, |_, t, u| {
        times.push(t);
        evals.push(virial_eval(u, &w, p));
    })?;
    Ok((traj, VirialSeries::from_evaluations(times, &evals)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IPositivityReport {
    pub i_initial: f64,
    pub i_min: f64,
    pub t_min: f64,
    pub eta: f64,
    pub passed: bool,
}

/// Minimum of `I(u(t))` over the trusted window against `eta_fraction * I(u0)`.
pub fn monitor_i_positivity(traj: &TrajectoryRecord, eta_fraction: f64) -> IPositivityReport {
    let i_initial = traj.rows.first().map_or(0.0, |r| r.i_value);
    let (t_min, i_min) = traj
        .trusted_rows()
        .map(|(t, r)| (t, r.i_value))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0.0, i_initial));
    let eta = eta_fraction * i_initial;
    IPositivityReport {
        i_initial,
        i_min,
        t_min,
        eta,
        passed: i_min >= eta,
    }
}
