//! Periodic-box grid, the discrete Fourier transform pair, spectral
//! multipliers and quadrature.
//!
//! The box is `[-L/2, L/2)^3` sampled with `N` points per axis, `x_j = -L/2 + j h`.
//! Samples are stored row-major with `x1` fastest: index `i1 + N*(i2 + N*i3)`.
//!
//! Transform normalization: the forward transform is `F(k) = h^3 sum_x f(x) e^{-ik.x}`
//! (a Riemann sum of the continuum transform), the inverse is
//! `f(x) = L^{-3} sum_k F(k) e^{ik.x}`. With this pair
//! `h^3 sum |f|^2 = L^{-3} sum |F|^2`, the discrete form of `int |f|^2 = (2pi)^{-3} int |F|^2`.
//!
//! Fields used with this module are expected to decay to negligible values
//! at the box boundary. As a rule of thumb choose `L/2` at least a few
//! decay lengths beyond the support; [`Field3D::boundary_amplitude`] reports
//! how well a given field satisfies this.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("points per axis must be even and at least 8, got {0}")]
    BadSize(usize),
    #[error("box length must be positive and finite, got {0}")]
    BadLength(f64),
    #[error("expected {expected} samples for this grid, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field contains a non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("fields live on different grids ({0} vs {1})")]
    GridMismatch(GridSpec, GridSpec),
}

/// Serializable description of a grid: points per axis and box length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub box_length: f64,
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N={} L={}", self.n, self.box_length)
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.n < 8 || !self.n.is_multiple_of(2) {
            return Err(GridError::BadSize(self.n));
        }
        if !(self.box_length.is_finite() && self.box_length > 0.0) {
            return Err(GridError::BadLength(self.box_length));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.box_length / self.n as f64
    }
}

/// A periodic grid with its wavenumber lattice and FFT plans.
///
/// Grids are shared between fields through `Arc`.
pub struct Grid {
    spec: GridSpec,
    spacing: f64,
    coords: Vec<f64>,
    /// Wavenumbers in FFT storage order.
    k: Vec<f64>,
    /// Same as `k` with the Nyquist entry zeroed, for odd-order symbols.
    k_odd: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    ksq: OnceLock<Vec<f64>>,
    dipole: OnceLock<Vec<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("spec", &self.spec).finish()
    }
}

/// Builds a shared grid with `n` points per axis on a box of side `box_length`.
pub fn make_grid(n: usize, box_length: f64) -> Result<Arc<Grid>, GridError> {
    Grid::new(GridSpec { n, box_length }).map(Arc::new)
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Self, GridError> {
        spec.validate()?;
        let n = spec.n;
        let h = spec.spacing();
        let l = spec.box_length;
        let coords = (0..n).map(|j| -0.5 * l + j as f64 * h).collect();
        let k: Vec<f64> = (0..n)
            .map(|j| {
                let m = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
                2.0 * PI * m / l
            })
            .collect();
        let mut k_odd = k.clone();
        k_odd[n / 2] = 0.0;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Ok(Self {
            spec,
            spacing: h,
            coords,
            k,
            k_odd,
            fwd,
            inv,
            ksq: OnceLock::new(),
            dipole: OnceLock::new(),
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn len(&self) -> usize {
        self.spec.n.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn box_length(&self) -> f64 {
        self.spec.box_length
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Quadrature weight `h^3`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    pub fn volume(&self) -> f64 {
        self.spec.box_length.powi(3)
    }

    /// Physical coordinates along one axis.
    pub fn axis_coords(&self) -> &[f64] {
        &self.coords
    }

    /// Wavenumbers along one axis in FFT storage order.
    pub fn axis_wavenumbers(&self) -> &[f64] {
        &self.k
    }

    /// Wavenumbers with the Nyquist mode removed.
    pub fn axis_wavenumbers_odd(&self) -> &[f64] {
        &self.k_odd
    }

    /// Smallest nonzero wavenumber magnitude, `2 pi / L`.
    pub fn fundamental_wavenumber(&self) -> f64 {
        2.0 * PI / self.spec.box_length
    }

    /// Largest `|k|^2` on the lattice (the corner `(N/2, N/2, N/2)` mode).
    pub fn max_k_squared(&self) -> f64 {
        let kn = PI / self.spacing;
        3.0 * kn * kn
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        let n = self.spec.n;
        i1 + n * (i2 + n * i3)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.spec.n;
        (idx % n, (idx / n) % n, idx / (n * n))
    }

    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let (i1, i2, i3) = self.unravel(idx);
        [self.coords[i1], self.coords[i2], self.coords[i3]]
    }

    #[inline]
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let (i1, i2, i3) = self.unravel(idx);
        [self.k[i1], self.k[i2], self.k[i3]]
    }

    /// Evaluates `f` at every lattice point, in storage order.
    pub fn sample<T: Send>(&self, f: impl Fn([f64; 3]) -> T + Sync) -> Vec<T> {
        (0..self.len()).into_par_iter().map(|i| f(self.point(i))).collect()
    }

    /// Evaluates a symbol at every lattice wavevector, in storage order.
    pub fn symbol_table<T: Send>(&self, symbol: impl Fn([f64; 3]) -> T + Sync) -> Vec<T> {
        (0..self.len())
            .into_par_iter()
            .map(|i| symbol(self.wavevector(i)))
            .collect()
    }

    /// `|k|^2` at every lattice wavevector, computed once per grid.
    pub fn k_squared_table(&self) -> &[f64] {
        self.ksq
            .get_or_init(|| self.symbol_table(|k| k[0] * k[0] + k[1] * k[1] + k[2] * k[2]))
    }

    /// The dipole symbol at every lattice wavevector, computed once per grid.
    pub fn dipole_table(&self) -> &[f64] {
        self.dipole.get_or_init(|| self.symbol_table(crate::kernel::khat))
    }

    /// `h^3 sum f`.
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        debug_assert_eq!(samples.len(), self.len());
        ordered_sum(samples) * self.cell_volume()
    }

    /// 2/3-rule mask: true for modes kept.
    pub fn dealias_mask(&self) -> Vec<bool> {
        let cut = (2.0 / 3.0) * PI / self.spacing;
        self.symbol_table(|k| k.iter().all(|c| c.abs() <= cut))
    }

    fn sign_table(&self, idx: usize) -> f64 {
        let (i1, i2, i3) = self.unravel(idx);
        if (i1 + i2 + i3) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn transform_in_place(&self, data: &mut [C64], forward: bool) {
        let n = self.spec.n;
        let plan = if forward { &self.fwd } else { &self.inv };
        let plane = n * n;
        // axis 1: contiguous lines
        data.par_chunks_mut(plane).for_each_init(
            || vec![C64::default(); plan.get_inplace_scratch_len()],
            |scratch, chunk| plan.process_with_scratch(chunk, scratch),
        );
        // axis 2: transpose each plane
        data.par_chunks_mut(plane).for_each_init(
            || {
                (
                    vec![C64::default(); plane],
                    vec![C64::default(); plan.get_inplace_scratch_len()],
                )
            },
            |(tmp, scratch), chunk| {
                transpose(chunk, tmp, n, n);
                plan.process_with_scratch(tmp, scratch);
                transpose(tmp, chunk, n, n);
            },
        );
        // axis 3: transpose (plane x n) -> (n x plane)
        let mut tmp = vec![C64::default(); data.len()];
        tmp.par_chunks_mut(n).enumerate().for_each(|(j, line)| {
            for (i3, v) in line.iter_mut().enumerate() {
                *v = data[j + plane * i3];
            }
        });
        tmp.par_chunks_mut(plane).for_each_init(
            || vec![C64::default(); plan.get_inplace_scratch_len()],
            |scratch, chunk| plan.process_with_scratch(chunk, scratch),
        );
        data.par_chunks_mut(plane).enumerate().for_each(|(i3, out)| {
            for (j, v) in out.iter_mut().enumerate() {
                *v = tmp[j * n + i3];
            }
        });
    }
}

fn transpose(src: &[C64], dst: &mut [C64], rows: usize, cols: usize) {
    const B: usize = 16;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Sum in fixed-size blocks so the result does not depend on thread count.
pub(crate) fn ordered_sum(values: &[f64]) -> f64 {
    values
        .par_chunks(4096)
        .map(|c| c.iter().sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Complex field sampled in physical space.
#[derive(Clone)]
pub struct Field3D {
    grid: Arc<Grid>,
    values: Vec<C64>,
}

impl fmt::Debug for Field3D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field3D")
            .field("grid", &self.grid.spec)
            .field("l2_norm", &self.norm_sq().sqrt())
            .finish()
    }
}

/// Spectral coefficients of a field, in FFT storage order.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Arc<Grid>,
    values: Vec<C64>,
}

impl Field3D {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![C64::default(); grid.len()],
        }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; 3]) -> C64 + Sync) -> Self {
        Self {
            grid: grid.clone(),
            values: grid.sample(f),
        }
    }

    pub fn from_real_fn(grid: &Arc<Grid>, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        Self::from_fn(grid, |x| C64::new(f(x), 0.0))
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<C64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_values_unchecked(grid: &Arc<Grid>, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }


    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn same_grid(&self, other: &Field3D) -> Result<(), GridError> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid.spec == other.grid.spec {
            Ok(())
        } else {
            Err(GridError::GridMismatch(self.grid.spec, other.grid.spec))
        }
    }

    pub fn map(&self, f: impl Fn(C64) -> C64 + Sync) -> Self {
        Self::from_values_unchecked(&self.grid, self.values.par_iter().map(|&v| f(v)).collect())
    }

    pub fn map_with_point(&self, f: impl Fn([f64; 3], C64) -> C64 + Sync) -> Self {
        let values = self
            .values
            .par_iter()
            .enumerate()
            .map(|(i, &v)| f(self.grid.point(i), v))
            .collect();
        Self::from_values_unchecked(&self.grid, values)
    }

    pub fn zip_map(&self, other: &Field3D, f: impl Fn(C64, C64) -> C64 + Sync) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_values_unchecked(&self.grid, values)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Field3D) -> Self {
        self.zip_map(other, |a, b| a + b * s)
    }

    pub fn abs_sq(&self) -> Vec<f64> {
        self.values.par_iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn from_real(grid: &Arc<Grid>, values: &[f64]) -> Self {
        Self::from_values_unchecked(grid, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    /// `int Re f`.
    pub fn integrate_re(&self) -> f64 {
        self.grid.integrate(&self.real_part())
    }

    /// `int |f|^2`.
    pub fn norm_sq(&self) -> f64 {
        self.grid.integrate(&self.abs_sq())
    }

    /// `Re int conj(self) other`.
    pub fn inner_re(&self, other: &Field3D) -> f64 {
        let prod: Vec<f64> = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(a, b)| (a.conj() * b).re)
            .collect();
        self.grid.integrate(&prod)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest `|f|` on the faces of the box relative to `max |f|`
    /// (0 for the zero field).
    pub fn boundary_amplitude(&self) -> f64 {
        let peak = self.max_abs();
        if peak == 0.0 {
            return 0.0;
        }
        let n = self.grid.n();
        let mut edge: f64 = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let (a, b, c) = self.grid.unravel(i);
            if a == 0 || b == 0 || c == 0 || a == n - 1 || b == n - 1 || c == n - 1 {
                edge = edge.max(v.norm());
            }
        }
        edge / peak
    }

    /// L2 distance to another field, relative to this field's norm.
    pub fn relative_l2_distance(&self, other: &Field3D) -> f64 {
        let diff = self.zip_map(other, |a, b| a - b);
        let base = self.norm_sq();
        if base == 0.0 {
            diff.norm_sq().sqrt()
        } else {
            (diff.norm_sq() / base).sqrt()
        }
    }

    pub fn to_spectrum(&self) -> Spectrum {
        let grid = &self.grid;
        let mut data = self.values.clone();
        grid.transform_in_place(&mut data, true);
        let w = grid.cell_volume();
        data.par_iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v *= w * grid.sign_table(i));
        Spectrum {
            grid: grid.clone(),
            values: data,
        }
    }

    /// Inverse transform of `symbol(k) * F(k)`.
    pub fn apply_multiplier(&self, symbol: impl Fn([f64; 3]) -> C64 + Sync) -> Field3D {
        let mut spec = self.to_spectrum();
        spec.multiply_by(symbol);
        spec.to_field()
    }

    /// Inverse transform of `table[k] * F(k)` for a precomputed symbol table.
    pub fn apply_symbol_table(&self, table: &[C64]) -> Field3D {
        let mut spec = self.to_spectrum();
        spec.values
            .par_iter_mut()
            .zip(table.par_iter())
            .for_each(|(v, s)| *v *= s);
        spec.to_field()
    }

    /// Spectral gradient; the Nyquist mode of each component is zeroed so that
    /// real fields have real derivatives.
    pub fn gradient(&self) -> [Field3D; 3] {
        let spec = self.to_spectrum();
        let grid = &self.grid;
        let kodd = grid.axis_wavenumbers_odd();
        let comp = |axis: usize| {
            let mut s = spec.clone();
            s.values.par_iter_mut().enumerate().for_each(|(i, v)| {
                let (i1, i2, i3) = grid.unravel(i);
                let ka = match axis {
                    0 => kodd[i1],
                    1 => kodd[i2],
                    _ => kodd[i3],
                };
                *v *= C64::new(0.0, ka);
            });
            s.to_field()
        };
        [comp(0), comp(1), comp(2)]
    }

    /// Spectral Laplacian with symbol `-|k|^2`.
    pub fn laplacian(&self) -> Field3D {
        let mut spec = self.to_spectrum();
        spec.scale_by_k_squared(-1.0);
        spec.to_field()
    }

    /// `||grad f||_2^2` computed on the spectral side.
    pub fn gradient_norm_sq(&self) -> f64 {
        self.to_spectrum().weighted_norm_sq()
    }

    /// Spectral translation: returns `f(x - shift)`.
    pub fn translate(&self, shift: [f64; 3]) -> Field3D {
        self.apply_multiplier(|k| {
            let ph = -(k[0] * shift[0] + k[1] * shift[1] + k[2] * shift[2]);
            C64::new(ph.cos(), ph.sin())
        })
    }

    /// Resamples the trigonometric interpolant of `self` onto another grid,
    /// returning `g(x) = f(stretch * x)`. Points with `stretch * x` outside the
    /// source box evaluate to zero.
    pub fn resample(&self, target: &Arc<Grid>, stretch: f64) -> Field3D {
        let src = &self.grid;
        let ns = src.n();
        let nt = target.n();
        let matrix = interpolation_matrix(src, target, stretch);
        // apply along axis 1 then 2 then 3; intermediate shapes change
        // a: (ns, ns, ns) -> (nt, ns, ns)
        let a = &self.values;
        let mut b = vec![C64::default(); nt * ns * ns];
        b.par_chunks_mut(nt).enumerate().for_each(|(line, out)| {
            let inp = &a[line * ns..(line + 1) * ns];
            for (i, o) in out.iter_mut().enumerate() {
                let row = &matrix[i * ns..(i + 1) * ns];
                *o = row.iter().zip(inp).map(|(w, v)| v * *w).sum();
            }
        });
        // b index: i1 + nt*(j2 + ns*j3) -> c index: i1 + nt*(i2 + nt*j3)
        let mut c = vec![C64::default(); nt * nt * ns];
        c.par_chunks_mut(nt * nt).enumerate().for_each(|(j3, plane)| {
            for i2 in 0..nt {
                let row = &matrix[i2 * ns..(i2 + 1) * ns];
                for i1 in 0..nt {
                    let mut acc = C64::default();
                    for (j2, w) in row.iter().enumerate() {
                        if *w != 0.0 {
                            acc += b[i1 + nt * (j2 + ns * j3)] * *w;
                        }
                    }
                    plane[i1 + nt * i2] = acc;
                }
            }
        });
        let mut d = vec![C64::default(); nt * nt * nt];
        d.par_chunks_mut(nt * nt).enumerate().for_each(|(i3, plane)| {
            let row = &matrix[i3 * ns..(i3 + 1) * ns];
            for (j3, w) in row.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let src_plane = &c[j3 * nt * nt..(j3 + 1) * nt * nt];
                for (o, v) in plane.iter_mut().zip(src_plane) {
                    *o += v * *w;
                }
            }
        });
        Field3D::from_values_unchecked(target, d)
    }

    /// `a f(b x)` on the same grid.
    pub fn rescale(&self, amplitude: f64, stretch: f64) -> Field3D {
        let g = self.resample(&self.grid, stretch);
        g.scale(amplitude)
    }

    /// Mass-preserving dilation `s^{3/2} f(s x)`.
    pub fn l2_dilation(&self, s: f64) -> Field3D {
        self.rescale(s.powf(1.5), s)
    }
}

/// Row-major `(nt, ns)` matrix of the 1D periodic interpolation kernel.
fn interpolation_matrix(src: &Grid, target: &Grid, stretch: f64) -> Vec<f64> {
    let ns = src.n();
    let nt = target.n();
    let ls = src.box_length();
    let half = 0.5 * ls;
    let mut m = vec![0.0; nt * ns];
    for (i, &x) in target.axis_coords().iter().enumerate() {
        let y = stretch * x;
        if y < -half - 1e-12 * ls || y > half + 1e-12 * ls {
            continue;
        }
        for (j, &xs) in src.axis_coords().iter().enumerate() {
            m[i * ns + j] = dirichlet_kernel(y - xs, ns, ls);
        }
    }
    m
}

/// Cardinal function of the even-`n` trigonometric interpolant on period `l`,
/// with the Nyquist mode split symmetrically.
fn dirichlet_kernel(d: f64, n: usize, l: f64) -> f64 {
    let theta = 2.0 * PI * d / l;
    let half = n / 2;
    let mut acc = 1.0;
    for m in 1..half {
        acc += 2.0 * (m as f64 * theta).cos();
    }
    acc += (half as f64 * theta).cos();
    acc / n as f64
}

impl Spectrum {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }


    pub fn to_field(&self) -> Field3D {
        let grid = &self.grid;
        let mut data: Vec<C64> = self
            .values
            .par_iter()
            .enumerate()
            .map(|(i, v)| v * grid.sign_table(i))
            .collect();
        grid.transform_in_place(&mut data, false);
        let w = 1.0 / grid.volume();
        data.par_iter_mut().for_each(|v| *v *= w);
        Field3D::from_values_unchecked(grid, data)
    }

    pub fn multiply_by(&mut self, symbol: impl Fn([f64; 3]) -> C64 + Sync) {
        let grid = &self.grid;
        self.values
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v *= symbol(grid.wavevector(i)));
    }

    pub(crate) fn scale_by_k_squared(&mut self, factor: f64) {
        let ksq = self.grid.k_squared_table();
        self.values
            .par_iter_mut()
            .zip(ksq.par_iter())
            .for_each(|(v, k2)| *v *= factor * k2);
    }

    /// Multiplies by a real table in storage order.
    pub fn multiply_by_table(&mut self, table: &[f64]) {
        self.values
            .par_iter_mut()
            .zip(table.par_iter())
            .for_each(|(v, t)| *v *= t);
    }

    /// Zeroes every mode outside the 2/3-rule cube.
    pub fn dealias(&mut self) {
        let mask = self.grid.dealias_mask();
        self.values
            .par_iter_mut()
            .zip(mask.par_iter())
            .for_each(|(v, keep)| {
                if !keep {
                    *v = C64::default();
                }
            });
    }

    /// `L^{-3} sum |F|^2`, equal to `int |f|^2`.
    pub fn norm_sq(&self) -> f64 {
        let s: Vec<f64> = self.values.par_iter().map(|v| v.norm_sqr()).collect();
        ordered_sum(&s) / self.grid.volume()
    }

    /// `L^{-3} sum |k|^2 |F|^2`, equal to `int |grad f|^2`.
    pub fn weighted_norm_sq(&self) -> f64 {
        let ksq = self.grid.k_squared_table();
        let s: Vec<f64> = self
            .values
            .par_iter()
            .zip(ksq.par_iter())
            .map(|(v, k2)| k2 * v.norm_sqr())
            .collect();
        ordered_sum(&s) / self.grid.volume()
    }
}
