//! Dipole-dipole interaction: the Fourier symbol of the kernel, the
//! potential `K * |u|^2`, and classification of the coupling pair.
//!
//! The kernel `(1 - 3 cos^2 theta) / |x|^3` is a principal-value distribution
//! and is never evaluated pointwise; every convolution goes through its
//! bounded symbol. The dipole axis is fixed to `(0, 0, 1)`.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::spectral::{ordered_sum, Field3D, Grid};

/// Lower end of the symbol range, attained in the plane normal to the axis.
pub const KHAT_MIN: f64 = -4.0 * PI / 3.0;
/// Upper end of the symbol range, attained on the dipole axis.
pub const KHAT_MAX: f64 = 8.0 * PI / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Unstable,
    Stable,
    Degenerate,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::Unstable => "unstable",
            Regime::Stable => "stable",
            Regime::Degenerate => "degenerate",
        };
        f.write_str(s)
    }
}

/// Coupling constants of the cubic (`lambda1`) and dipolar (`lambda2`) terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipoleParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub regime: Regime,
}

impl DipoleParams {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        classify_regime(lambda1, lambda2)
    }

    pub fn has_dipole(&self) -> bool {
        self.lambda2 != 0.0
    }

    /// Most negative value of `lambda1 + lambda2 * khat` over the symbol
    /// range, negated. Positive exactly when some direction is focusing.
    pub fn beta(&self) -> f64 {
        (-self.lambda1 - KHAT_MAX * self.lambda2).max(-self.lambda1 - KHAT_MIN * self.lambda2)
    }
}

/// Classifies `(lambda1, lambda2)`.
///
/// With `lambda2 = 0` the pair is unstable exactly when the cubic term is
/// focusing (`lambda1 < 0`).
pub fn classify_regime(lambda1: f64, lambda2: f64) -> DipoleParams {
    let regime = if lambda1 == 0.0 && lambda2 == 0.0 {
        Regime::Degenerate
    } else if (lambda2 > 0.0 && lambda1 - (4.0 * PI / 3.0) * lambda2 < 0.0)
        || (lambda2 < 0.0 && lambda1 + (8.0 * PI / 3.0) * lambda2 < 0.0)
        || (lambda2 == 0.0 && lambda1 < 0.0)
    {
        Regime::Unstable
    } else {
        Regime::Stable
    };
    DipoleParams {
        lambda1,
        lambda2,
        regime,
    }
}

/// `(4 pi / 3) (2 k3^2 - k1^2 - k2^2) / |k|^2`, with value 0 at `k = 0`.
pub fn khat(k: [f64; 3]) -> f64 {
    let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    if k2 == 0.0 {
        return 0.0;
    }
    let v = (4.0 * PI / 3.0) * (2.0 * k[2] * k[2] - k[0] * k[0] - k[1] * k[1]) / k2;
    v.clamp(KHAT_MIN, KHAT_MAX)
}

/// `K * rho` for a real density sampled on `grid`.
pub fn potential_of_density(grid: &std::sync::Arc<Grid>, rho: &[f64]) -> Vec<f64> {
    let field = Field3D::from_real(grid, rho);
    let mut spec = field.to_spectrum();
    spec.multiply_by_table(grid.dipole_table());
    spec.to_field().real_part()
}

/// `Phi = K * |u|^2`, returned as a real field.
pub fn dipolar_potential(u: &Field3D) -> Field3D {
    let phi = potential_of_density(u.grid(), &u.abs_sq());
    Field3D::from_real(u.grid(), &phi)
}

/// `int (K * |u|^2) |u|^2` evaluated in physical space.
pub fn dipolar_energy(u: &Field3D) -> f64 {
    let rho = u.abs_sq();
    let phi = potential_of_density(u.grid(), &rho);
    let prod: Vec<f64> = phi.par_iter().zip(rho.par_iter()).map(|(a, b)| a * b).collect();
    u.grid().integrate(&prod)
}

/// The same energy evaluated on the spectral side as `L^{-3} sum khat |rho^|^2`.
pub fn dipolar_energy_plancherel(u: &Field3D) -> f64 {
    let grid = u.grid();
    let rho = Field3D::from_real(grid, &u.abs_sq());
    let spec = rho.to_spectrum();
    let terms: Vec<f64> = spec
        .values()
        .par_iter()
        .zip(grid.dipole_table().par_iter())
        .map(|(v, k)| k * v.norm_sqr())
        .collect();
    ordered_sum(&terms) / grid.volume()
}

/// `int (K * rho) sigma` for two real densities.
pub fn dipolar_pairing(grid: &std::sync::Arc<Grid>, rho: &[f64], sigma: &[f64]) -> f64 {
    let phi = potential_of_density(grid, rho);
    let prod: Vec<f64> = phi.iter().zip(sigma).map(|(a, b)| a * b).collect();
    grid.integrate(&prod)
}

/// Relative size of the imaginary residue of the potential before it is
/// discarded. Used as a consistency check.
pub fn potential_imaginary_residue(u: &Field3D) -> f64 {
    let rho = Field3D::from_real(u.grid(), &u.abs_sq());
    let mut spec = rho.to_spectrum();
    spec.multiply_by_table(u.grid().dipole_table());
    let phi = spec.to_field();
    let re = phi.values().iter().map(|v| v.re.abs()).fold(0.0, f64::max);
    let im = phi.values().iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if re == 0.0 {
        im
    } else {
        im / re
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_grid;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn symbol_endpoints() {
        assert_relative_eq!(khat([0.0, 0.0, 1.0]), 8.0 * PI / 3.0);
        assert_relative_eq!(khat([1.0, 0.0, 0.0]), -4.0 * PI / 3.0);
        assert_relative_eq!(khat([0.0, 2.5, 0.0]), -4.0 * PI / 3.0);
        assert!(khat([1.0, 1.0, 1.0]).abs() < 1e-15);
        assert_eq!(khat([0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn regimes() {
        assert_eq!(classify_regime(-1.0, 0.0).regime, Regime::Unstable);
        assert_eq!(classify_regime(1.0, 0.0).regime, Regime::Stable);
        assert_eq!(classify_regime(1.0, 1.0).regime, Regime::Unstable);
        assert_eq!(classify_regime(0.0, 0.0).regime, Regime::Degenerate);
        assert_eq!(classify_regime(5.0, 1.0).regime, Regime::Stable);
        assert_eq!(classify_regime(9.0, -1.0).regime, Regime::Stable);
        assert_eq!(classify_regime(8.0, -1.0).regime, Regime::Unstable);
    }

    #[test]
    fn zero_field_has_zero_potential() {
        let g = make_grid(8, 4.0).unwrap();
        let u = Field3D::zeros(&g);
        assert_eq!(dipolar_potential(&u).max_abs(), 0.0);
    }

    #[test]
    fn isotropic_density_has_zero_energy() {
        let g = make_grid(32, 16.0).unwrap();
        let u = Field3D::from_real_fn(&g, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp());
        let q4: f64 = g.integrate(&u.abs_sq().iter().map(|r| r * r).collect::<Vec<_>>());
        assert!(dipolar_energy(&u).abs() / q4 < 1e-10);
    }

    #[test]
    fn physical_and_spectral_forms_agree() {
        let g = make_grid(32, 16.0).unwrap();
        let u = Field3D::from_real_fn(&g, |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1] + 0.5 * x[2] * x[2]) / 2.0).exp());
        let a = dipolar_energy(&u);
        let b = dipolar_energy_plancherel(&u);
        assert!((a - b).abs() <= 1e-10 * a.abs());
        assert!(potential_imaginary_residue(&u) < 1e-12);
    }

    #[test]
    fn pairing_is_symmetric() {
        let g = make_grid(16, 10.0).unwrap();
        let rho = g.sample(|x| (-(x[0] - 1.0).powi(2) - x[1] * x[1] - 2.0 * x[2] * x[2]).exp());
        let sigma = g.sample(|x| (-(x[0] * x[0]) / 2.0 - (x[1] + 0.5).powi(2) - x[2] * x[2]).exp());
        let a = dipolar_pairing(&g, &rho, &sigma);
        let b = dipolar_pairing(&g, &sigma, &rho);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
    }

    #[test]
    fn lattice_range() {
        let g = make_grid(16, 10.0).unwrap();
        let t = g.dipole_table();
        assert!(t.iter().all(|v| (KHAT_MIN..=KHAT_MAX).contains(v)));
    }

    proptest! {
        #[test]
        fn symbol_symmetries(k1 in -5.0f64..5.0, k2 in -5.0f64..5.0, k3 in -5.0f64..5.0, th in 0.0f64..6.3) {
            let v = khat([k1, k2, k3]);
            prop_assert!((KHAT_MIN..=KHAT_MAX).contains(&v));
            prop_assert!((v - khat([-k1, -k2, -k3])).abs() < 1e-14);
            let (c, s) = (th.cos(), th.sin());
            let r = khat([c * k1 - s * k2, s * k1 + c * k2, k3]);
            prop_assert!((v - r).abs() < 1e-12);
        }

        #[test]
        fn unstable_iff_some_direction_focuses(l1 in -10.0f64..10.0, l2 in -3.0f64..3.0) {
            let p = classify_regime(l1, l2);
            if p.regime != Regime::Degenerate {
                prop_assert_eq!(p.regime == Regime::Unstable, p.beta() > 0.0);
            }
        }
    }
}
